"""Periodic unit cell geometry: inclusion shapes, rasterisation, rotations.

The cell is Q = [0,1)^3, discretised by a uniform n x n x n grid of spacing
h = 1/n.  A single inclusion (ball, box or cylinder) sits strictly inside Q;
the matrix is the complement.  Rasterisation is sharp (staircase): a grid
cell belongs to the inclusion iff its center lies inside the shape, and the
same point-membership test assigns edges/faces/nodes by their midpoints.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np


class GeometryError(ValueError):
    """Invalid cell geometry (shape touching the cell boundary, bad parameters)."""


Sampler = Union[float, Callable[[np.ndarray], np.ndarray]]

# pi rotations map any n^3 grid to itself; pi/2 needs equal transverse
# resolutions, which a cubic grid always has.
_VALID_ANGLES = ("pi", "pi/2")


def rotation_matrix(axis: int, angle: str) -> np.ndarray:
    """Rotation by pi or pi/2 about coordinate axis 1, 2 or 3 (right-handed)."""
    if axis not in (1, 2, 3):
        raise GeometryError(f"axis must be 1, 2 or 3, got {axis}")
    if angle not in _VALID_ANGLES:
        raise GeometryError(f"angle must be one of {_VALID_ANGLES}, got {angle!r}")
    k = axis - 1
    i, j = (k + 1) % 3, (k + 2) % 3
    sigma = np.zeros((3, 3))
    sigma[k, k] = 1.0
    if angle == "pi":
        sigma[i, i] = -1.0
        sigma[j, j] = -1.0
    else:
        sigma[j, i] = 1.0
        sigma[i, j] = -1.0
    return sigma


@dataclass(frozen=True)
class Ball:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError(f"ball radius must be positive, got {self.radius}")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=-1)
        return d2 <= self.radius**2

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def rotated(self, sigma: np.ndarray) -> "Ball":
        c = _rotate_about_cell_center(np.asarray(self.center), sigma)
        return Ball(tuple(c), self.radius)


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_widths: tuple[float, float, float]

    def __post_init__(self):
        if any(hw <= 0 for hw in self.half_widths):
            raise GeometryError(f"box half widths must be positive, got {self.half_widths}")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = np.abs(pts - np.asarray(self.center))
        return np.all(d <= np.asarray(self.half_widths), axis=-1)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        c, hw = np.asarray(self.center), np.asarray(self.half_widths)
        return c - hw, c + hw

    def rotated(self, sigma: np.ndarray) -> "Box":
        c = _rotate_about_cell_center(np.asarray(self.center), sigma)
        hw = np.abs(sigma) @ np.asarray(self.half_widths)
        return Box(tuple(c), tuple(hw))


@dataclass(frozen=True)
class Cylinder:
    axis: int  # 1, 2 or 3
    center: tuple[float, float, float]
    radius: float
    half_height: float

    def __post_init__(self):
        if self.axis not in (1, 2, 3):
            raise GeometryError(f"cylinder axis must be 1, 2 or 3, got {self.axis}")
        if self.radius <= 0 or self.half_height <= 0:
            raise GeometryError("cylinder radius and half height must be positive")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        k = self.axis - 1
        rel = pts - np.asarray(self.center)
        axial = np.abs(rel[..., k])
        trans2 = np.sum(rel**2, axis=-1) - rel[..., k] ** 2
        return (axial <= self.half_height) & (trans2 <= self.radius**2)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.axis - 1
        ext = np.full(3, self.radius)
        ext[k] = self.half_height
        c = np.asarray(self.center)
        return c - ext, c + ext

    def rotated(self, sigma: np.ndarray) -> "Cylinder":
        c = _rotate_about_cell_center(np.asarray(self.center), sigma)
        ax = np.zeros(3)
        ax[self.axis - 1] = 1.0
        new_ax = int(np.argmax(np.abs(sigma @ ax))) + 1
        return Cylinder(new_ax, tuple(c), self.radius, self.half_height)


Shape = Union[Ball, Box, Cylinder]


def _rotate_about_cell_center(p: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    c = np.full(3, 0.5)
    return c + sigma @ (p - c)


@dataclass(frozen=True)
class MaterialCell:
    """Unit cell: grid resolution, inclusion shape and permittivity samplers.

    `eps0` samples the inclusion permittivity, `eps1` the matrix one; both
    accept either a positive constant or a callable on point arrays of shape
    (..., 3).  `symmetry_tags` declares rotations (axis, "pi"|"pi/2") that the
    geometry and the samplers are claimed to respect; downstream symmetry
    checks verify the claims on computed tensors.  `smooth_sigma` > 0 blurs
    the 0/1 coefficient masks (in grid cells) for convergence studies only;
    the indicator itself stays sharp.
    """

    n: int
    shape: Optional[Shape]
    eps0: Sampler = 1.0
    eps1: Sampler = 1.0
    symmetry_tags: tuple[tuple[int, str], ...] = ()
    smooth_sigma: float = 0.0

    def __post_init__(self):
        if self.n < 8:
            raise GeometryError(f"resolution must be >= 8, got {self.n}")
        if self.shape is not None:
            lo, hi = self.shape.bbox()
            margin = 2.0 * self.h
            if np.any(lo < margin) or np.any(hi > 1.0 - margin):
                raise GeometryError(
                    "inclusion must keep >= 2 grid cells from the cell boundary; "
                    f"bbox [{lo}, {hi}] at h={self.h}"
                )
        for axis, angle in self.symmetry_tags:
            rotation_matrix(axis, angle)  # validates

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def inside(self, pts: np.ndarray) -> np.ndarray:
        """Point membership in the inclusion (closed shape)."""
        if self.shape is None:
            return np.zeros(pts.shape[:-1], dtype=bool)
        return self.shape.contains(pts)

    def sample_eps0(self, pts: np.ndarray) -> np.ndarray:
        return _sample(self.eps0, pts)

    def sample_eps1(self, pts: np.ndarray) -> np.ndarray:
        return _sample(self.eps1, pts)


def _sample(sampler: Sampler, pts: np.ndarray) -> np.ndarray:
    if callable(sampler):
        vals = np.asarray(sampler(pts), dtype=float)
        vals = np.broadcast_to(vals, pts.shape[:-1]).copy()
    else:
        vals = np.full(pts.shape[:-1], float(sampler))
    if np.any(vals <= 0.0) or not np.all(np.isfinite(vals)):
        raise GeometryError("permittivity sampler must be positive and finite")
    return vals


@dataclass(frozen=True)
class IndicatorField:
    """Cell-centered 0/1 inclusion indicator chi0 and its complement chi1."""

    chi0: np.ndarray
    h: float

    @property
    def chi1(self) -> np.ndarray:
        return 1 - self.chi0

    def volume(self) -> float:
        return float(self.chi0.sum()) * self.h**3


# --- grid point lattices -------------------------------------------------

def node_coords(n: int) -> np.ndarray:
    """(n,n,n,3) array of node positions (i,j,k)*h."""
    h = 1.0 / n
    idx = np.arange(n) * h
    g = np.meshgrid(idx, idx, idx, indexing="ij")
    return np.stack(g, axis=-1)


def cell_centers(n: int) -> np.ndarray:
    return node_coords(n) + 0.5 / n


def edge_midpoints(n: int, comp: int) -> np.ndarray:
    """Midpoints of edges parallel to axis `comp` (0-based)."""
    pts = node_coords(n).copy()
    pts[..., comp] += 0.5 / n
    return pts


def face_midpoints(n: int, comp: int) -> np.ndarray:
    """Midpoints of faces normal to axis `comp` (0-based)."""
    pts = node_coords(n).copy()
    for a in range(3):
        if a != comp:
            pts[..., a] += 0.5 / n
    return pts


# --- rasterisation -------------------------------------------------------

def build_indicator(cell: MaterialCell) -> IndicatorField:
    """Rasterise the inclusion onto cell centers (deterministic, sharp)."""
    inside = cell.inside(cell_centers(cell.n))
    return IndicatorField(chi0=inside.astype(np.uint8), h=cell.h)


# Edge/face/node membership is derived from the cell indicator: the midpoint
# of a face sits on the boundary between its two neighbouring cells, an edge
# midpoint between four cells, a node between eight.  A midpoint counts as
# belonging to the inclusion when it lies in the closure of the chi0 voxel
# union, i.e. when any adjacent cell is an inclusion cell.  This makes every
# solver see the same staircase region.

def _any_adjacent(chi0: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    out = chi0.astype(bool)
    for axis in axes:
        out = out | np.roll(out, 1, axis=axis)
    return out


def _all_adjacent(chi0: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    out = chi0.astype(bool)
    for axis in axes:
        out = out & np.roll(out, 1, axis=axis)
    return out


def face_inside_mask(cell: MaterialCell) -> np.ndarray:
    """(3,n,n,n) bool: face belongs to the closed inclusion region."""
    chi0 = build_indicator(cell).chi0
    return np.stack([_any_adjacent(chi0, (a,)) for a in range(3)])


def edge_inside_mask(cell: MaterialCell) -> np.ndarray:
    """(3,n,n,n) bool: edge belongs to the closed inclusion region."""
    chi0 = build_indicator(cell).chi0
    return np.stack(
        [_any_adjacent(chi0, tuple(b for b in range(3) if b != a)) for a in range(3)]
    )


def node_inside_mask(cell: MaterialCell) -> np.ndarray:
    """(n,n,n) bool: node belongs to the closed inclusion region."""
    return _any_adjacent(build_indicator(cell).chi0, (0, 1, 2))


def interior_edge_mask(cell: MaterialCell) -> np.ndarray:
    """(3,n,n,n) bool: edge strictly interior to the inclusion region.

    All four cells around the edge are inclusion cells; fields supported on
    these edges vanish on the region boundary, the discrete analogue of a
    zero trace.
    """
    chi0 = build_indicator(cell).chi0
    return np.stack(
        [_all_adjacent(chi0, tuple(b for b in range(3) if b != a)) for a in range(3)]
    )


def rotate_cell(cell: MaterialCell, axis: int, angle: str) -> MaterialCell:
    """Conjugate shape and samplers by the rotation sigma about the cell center.

    The returned cell satisfies indicator'(y) = indicator(sigma^{-1} y) and
    eps'(y) = eps(sigma^{-1} y), so sigma Q = Q is respected exactly on the grid.
    """
    sigma = rotation_matrix(axis, angle)
    new_shape = None if cell.shape is None else cell.shape.rotated(sigma)
    return dataclasses.replace(
        cell,
        shape=new_shape,
        eps0=_conjugate_sampler(cell.eps0, sigma),
        eps1=_conjugate_sampler(cell.eps1, sigma),
    )


def _conjugate_sampler(sampler: Sampler, sigma: np.ndarray) -> Sampler:
    if not callable(sampler):
        return sampler
    sigma_inv = sigma.T  # rotations are orthogonal

    def rotated(pts: np.ndarray) -> np.ndarray:
        c = np.full(3, 0.5)
        back = c + (pts - c) @ sigma_inv.T
        return sampler(back)

    return rotated


def declared_rotations(cell: MaterialCell) -> list[np.ndarray]:
    """Rotation matrices for every declared symmetry tag."""
    return [rotation_matrix(axis, angle) for axis, angle in cell.symmetry_tags]
