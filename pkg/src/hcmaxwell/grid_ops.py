"""Discrete periodic vector calculus on a staggered grid, plus FFT Green tools.

Layout (Yee): scalars live on nodes (i,j,k)*h or cell centers; the component
`a` of an edge vector lives on edges parallel to axis a (midpoint offset by
h/2 along a); the component `a` of a face vector lives on faces normal to
axis a (offset by h/2 along the two transverse axes).  Arrays are (n,n,n)
for scalars and (3,n,n,n) for vectors, indexed periodically.

With forward differences D and backward differences Db, the operators

    grad_node = D,   curl_edge = D x .,   div_face = D . ,
    div_edge  = Db . ,   curl_face = Db x .

satisfy div_face(curl_edge u) = 0, curl_edge(grad_node p) = 0 and
<curl_edge u, v> = <u, curl_face v> exactly, and div_edge(grad_node p) is the
standard 7-point Laplacian.

The periodic Green function is defined through the *discrete* Laplacian
symbol lam(m) = (4/h^2) sum_a sin^2(pi m_a / n), so -Lap_h(G*f) = f - mean(f)
holds to machine precision and the induced divergence-free projection is
exactly idempotent.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

NODE = "scalar@nodes"
CELL = "scalar@cells"
EDGE = "vector@edges"
FACE = "vector@faces"


class LayoutError(TypeError):
    """Operation applied to a field of the wrong staggered layout."""


@dataclass(frozen=True)
class StaggeredField:
    """A scalar or vector field on the periodic staggered grid."""

    kind: str
    data: np.ndarray
    h: float

    def __post_init__(self):
        if self.kind in (NODE, CELL):
            if self.data.ndim != 3:
                raise LayoutError(f"{self.kind} expects (n,n,n) data")
        elif self.kind in (EDGE, FACE):
            if self.data.ndim != 4 or self.data.shape[0] != 3:
                raise LayoutError(f"{self.kind} expects (3,n,n,n) data")
        else:
            raise LayoutError(f"unknown kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.data.shape[-1]


def _expect(f: StaggeredField, kind: str, op: str) -> np.ndarray:
    if not isinstance(f, StaggeredField) or f.kind != kind:
        got = f.kind if isinstance(f, StaggeredField) else type(f).__name__
        raise LayoutError(f"{op} expects {kind}, got {got}")
    return f.data


# --- raw kernels (plain arrays) -------------------------------------------

def _d_fwd(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(a, -1, axis=axis) - a) / h


def _d_bwd(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (a - np.roll(a, 1, axis=axis)) / h


def _curl(u: np.ndarray, h: float, diff) -> np.ndarray:
    out = np.empty_like(u)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        out[a] = diff(u[c], b, h) - diff(u[b], c, h)
    return out


def curl_fwd(u: np.ndarray, h: float) -> np.ndarray:
    """Edge vector -> face vector (forward differences)."""
    return _curl(u, h, _d_fwd)


def curl_bwd(v: np.ndarray, h: float) -> np.ndarray:
    """Face vector -> edge vector (backward differences; adjoint of curl_fwd)."""
    return _curl(v, h, _d_bwd)


def div_fwd(v: np.ndarray, h: float) -> np.ndarray:
    """Face vector -> cell scalar."""
    return sum(_d_fwd(v[a], a, h) for a in range(3))


def div_bwd(u: np.ndarray, h: float) -> np.ndarray:
    """Edge vector -> node scalar."""
    return sum(_d_bwd(u[a], a, h) for a in range(3))


def grad_fwd(p: np.ndarray, h: float) -> np.ndarray:
    """Node scalar -> edge vector."""
    return np.stack([_d_fwd(p, a, h) for a in range(3)])


# --- public staggered operations ------------------------------------------

def curl_edge(u: StaggeredField) -> StaggeredField:
    data = _expect(u, EDGE, "curl_edge")
    return StaggeredField(FACE, curl_fwd(data, u.h), u.h)


def curl_face(v: StaggeredField) -> StaggeredField:
    data = _expect(v, FACE, "curl_face")
    return StaggeredField(EDGE, curl_bwd(data, v.h), v.h)


def div_face(v: StaggeredField) -> StaggeredField:
    data = _expect(v, FACE, "div_face")
    return StaggeredField(CELL, div_fwd(data, v.h), v.h)


def div_edge(u: StaggeredField) -> StaggeredField:
    data = _expect(u, EDGE, "div_edge")
    return StaggeredField(NODE, div_bwd(data, u.h), u.h)


def grad_node(p: StaggeredField) -> StaggeredField:
    data = _expect(p, NODE, "grad_node")
    return StaggeredField(EDGE, grad_fwd(data, p.h), p.h)


def inner(f: StaggeredField, g: StaggeredField) -> complex:
    """L2 inner product h^3 * sum(conj(f) g); real inputs give real output."""
    if f.kind != g.kind:
        raise LayoutError(f"inner product between {f.kind} and {g.kind}")
    val = np.vdot(f.data, g.data) * f.h**3
    return val.real if (not np.iscomplexobj(f.data) and not np.iscomplexobj(g.data)) else val


# --- spectral Green function ----------------------------------------------

@dataclass(frozen=True)
class SpectralGreen:
    """Symbol table of the zero-mean periodic Green function.

    ghat(m) = 1/lam(m) with the discrete Laplacian eigenvalue
    lam(m) = (4/h^2) sum_a sin^2(pi m_a / n); ghat(0) = 0.
    """

    n: int
    h: float
    lam: np.ndarray
    ghat: np.ndarray

    @classmethod
    def build(cls, n: int) -> "SpectralGreen":
        h = 1.0 / n
        m = np.fft.fftfreq(n, d=1.0 / n)  # integer frequencies
        s = (4.0 / h**2) * np.sin(np.pi * m / n) ** 2
        lam = s[:, None, None] + s[None, :, None] + s[None, None, :]
        ghat = np.zeros_like(lam)
        nz = lam > 0
        ghat[nz] = 1.0 / lam[nz]
        return cls(n=n, h=h, lam=lam, ghat=ghat)


_green_cache: dict[int, SpectralGreen] = {}


def spectral_green(n: int) -> SpectralGreen:
    if n not in _green_cache:
        _green_cache[n] = SpectralGreen.build(n)
    return _green_cache[n]


def green_apply(f: np.ndarray, n: int) -> np.ndarray:
    """G * f on a scalar array; output has exactly zero mean.

    Accepts (n,n,n) or a trailing-axis batch (n,n,n,k).
    """
    ghat = spectral_green(n).ghat
    if f.ndim == 4:
        ghat = ghat[..., None]
    out = np.fft.ifftn(np.fft.fftn(f, axes=(0, 1, 2)) * ghat, axes=(0, 1, 2))
    return out.real if not np.iscomplexobj(f) else out


def green_convolve(f: StaggeredField) -> StaggeredField:
    if f.kind not in (NODE, CELL):
        raise LayoutError(f"green_convolve expects a scalar field, got {f.kind}")
    return StaggeredField(f.kind, green_apply(f.data, f.n), f.h)


def hessian_green_raw(w: np.ndarray, h: float) -> np.ndarray:
    """grad(G * div w) for an edge vector array (batched trailing axis allowed)."""
    n = w.shape[1]
    return grad_fwd(green_apply(div_bwd(w, h), n), h)


def hessian_green_apply(w: StaggeredField) -> StaggeredField:
    data = _expect(w, EDGE, "hessian_green_apply")
    return StaggeredField(EDGE, hessian_green_raw(data, w.h), w.h)


def leray_raw(w: np.ndarray, h: float) -> np.ndarray:
    """w + grad(G * div w): the divergence-free part of an edge vector array.

    Exactly idempotent and annihilates discrete gradients; keeps the mean.
    """
    return w + hessian_green_raw(w, h)


def divergence_free_part(w: StaggeredField) -> StaggeredField:
    data = _expect(w, EDGE, "divergence_free_part")
    return StaggeredField(EDGE, leray_raw(data, w.h), w.h)


def constant_edge_field(vec, n: int, h: float, dtype=float) -> np.ndarray:
    out = np.zeros((3, n, n, n), dtype=dtype)
    for a in range(3):
        out[a] = vec[a]
    return out
