"""Degenerate cell problems: the curl corrector, the stiff scalar dual, and
the effective tensors they define.

The effective curl-curl tensor is assembled from minimisers of

    F_xi(U) = integral over the matrix of eps1^{-1} |curl U + xi|^2

over periodic edge fields U; its value at the minimiser is the quadratic form
of the tensor and the flux integral gives the columns.  The dual scalar
problem constrains the potential to be affine (-xi . y + c) on the inclusion
and minimises the eps1-weighted Dirichlet energy over the matrix; the two
tensors are mutual inverses in the continuum, which the `product_residual`
diagnostic measures on the grid.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import grid_ops as gops
from .geometry import (
    MaterialCell,
    declared_rotations,
    edge_midpoints,
    edge_inside_mask,
    face_midpoints,
    face_inside_mask,
    node_coords,
    node_inside_mask,
)
from .solvers import SolveInfo, make_curlcurl_preconditioner, make_laplace_preconditioner, pcg


@dataclass(frozen=True)
class CorrectorColumn:
    xi: np.ndarray
    n_field: np.ndarray          # (3,n,n,n) edge vector, gauge-dependent
    objective: float             # F_xi at the minimiser = quadratic form value
    flux: np.ndarray             # (3,) matrix-weighted flux integral
    info: SolveInfo


@dataclass(frozen=True)
class CorrectorN:
    """Corrector columns for xi = e1, e2, e3 with gauge metadata."""

    columns: tuple[CorrectorColumn, CorrectorColumn, CorrectorColumn]
    div_penalty: float
    n: int

    def field(self, r: int) -> np.ndarray:
        return self.columns[r].n_field


@dataclass(frozen=True)
class EffectiveTensor:
    A: np.ndarray                 # symmetrised curl-curl tensor
    stiff: Optional[np.ndarray]   # scalar stiff-inclusion tensor (or None)
    residuals: dict = field(default_factory=dict)

    def validate(self, sym_tol: float = 1e-10):
        scale = np.linalg.norm(self.A)
        if np.linalg.norm(self.A - self.A.T) > sym_tol * scale:
            raise ValueError("effective tensor lost symmetry")
        if np.any(np.linalg.eigvalsh(self.A) <= 0):
            raise ValueError("effective tensor is not positive definite")

    @property
    def product_residual(self) -> float:
        return self.residuals.get("product_residual", float("nan"))


def _smooth_mask(mask: np.ndarray, sigma_cells: float) -> np.ndarray:
    """Periodic Gaussian blur of a 0/1 array, sigma in grid cells."""
    if sigma_cells <= 0:
        return mask
    n = mask.shape[-1]
    m = np.fft.fftfreq(n, d=1.0 / n)
    k2 = m[:, None, None] ** 2 + m[None, :, None] ** 2 + m[None, None, :] ** 2
    kernel = np.exp(-2.0 * (np.pi * sigma_cells / n) ** 2 * k2)
    return np.fft.ifftn(np.fft.fftn(mask) * kernel).real


def matrix_face_weights(cell: MaterialCell) -> np.ndarray:
    """chi1 * eps1^{-1} sampled at face midpoints, shape (3,n,n,n)."""
    inside = face_inside_mask(cell)
    w = np.empty((3, cell.n, cell.n, cell.n))
    for a in range(3):
        chi1 = _smooth_mask(1.0 - inside[a].astype(float), cell.smooth_sigma)
        w[a] = chi1 / cell.sample_eps1(face_midpoints(cell.n, a))
    return w


def matrix_edge_weights(cell: MaterialCell) -> np.ndarray:
    """chi1 * eps1 sampled at edge midpoints, shape (3,n,n,n)."""
    inside = edge_inside_mask(cell)
    w = np.empty((3, cell.n, cell.n, cell.n))
    for a in range(3):
        chi1 = _smooth_mask(1.0 - inside[a].astype(float), cell.smooth_sigma)
        w[a] = chi1 * cell.sample_eps1(edge_midpoints(cell.n, a))
    return w


def _mean_free(v: np.ndarray) -> np.ndarray:
    return v - v.mean(axis=(1, 2, 3), keepdims=True)


def solve_corrector(
    cell: MaterialCell,
    xi,
    tol: float = 1e-10,
    maxiter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> CorrectorColumn:
    """Minimise F_xi by gauge-penalised CG on the curl-curl normal equations.

    The divergence penalty (weight = mean matrix inverse permittivity) and the
    mean projection make the system definite transverse to the gauge space;
    curl N on matrix faces and the objective value are gauge-independent.
    """
    n, h = cell.n, cell.h
    xi = np.asarray(xi, dtype=float)
    w = matrix_face_weights(cell)
    n_matrix_faces = float(np.count_nonzero(w))
    gamma = float(w.sum() / n_matrix_faces) if n_matrix_faces else 1.0
    maxiter = maxiter if maxiter is not None else 10 * n**3

    xi_faces = gops.constant_edge_field(xi, n, h)

    def apply_op(u):
        out = gops.curl_bwd(w * gops.curl_fwd(u, h), h)
        out -= gamma * gops.grad_fwd(gops.div_bwd(u, h), h)
        return out

    rhs = -gops.curl_bwd(w * xi_faces, h)
    precond = make_curlcurl_preconditioner(n, c_curl=gamma, c_div=gamma)
    n_field, info = pcg(
        apply_op, rhs, x0=x0, precond=precond, project=_mean_free, tol=tol, maxiter=maxiter
    )

    total = w * (gops.curl_fwd(n_field, h) + xi_faces)
    objective = float(np.sum(total * (gops.curl_fwd(n_field, h) + xi_faces)) * h**3)
    flux = total.sum(axis=(1, 2, 3)) * h**3
    return CorrectorColumn(xi=xi, n_field=n_field, objective=objective, flux=flux, info=info)


def solve_corrector_columns(
    cell: MaterialCell, tol: float = 1e-10, threads: int = 1
) -> CorrectorN:
    w = matrix_face_weights(cell)
    nm = float(np.count_nonzero(w))
    gamma = float(w.sum() / nm) if nm else 1.0
    basis = [np.eye(3)[j] for j in range(3)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(lambda xi: solve_corrector(cell, xi, tol=tol), basis))
    else:
        cols = [solve_corrector(cell, xi, tol=tol) for xi in basis]
    return CorrectorN(columns=tuple(cols), div_penalty=gamma, n=cell.n)


def assemble_A_hom(
    cell: MaterialCell,
    tol: float = 1e-10,
    threads: int = 1,
    corrector: Optional[CorrectorN] = None,
    form_tol: float = 1e-8,
) -> tuple[EffectiveTensor, CorrectorN]:
    """Assemble the effective curl-curl tensor from the three corrector solves."""
    corr = corrector if corrector is not None else solve_corrector_columns(cell, tol, threads)
    a_raw = np.column_stack([col.flux for col in corr.columns])
    asym = np.linalg.norm(a_raw - a_raw.T)
    a_sym = 0.5 * (a_raw + a_raw.T)
    scale = np.linalg.norm(a_sym)
    if asym > 1e-6 * scale:
        raise ValueError(
            f"pre-symmetrisation asymmetry {asym:.3e} exceeds 1e-6 of |A| = {scale:.3e}"
        )
    for j, col in enumerate(corr.columns):
        if abs(col.objective - a_raw[j, j]) > form_tol * max(1.0, abs(a_raw[j, j])):
            raise ValueError(
                f"quadratic form / flux mismatch on column {j}: "
                f"{col.objective} vs {a_raw[j, j]}"
            )
    residuals = {
        "asymmetry": float(asym),
        "asymmetry_rel": float(asym / scale) if scale else 0.0,
        "cg_iterations": [col.info.iterations for col in corr.columns],
    }
    tensor = EffectiveTensor(A=a_sym, stiff=None, residuals=residuals)
    tensor.validate()
    return tensor, corr


@dataclass(frozen=True)
class StiffSolution:
    xi: np.ndarray
    u: np.ndarray          # (n,n,n) node scalar, affine on the inclusion
    value: float           # quadratic form of the stiff tensor
    info: SolveInfo


def solve_stiff_scalar(
    cell: MaterialCell, xi, tol: float = 1e-10, maxiter: Optional[int] = None
) -> StiffSolution:
    """Scalar stiff-inclusion problem with the affine constraint eliminated.

    Inclusion-interior nodes are slaved to -xi . y + c with a single free
    constant c; CG runs on the reduced (free nodes + c) unknowns.
    """
    n, h = cell.n, cell.h
    xi = np.asarray(xi, dtype=float)
    maxiter = maxiter if maxiter is not None else 10 * n**3
    w = matrix_edge_weights(cell)
    constrained = node_inside_mask(cell)
    free = ~constrained
    has_c = bool(constrained.any())
    coords = node_coords(n)
    u_part = np.where(constrained, -(coords @ xi), 0.0)

    nfree = int(free.sum())
    ndof = nfree + (1 if has_c else 0)

    def embed(x):
        u = np.zeros((n, n, n))
        u[free] = x[:nfree]
        if has_c:
            u[constrained] = x[nfree]
        return u

    def reduce_(g):
        out = np.empty(ndof)
        out[:nfree] = g[free]
        if has_c:
            out[nfree] = g[constrained].sum()
        return out

    def lap_w(u):
        return -gops.div_bwd(w * gops.grad_fwd(u, h), h)

    def apply_op(x):
        return reduce_(lap_w(embed(x)))

    xi_edges = gops.constant_edge_field(xi, n, h)
    b = reduce_(gops.div_bwd(w * (gops.grad_fwd(u_part, h) + xi_edges), h))

    kvec = np.ones(ndof)
    kvec /= np.linalg.norm(kvec)

    def project(v):
        return v - kvec * np.dot(kvec, v)

    lap_inv = make_laplace_preconditioner(n)

    def precond(v):
        return reduce_(lap_inv(embed(v)))

    x, info = pcg(apply_op, b, precond=precond, project=project, tol=tol, maxiter=maxiter)
    u = u_part + embed(x)
    g = gops.grad_fwd(u, h) + xi_edges
    value = float(np.sum(w * g * g) * h**3)
    return StiffSolution(xi=xi, u=u, value=value, info=info)


def assemble_stiff_tensor(
    cell: MaterialCell, tol: float = 1e-10, threads: int = 1
) -> tuple[np.ndarray, list[SolveInfo]]:
    """Full stiff tensor via the bilinear form of the three minimisers."""
    n, h = cell.n, cell.h
    w = matrix_edge_weights(cell)
    basis = [np.eye(3)[j] for j in range(3)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(lambda xi: solve_stiff_scalar(cell, xi, tol=tol), basis))
    else:
        sols = [solve_stiff_scalar(cell, xi, tol=tol) for xi in basis]
    grads = [
        gops.grad_fwd(s.u, h) + gops.constant_edge_field(s.xi, n, h) for s in sols
    ]
    stiff = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            stiff[i, j] = stiff[j, i] = float(np.sum(w * grads[i] * grads[j]) * h**3)
    return stiff, [s.info for s in sols]


def effective_tensor(cell: MaterialCell, tol: float = 1e-10, threads: int = 1) -> EffectiveTensor:
    """Both tensors plus the duality diagnostic |A . stiff - I|_F."""
    tensor, corr = assemble_A_hom(cell, tol=tol, threads=threads)
    stiff, stiff_infos = assemble_stiff_tensor(cell, tol=tol, threads=threads)
    residuals = dict(tensor.residuals)
    residuals["product_residual"] = float(np.linalg.norm(tensor.A @ stiff - np.eye(3)))
    residuals["stiff_cg_iterations"] = [s.iterations for s in stiff_infos]
    out = EffectiveTensor(A=tensor.A, stiff=stiff, residuals=residuals)
    out.validate()
    return out


# --- symmetry checks -------------------------------------------------------

@dataclass(frozen=True)
class SymmetryReport:
    entries: list
    tol: float

    @property
    def ok(self) -> bool:
        return all(e["ok"] for e in self.entries)


def pattern_violation(mat: np.ndarray, axis: int, angle: str) -> float:
    """Largest entry violating the zero/equality pattern a rotation implies.

    A pi rotation about axis k zeroes the off-diagonal entries of row/column
    k; pi/2 additionally equates the two transverse diagonal entries.
    """
    k = axis - 1
    others = [a for a in range(3) if a != k]
    viol = max(abs(mat[k, l]) for l in others)
    viol = max(viol, max(abs(mat[l, k]) for l in others))
    if angle == "pi/2":
        i, j = others
        viol = max(viol, abs(mat[i, i] - mat[j, j]))
    return float(viol)


def check_matrix_symmetry(mat: np.ndarray, cell: MaterialCell, tol: float = 1e-6) -> SymmetryReport:
    scale = max(np.linalg.norm(mat), np.finfo(float).tiny)
    entries = []
    for (axis, angle), sigma in zip(cell.symmetry_tags, declared_rotations(cell)):
        conj = np.linalg.norm(mat - sigma.T @ mat @ sigma) / scale
        pat = pattern_violation(mat, axis, angle) / scale
        entries.append(
            {
                "axis": axis,
                "angle": angle,
                "conjugation_residual": float(conj),
                "pattern_violation": float(pat),
                "ok": bool(conj <= tol and pat <= tol),
            }
        )
    return SymmetryReport(entries=entries, tol=tol)


def check_symmetry(tensor: EffectiveTensor, cell: MaterialCell, tol: float = 1e-6) -> SymmetryReport:
    return check_matrix_symmetry(tensor.A, cell, tol)
