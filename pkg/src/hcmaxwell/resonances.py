"""Inclusion resonances: the non-local eigenproblem on the inclusion.

Fields phi live on edges strictly interior to the inclusion region (zero
trace).  The stiffness side is curl eps0^{-1} curl; the mass side is the
non-local kernel I + grad(G * div .), i.e. the divergence-free projection.
Both operators share the kernel spanned by gradients of node potentials
supported inside the inclusion (the zero-frequency space), which is deflated
explicitly; the remaining pencil is definite and yields eigenvalues

    0 < alpha_1 <= alpha_2 <= ...

with mass-orthonormal eigenfields.  The induced divergence-free fields
r_k = phi_k + grad(G * div phi_k) are unit L2 vectors on the whole cell, and
their cell means (the moments) drive the dispersion matrix downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, lobpcg, splu

from . import grid_ops as gops
from .geometry import MaterialCell, face_midpoints, interior_edge_mask
from .solvers import SolverError, orthonormal_columns


class EmptyInclusionError(ValueError):
    """The cell has no inclusion edges to carry resonance fields."""


@dataclass
class InclusionOperators:
    """Stiffness/mass pair restricted to inclusion-interior edge DOFs."""

    cell: MaterialCell
    sel: np.ndarray             # flat indices into (3,n,n,n) of interior edges
    eps0_inv_face: np.ndarray   # (3,n,n,n) inverse inclusion permittivity
    grad_basis: np.ndarray      # orthonormal columns spanning the gradient kernel

    @property
    def n(self) -> int:
        return self.cell.n

    @property
    def h(self) -> float:
        return self.cell.h

    @property
    def sdim(self) -> int:
        return self.sel.size

    def extend(self, x: np.ndarray) -> np.ndarray:
        """S coefficients -> full edge array; batches allowed as (sdim, k)."""
        n = self.n
        if x.ndim == 1:
            full = np.zeros(3 * n**3, dtype=x.dtype)
            full[self.sel] = x
            return full.reshape(3, n, n, n)
        full = np.zeros((3 * n**3, x.shape[1]), dtype=x.dtype)
        full[self.sel] = x
        return full.reshape(3, n, n, n, x.shape[1])

    def restrict(self, u: np.ndarray) -> np.ndarray:
        n = self.n
        if u.ndim == 4:
            return u.reshape(3 * n**3)[self.sel]
        return u.reshape(3 * n**3, u.shape[-1])[self.sel]

    def apply_A(self, x: np.ndarray) -> np.ndarray:
        h = self.h
        u = self.extend(x)
        c = gops.curl_fwd(u, h)
        c *= self.eps0_inv_face if u.ndim == 4 else self.eps0_inv_face[..., None]
        return self.restrict(gops.curl_bwd(c, h))

    def apply_B(self, x: np.ndarray) -> np.ndarray:
        return self.restrict(gops.leray_raw(self.extend(x), self.h))

    def project_out_gradients(self, x: np.ndarray) -> np.ndarray:
        q = self.grad_basis
        if q.shape[1] == 0:
            return x
        return x - q @ (q.T @ x)

    def dense_A(self, batch: int = 128) -> np.ndarray:
        return _dense_from_apply(self.apply_A, self.sdim, batch)

    def dense_B(self, batch: int = 128) -> np.ndarray:
        return _dense_from_apply(self.apply_B, self.sdim, batch)

    def sparse_A(self) -> sp.csc_matrix:
        """Assembled sparse stiffness on the S space (for preconditioning)."""
        n, h = self.n, self.h
        curl = _sparse_curl_fwd(n, h)
        w = sp.diags(self.eps0_inv_face.ravel())
        sel_mat = sp.eye(3 * n**3, format="csr")[:, self.sel]
        a = sel_mat.T @ (curl.T @ w @ curl) @ sel_mat
        return a.tocsc()

def _dense_from_apply(apply_fn, sdim: int, batch: int) -> np.ndarray:
    out = np.empty((sdim, sdim))
    eye = np.eye(sdim)
    for lo in range(0, sdim, batch):
        hi = min(lo + batch, sdim)
        out[:, lo:hi] = apply_fn(eye[:, lo:hi])
    return 0.5 * (out + out.T)


def _sparse_curl_fwd(n: int, h: float) -> sp.csr_matrix:
    """Global sparse matrix of the edge->face curl."""
    size = n**3
    idx = np.arange(size).reshape(n, n, n)

    def shifted(axis):
        return np.roll(idx, -1, axis=axis).ravel()

    rows, cols, vals = [], [], []
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        face_rows = a * size + idx.ravel()
        # + D_b u_c
        rows.append(face_rows); cols.append(c * size + shifted(b)); vals.append(np.full(size, 1 / h))
        rows.append(face_rows); cols.append(c * size + idx.ravel()); vals.append(np.full(size, -1 / h))
        # - D_c u_b
        rows.append(face_rows); cols.append(b * size + shifted(c)); vals.append(np.full(size, -1 / h))
        rows.append(face_rows); cols.append(b * size + idx.ravel()); vals.append(np.full(size, 1 / h))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * size, 3 * size),
    )


def _gradient_basis(sel_mask: np.ndarray, n: int, h: float) -> np.ndarray:
    """Orthonormal basis of {grad p : p supported on fully-interior nodes}.

    A node is fully interior when all six incident edges are selected, so
    gradients of its indicator stay inside the S space.
    """
    active = sel_mask[0] & np.roll(sel_mask[0], 1, axis=0)
    active &= sel_mask[1] & np.roll(sel_mask[1], 1, axis=1)
    active &= sel_mask[2] & np.roll(sel_mask[2], 1, axis=2)
    nodes = np.flatnonzero(active.ravel())
    sel = np.flatnonzero(sel_mask.ravel())
    if nodes.size == 0:
        return np.zeros((sel.size, 0))
    size = n**3
    pos = np.full(3 * size, -1, dtype=np.int64)
    pos[sel] = np.arange(sel.size)
    ii, jj, kk = np.unravel_index(nodes, (n, n, n))
    rows, cols, vals = [], [], []
    for a in range(3):
        coords = [ii.copy(), jj.copy(), kk.copy()]
        minus = a * size + np.ravel_multi_index(coords, (n, n, n))  # edge at the node
        coords[a] = (coords[a] - 1) % n
        plus = a * size + np.ravel_multi_index(coords, (n, n, n))   # edge behind the node
        for flat, val in ((plus, 1.0 / h), (minus, -1.0 / h)):
            rows.append(pos[flat])
            cols.append(np.arange(nodes.size))
            vals.append(np.full(nodes.size, val))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    if np.any(rows < 0):
        raise AssertionError("gradient basis touched an edge outside the S space")
    dense = np.zeros((sel.size, nodes.size))
    dense[rows, cols] = vals
    return orthonormal_columns(dense)


def assemble_operators(cell: MaterialCell) -> InclusionOperators:
    """Operator pair of the non-local inclusion eigenproblem."""
    mask = interior_edge_mask(cell)
    sel = np.flatnonzero(mask.ravel())
    if sel.size == 0:
        raise EmptyInclusionError("inclusion has no interior edges at this resolution")
    eps0_inv = np.stack(
        [1.0 / cell.sample_eps0(face_midpoints(cell.n, a)) for a in range(3)]
    )
    basis = _gradient_basis(mask, cell.n, cell.h)
    return InclusionOperators(cell=cell, sel=sel, eps0_inv_face=eps0_inv, grad_basis=basis)


@dataclass
class ResonanceSpectrum:
    alphas: np.ndarray             # (K,) sorted ascending, all > 0
    coeffs: np.ndarray             # (sdim, K) S-space eigenvectors, B-orthonormal
    moments: np.ndarray            # (K, 3) inclusion integrals of phi_k
    zero_mean_flags: np.ndarray    # (K,) bool
    clusters: list                 # index groups of degenerate alphas
    alpha_gate: float              # first eigenvalue beyond the kept set
    ops: InclusionOperators
    zero_mean_tol: float = 1e-8

    @property
    def count(self) -> int:
        return self.alphas.size

    def phi_field(self, k: int) -> np.ndarray:
        return self.ops.extend(self.coeffs[:, k])

    def r_field(self, k: int) -> np.ndarray:
        return gops.leray_raw(self.phi_field(k), self.ops.h)

    def cluster_moment_matrices(self) -> list[np.ndarray]:
        return [
            sum(np.outer(self.moments[k], self.moments[k]) for k in group)
            for group in self.clusters
        ]


def _cluster_indices(alphas: np.ndarray, rel_gap: float = 1e-6) -> list[list[int]]:
    clusters: list[list[int]] = []
    for k, a in enumerate(alphas):
        if clusters and abs(a - alphas[clusters[-1][-1]]) <= rel_gap * max(abs(a), 1e-300):
            clusters[-1].append(k)
        else:
            clusters.append([k])
    return clusters


def _dense_eigenpairs(ops: InclusionOperators, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference path: full generalized solve with the kernel swapped to zero."""
    a = ops.dense_A()
    b = ops.dense_B()
    q = ops.grad_basis
    b_reg = b + q @ q.T
    g = q.shape[1]
    want = g + count
    if ops.sdim > 2000 and want < ops.sdim // 2:
        vals, vecs = scipy.linalg.eigh(a, b_reg, subset_by_index=[0, want - 1])
    else:
        vals, vecs = scipy.linalg.eigh(a, b_reg)
    # the g kernel modes sit at zero; everything after is the physical spectrum
    keep = slice(g, g + count)
    return vals[keep], vecs[:, keep]


def _lobpcg_eigenpairs(
    ops: InclusionOperators,
    count: int,
    tol: float,
    maxiter: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    sdim = ops.sdim
    avail = sdim - ops.grad_basis.shape[1]
    block = min(avail, count + 2)
    if block < count:
        raise SolverError(f"requested {count} modes but only {block} are available")
    if sdim < 5 * block:
        # scipy's lobpcg densifies tiny problems and would bypass the
        # gradient deflation; use the deflated dense route instead
        return _dense_eigenpairs(ops, count)
    proj = ops.project_out_gradients
    q = ops.grad_basis

    a_sp = ops.sparse_A()
    shift = 1e-3 * a_sp.diagonal().mean()
    lu = splu(a_sp + shift * sp.identity(sdim, format="csc"))

    a_lin = LinearOperator((sdim, sdim), matvec=lambda x: proj(ops.apply_A(proj(x))),
                           matmat=lambda X: proj(ops.apply_A(proj(X))), dtype=float)

    def b_mat(X):
        y = proj(ops.apply_B(proj(X)))
        if q.shape[1]:
            y = y + q @ (q.T @ X)
        return y

    b_lin = LinearOperator((sdim, sdim), matvec=b_mat, matmat=b_mat, dtype=float)
    m_lin = LinearOperator((sdim, sdim), matvec=lambda x: proj(lu.solve(proj(x))),
                           matmat=lambda X: proj(lu.solve(proj(X))), dtype=float)

    rng = np.random.default_rng(seed)
    x0 = proj(rng.standard_normal((sdim, block)))
    tol_abs = tol * float(a_sp.diagonal().mean())
    with np.errstate(all="ignore"):
        vals, vecs = lobpcg(
            a_lin, x0, B=b_lin, M=m_lin, largest=False, tol=tol_abs, maxiter=maxiter
        )
    keep = vals > 1e-10 * max(vals.max(), 1.0)  # drop any kernel leakage
    vals, vecs = vals[keep], vecs[:, keep]
    order = np.argsort(vals)
    vecs = proj(vecs[:, order])
    # Rayleigh-Ritz cleanup in the converged subspace
    ab = vecs.T @ ops.apply_A(vecs)
    bb = vecs.T @ ops.apply_B(vecs)
    w, c = scipy.linalg.eigh(0.5 * (ab + ab.T), 0.5 * (bb + bb.T))
    if w.size < count:
        raise SolverError("iterative eigensolver lost modes; increase block or use dense")
    return w[:count], (vecs @ c)[:, :count]


def solve_resonances(
    cell: MaterialCell,
    count: int = 20,
    method: str = "auto",
    tol: float = 1e-9,
    maxiter: int = 500,
    seed: int = 0,
    zero_mean_tol: float = 1e-8,
    cluster_rel_gap: float = 1e-6,
) -> ResonanceSpectrum:
    """Smallest `count` resonances (clusters kept whole) with moments.

    method: "dense" (full generalized solve, the oracle), "lobpcg"
    (matrix-free, gradient subspace deflated), or "auto".
    """
    ops = assemble_operators(cell)
    avail = ops.sdim - ops.grad_basis.shape[1]
    if count < 1:
        raise ValueError("count must be >= 1")
    if count > avail:
        raise SolverError(f"requested {count} resonances, only {avail} nonzero modes exist")
    solve_n = min(avail, count + 8)
    if method == "auto":
        method = "dense" if ops.sdim <= 4000 else "lobpcg"
    if method == "dense":
        vals, vecs = _dense_eigenpairs(ops, solve_n)
    elif method == "lobpcg":
        vals, vecs = _lobpcg_eigenpairs(ops, solve_n, tol, maxiter, seed)
    else:
        raise ValueError(f"unknown method {method!r}")

    if np.any(vals[:count] <= 0):
        raise SolverError("nonpositive resonance after deflation; inclusion too coarse")

    clusters_all = _cluster_indices(vals, cluster_rel_gap)
    keep = count
    for group in clusters_all:
        if group[0] < count <= group[-1]:
            keep = group[-1] + 1  # do not split a degenerate cluster
    keep = min(keep, solve_n)
    alpha_gate = float(vals[keep]) if keep < len(vals) else float(vals[-1])

    vecs = vecs[:, :keep] / cell.h**1.5  # unit L2 norm of the r fields
    alphas = vals[:keep].copy()
    ext = ops.extend(vecs)
    moments = ext.sum(axis=(1, 2, 3)).T * cell.h**3  # (keep, 3)
    flags = np.linalg.norm(moments, axis=1) <= zero_mean_tol
    return ResonanceSpectrum(
        alphas=alphas,
        coeffs=vecs,
        moments=moments,
        zero_mean_flags=flags,
        clusters=_cluster_indices(alphas, cluster_rel_gap),
        alpha_gate=alpha_gate,
        ops=ops,
        zero_mean_tol=zero_mean_tol,
    )


def classify_zero_mean(spec: ResonanceSpectrum, tol: Optional[float] = None) -> list[int]:
    """Indices whose divergence-free fields have (numerically) zero cell mean."""
    tol = spec.zero_mean_tol if tol is None else tol
    return [k for k in range(spec.count) if np.linalg.norm(spec.moments[k]) <= tol]
