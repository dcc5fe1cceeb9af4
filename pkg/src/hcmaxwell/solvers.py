"""Iterative solver kernels shared by the cell, resonance and supercell solves.

Everything is matrix-free: operators are callables on numpy arrays of any
shape.  The conjugate-gradient loop accepts an optional projection applied to
iterates and residuals, used to pin down null-space components (constants,
gradient subspaces) of the semidefinite systems that occur throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from . import grid_ops as gops


class SolverError(RuntimeError):
    """Iterative solver failed to reach its tolerance."""


@dataclass
class SolveInfo:
    iterations: int
    relative_residual: float
    converged: bool
    notes: dict = field(default_factory=dict)


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b).real)


def pcg(
    apply_op: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    precond: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol: float = 1e-10,
    maxiter: int = 10000,
) -> tuple[np.ndarray, SolveInfo]:
    """Preconditioned CG for SPD/SPSD systems with consistent right-hand sides.

    `project`, when given, is an orthogonal projection applied to b, x0 and
    every preconditioned direction; it must commute with the operator on its
    range.  Convergence is on the unpreconditioned relative residual.
    """
    if project is not None:
        b = project(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, 0.0, True)

    x = np.zeros_like(b) if x0 is None else (project(x0) if project else x0).copy()
    r = b - apply_op(x)
    if project is not None:
        r = project(r)

    def prec(v):
        z = precond(v) if precond is not None else v
        return project(z) if project is not None else z

    z = prec(r)
    p = z.copy()
    rz = _dot(r, z)
    relres = np.linalg.norm(r) / bnorm
    it = 0
    while relres > tol and it < maxiter:
        Ap = apply_op(p)
        if project is not None:
            Ap = project(Ap)
        pAp = _dot(p, Ap)
        if pAp <= 0.0:
            # null-space direction slipped through; drop it
            raise SolverError(f"CG curvature breakdown at iteration {it} (pAp={pAp:.3e})")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if it % 50 == 0:
            # periodic true-residual refresh against drift
            r = b - apply_op(x)
            if project is not None:
                r = project(r)
        z = prec(r)
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        relres = np.linalg.norm(r) / bnorm
    info = SolveInfo(it, float(relres), relres <= tol)
    if not info.converged:
        raise SolverError(
            f"CG did not converge: relres={relres:.3e} after {it} iterations (tol={tol:.1e})"
        )
    return x, info


# --- FFT constant-coefficient preconditioners ------------------------------

def make_curlcurl_preconditioner(n: int, c_curl: float, c_div: float, shift: float = 0.0):
    """Inverse of c_curl*curl'curl + c_div*(-grad div) + shift on edge vectors.

    Per Fourier mode the symbol has the transverse eigenvalue c_curl*lam(m)
    and longitudinal eigenvalue c_div*lam(m) (lam = discrete Laplacian), so
    the inverse splits along the projector onto the forward-difference symbol
    d(m).  The zero mode is dropped (mean-free output) unless shift > 0.
    """
    h = 1.0 / n
    m = np.fft.fftfreq(n, d=1.0 / n)
    d1 = (np.exp(2j * np.pi * m / n) - 1.0) / h
    d = np.zeros((3, n, n, n), dtype=complex)
    d[0] = d1[:, None, None]
    d[1] = d1[None, :, None]
    d[2] = d1[None, None, :]
    lam = np.sum(np.abs(d) ** 2, axis=0)
    lam0 = lam.copy()
    lam0[0, 0, 0] = 1.0

    inv_t = 1.0 / (c_curl * lam0 + shift)
    inv_l = 1.0 / (c_div * lam0 + shift)
    if shift == 0.0:
        inv_t[0, 0, 0] = 0.0
        inv_l[0, 0, 0] = 0.0
    else:
        inv_t[0, 0, 0] = 1.0 / shift
        inv_l[0, 0, 0] = 1.0 / shift
    dn = d / np.sqrt(lam0)

    def apply(v: np.ndarray) -> np.ndarray:
        batched = v.ndim == 5
        dn_ = dn[..., None] if batched else dn
        it_ = inv_t[..., None] if batched else inv_t
        il_ = inv_l[..., None] if batched else inv_l
        vh = np.fft.fftn(v, axes=(1, 2, 3))
        coef = np.sum(np.conj(dn_) * vh, axis=0)
        long = dn_ * coef
        trans = vh - long
        out = np.fft.ifftn(it_ * trans + il_ * long, axes=(1, 2, 3))
        return out.real if not np.iscomplexobj(v) else out

    return apply


def make_laplace_preconditioner(n: int):
    """Inverse discrete Laplacian on node scalars (zero mode passed through)."""
    green = gops.spectral_green(n)
    inv = green.ghat.copy()
    inv[0, 0, 0] = 1.0  # keep SPD on constants

    def apply(v: np.ndarray) -> np.ndarray:
        out = np.fft.ifftn(np.fft.fftn(v) * inv)
        return out.real if not np.iscomplexobj(v) else out

    return apply


# --- deflated MINRES for symmetric indefinite systems ----------------------

def orthonormal_columns(basis: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Euclidean-orthonormal basis of the column span (rank-revealing QR)."""
    if basis.size == 0:
        return basis.reshape(basis.shape[0], 0)
    q, r = np.linalg.qr(basis)
    keep = np.abs(np.diag(r)) > tol * max(1.0, np.abs(r).max())
    return q[:, keep]


def deflated_minres(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    q_deflate: Optional[np.ndarray] = None,
    tol: float = 1e-12,
    maxiter: int = 20000,
) -> tuple[np.ndarray, SolveInfo]:
    """MINRES on the orthogonal complement of span(q_deflate) (orthonormal cols)."""
    ndof = b.shape[0]

    if q_deflate is not None and q_deflate.shape[1] > 0:
        def project(v):
            return v - q_deflate @ (q_deflate.T @ v)
    else:
        def project(v):
            return v

    b_proj = project(b)
    bnorm = np.linalg.norm(b_proj)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, 0.0, True)

    count = {"it": 0}

    def op(v):
        count["it"] += 1
        return project(matvec(project(v)))

    A = LinearOperator((ndof, ndof), matvec=op, dtype=float)
    x, exit_code = minres(A, b_proj, rtol=tol, maxiter=maxiter)
    x = project(x)
    relres = np.linalg.norm(b_proj - project(matvec(x))) / bnorm
    # minres reports 0 on rtol success; accept slightly looser achieved residuals
    converged = relres <= max(tol * 50, 1e-11)
    if exit_code != 0 and not converged:
        raise SolverError(
            f"MINRES failed (exit {exit_code}), relative residual {relres:.3e}"
        )
    return x, SolveInfo(count["it"], float(relres), converged)
