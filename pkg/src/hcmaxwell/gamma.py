"""The matrix-valued dispersion function coupling macro frequency to the
inclusion resonances.

Two independent evaluation routes:

* `gamma_series`: truncated spectral sum over resonance clusters,
  Gamma_ij = w^2 delta_ij + w^4 sum_k b_i^k b_j^k / (alpha_k - w^2),
  with cluster-summed moment outer products (basis independent).

* `gamma_direct`: per unit vector e_j, a deflated MINRES solve of the
  indefinite system (A - w^2 B) psi = e_j|_S in the inclusion-edge space;
  the cell mean of the induced divergence-free field assembles the matrix.

On a grid with full truncation the two are the same finite-dimensional
object; with truncation the series carries an explicit Bessel-type tail
bound.  Gamma vanishes at w = 0, is symmetric, and its eigenvalue signs
classify propagation downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import grid_ops as gops
from .geometry import MaterialCell
from .resonances import ResonanceSpectrum
from .solvers import SolverError, deflated_minres
from .cell_problem import check_matrix_symmetry, SymmetryReport


class PoleProximityError(ValueError):
    """Evaluation requested inside the guard band of a resonance pole."""

    def __init__(self, omega: float, alpha: float, index: int):
        self.omega, self.alpha, self.index = omega, alpha, index
        super().__init__(
            f"omega^2 = {omega**2:.8g} within guard distance of pole alpha_{index + 1} = {alpha:.8g}"
        )


@dataclass
class DirectSolve:
    """Cached by-frequency solves backing the direct route."""

    psi: np.ndarray        # (sdim, 3) coefficients, column j for load e_j
    b_fields: np.ndarray   # (3, 3, n, n, n) divergence-free fields, axis 0 = j
    potentials: np.ndarray  # (3, n, n, n) scalar fields G * div(psi_j)
    moments: np.ndarray    # (3, 3) cell integrals, [j] = integral of field j
    residuals: np.ndarray  # (3,) relative MINRES residuals


@dataclass
class GammaEvaluator:
    spectrum: ResonanceSpectrum
    pole_guard_rel: float = 1e-6
    minres_tol: float = 1e-12
    minres_maxiter: int = 20000
    _cache: dict = field(default_factory=dict)

    def __post_init__(self):
        mats = self.spectrum.cluster_moment_matrices()
        alphas = self.spectrum.alphas
        self.cluster_alphas = np.array([alphas[g[0]] for g in self.spectrum.clusters])
        self.cluster_residues = mats
        resid_norm = np.array([np.linalg.norm(m) for m in mats])
        # clusters whose moment matrix vanishes contribute no pole
        self.pole_mask = resid_norm > self.spectrum.zero_mean_tol**2 * 10
        self.delta_pole = self.pole_guard_rel * float(alphas[0])

    @property
    def poles(self) -> np.ndarray:
        """Resonance values with nonvanishing residue (ascending)."""
        return self.cluster_alphas[self.pole_mask]

    def guard_violation(self, omega: float) -> Optional[tuple[float, int]]:
        w2 = omega**2
        for idx, (a, is_pole) in enumerate(zip(self.cluster_alphas, self.pole_mask)):
            if is_pole and abs(w2 - a) < self.delta_pole:
                return float(a), self.spectrum.clusters[idx][0]
        return None

    def gamma_series(self, omega: float) -> np.ndarray:
        hit = self.guard_violation(omega)
        if hit is not None:
            raise PoleProximityError(omega, hit[0], hit[1])
        w2 = omega**2
        out = w2 * np.eye(3)
        for a, mat, is_pole in zip(self.cluster_alphas, self.cluster_residues, self.pole_mask):
            if not is_pole:
                continue  # vanishing residue: no contribution, no pole
            out += w2**2 * mat / (a - w2)
        return out

    def tail_bound(self, omega: float) -> float:
        """Bessel-type bound on the dropped part of the series.

        The squared moments over the full spectrum are bounded by the squared
        norms of the three constant unit fields, i.e. by 3 in total.
        """
        w2 = omega**2
        gate = self.spectrum.alpha_gate
        if w2 >= gate:
            return float("inf")
        captured = float(np.sum(self.spectrum.moments**2))
        return w2**2 * max(0.0, 3.0 - captured) / (gate - w2)

    def direct_solve(self, omega: float) -> DirectSolve:
        key = float(omega)
        if key in self._cache:
            return self._cache[key]
        ops = self.spectrum.ops
        w2 = omega**2
        n, h = ops.n, ops.h

        def matvec(x):
            return ops.apply_A(x) - w2 * ops.apply_B(x)

        psi = np.empty((ops.sdim, 3))
        resid = np.empty(3)
        for j in range(3):
            rhs = ops.restrict(gops.constant_edge_field(np.eye(3)[j], n, h))
            try:
                x, info = deflated_minres(
                    matvec, rhs, q_deflate=ops.grad_basis,
                    tol=self.minres_tol, maxiter=self.minres_maxiter,
                )
            except SolverError as exc:
                raise SolverError(
                    f"direct solve failed at omega={omega:.6g}; "
                    f"omega^2 may sit on a discrete resonance ({exc})"
                ) from exc
            psi[:, j] = x
            resid[j] = info.relative_residual

        ext = ops.extend(psi)                      # (3, n, n, n, 3)
        bf = gops.leray_raw(ext, h)
        pots = gops.green_apply(gops.div_bwd(ext, h), n)
        b_fields = np.moveaxis(bf, -1, 0)          # (j, comp, n, n, n)
        potentials = np.moveaxis(pots, -1, 0)      # (j, n, n, n)
        moments = b_fields.sum(axis=(2, 3, 4)) * h**3  # (j, comp)
        out = DirectSolve(
            psi=psi, b_fields=b_fields, potentials=potentials,
            moments=moments, residuals=resid,
        )
        self._cache[key] = out
        return out

    def gamma_direct(self, omega: float) -> np.ndarray:
        sol = self.direct_solve(omega)
        w2 = omega**2
        # moments[j] is the integral of the field driven by e_j: column j
        return w2 * (np.eye(3) + w2 * sol.moments.T)

    def gamma(self, omega: float, route: str = "series") -> np.ndarray:
        if route == "series":
            return self.gamma_series(omega)
        if route == "direct":
            return self.gamma_direct(omega)
        raise ValueError(f"unknown route {route!r}")


def evaluator_from_cell(cell: MaterialCell, count: int = 20, **kwargs) -> GammaEvaluator:
    from .resonances import solve_resonances

    spec = solve_resonances(cell, count=count, **kwargs)
    return GammaEvaluator(spectrum=spec)


# --- definiteness classification -------------------------------------------

@dataclass(frozen=True)
class Definiteness:
    label: str                 # positive_definite | negative_definite | indefinite | singular
    eigenvalues: np.ndarray
    singular: bool


def definiteness(g: np.ndarray, tol: float = 1e-10) -> Definiteness:
    """Eigenvalue-sign classification with a |lam| <= tol singular band."""
    asym = np.linalg.norm(g - g.T)
    if asym > 1e-8 * max(1.0, np.linalg.norm(g)):
        raise ValueError(f"matrix is not symmetric (asymmetry {asym:.3e})")
    lam = np.linalg.eigvalsh(0.5 * (g + g.T))
    near_zero = bool(np.any(np.abs(lam) <= tol))
    if np.all(lam > tol):
        label = "positive_definite"
    elif np.all(lam < -tol):
        label = "negative_definite"
    elif np.any(lam > tol) and np.any(lam < -tol):
        label = "indefinite"
    else:
        label = "singular"
    return Definiteness(label=label, eigenvalues=lam, singular=near_zero)


def check_gamma_symmetry(
    ev: GammaEvaluator,
    cell: MaterialCell,
    omega_samples,
    tol: float = 1e-6,
    route: str = "series",
) -> list[tuple[float, SymmetryReport]]:
    """Verify the rotation-implied zero/equality pattern of Gamma at samples."""
    reports = []
    for omega in omega_samples:
        g = ev.gamma(omega, route=route)
        reports.append((float(omega), check_matrix_symmetry(g, cell, tol)))
    return reports
