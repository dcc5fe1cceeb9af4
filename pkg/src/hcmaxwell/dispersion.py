"""Macroscopic dispersion: per-wave-vector mode frames, frequency roots,
regime classification and band tables.

For an integer wave vector m the transverse mobility matrix is

    M(m) = 4 pi^2 [m]_x^T A [m]_x,

symmetric positive semidefinite with kernel exactly span{m}.  A frequency
omega belongs to a branch of wave vector m when M(m) u = Gamma(omega) u has a
nontrivial solution; roots are located by bracketing sign changes of the
sorted eigenvalue curves of M(m) - Gamma(omega) between the poles of Gamma,
then bisecting.  Null vectors of the matrix at a root give the propagating
polarisations and their multiplicity.

The 4 pi^2 factor stays explicit in M; reduced closed forms for diagonal
tensors absorb it into the quoted coefficients when tests compare.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cell_problem import EffectiveTensor
from .gamma import GammaEvaluator, PoleProximityError
from .resonances import ResonanceSpectrum


def cross_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.array(
        [[0.0, -m[2], m[1]], [m[2], 0.0, -m[0]], [-m[1], m[0], 0.0]]
    )


def mobility_matrix(tensor, m) -> np.ndarray:
    """M(m) for an effective tensor (or plain 3x3 matrix) and wave vector m."""
    a = tensor.A if isinstance(tensor, EffectiveTensor) else np.asarray(tensor, float)
    m = np.asarray(m, dtype=float)
    if not np.any(m):
        raise ValueError("wave vector must be nonzero")
    k = cross_matrix(m)
    out = 4.0 * np.pi**2 * (k.T @ a @ k)
    return 0.5 * (out + out.T)


def characteristic_roots(diag_a, m_tilde) -> np.ndarray:
    """Positive eigenvalues of M(m_tilde)/(4 pi^2) for diagonal tensors.

    Roots of l^2 - l[(a2+a3)t1^2 + (a1+a3)t2^2 + (a1+a2)t3^2]
              + [a1 a2 t3^2 + a2 a3 t1^2 + a1 a3 t2^2] = 0
    for a unit vector t.
    """
    a1, a2, a3 = diag_a
    t1, t2, t3 = np.asarray(m_tilde, float) ** 2
    b = (a2 + a3) * t1 + (a1 + a3) * t2 + (a1 + a2) * t3
    c = a1 * a2 * t3 + a2 * a3 * t1 + a1 * a3 * t2
    disc = max(b * b - 4 * c, 0.0)
    return np.array([(b - math.sqrt(disc)) / 2, (b + math.sqrt(disc)) / 2])


@dataclass(frozen=True)
class ModeFrame:
    m: tuple
    m_abs: float
    m_tilde: np.ndarray
    lambdas: np.ndarray      # (2,) positive eigenvalues of M(m_tilde), ascending
    e_tilde: np.ndarray      # (2,3) orthonormal eigenvectors, transverse to m_tilde
    mobility: np.ndarray     # M(m) itself

    @property
    def c_matrix(self) -> np.ndarray:
        return self.e_tilde

    @property
    def c_prime(self) -> np.ndarray:
        return np.vstack([self.e_tilde, self.m_tilde])

    @property
    def lambda_prime(self) -> np.ndarray:
        return np.diag([self.lambdas[0], self.lambdas[1], 0.0])


def mode_frame(tensor, m, kernel_tol: float = 1e-10) -> ModeFrame:
    """Eigendecomposition of M(m_tilde) split into kernel and transverse pair."""
    m = np.asarray(m, dtype=float)
    m_abs = float(np.linalg.norm(m))
    if m_abs == 0.0:
        raise ValueError("wave vector must be nonzero")
    m_tilde = m / m_abs
    m_small = mobility_matrix(tensor, m_tilde)
    vals, vecs = np.linalg.eigh(m_small)
    k = int(np.argmax(np.abs(vecs.T @ m_tilde)))
    if abs(vals[k]) > kernel_tol * max(vals.max(), 1.0):
        raise ValueError("mobility kernel is not aligned with the wave vector")
    others = [i for i in range(3) if i != k]
    order = np.argsort(vals[others])
    idx = [others[i] for i in order]
    e = vecs[:, idx].T.copy()
    # orthogonalize exactly against m_tilde (guards eigh roundoff)
    e -= np.outer(e @ m_tilde, m_tilde)
    e[0] /= np.linalg.norm(e[0])
    e[1] -= e[0] * (e[1] @ e[0])
    e[1] /= np.linalg.norm(e[1])
    return ModeFrame(
        m=tuple(int(round(x)) for x in m),
        m_abs=m_abs,
        m_tilde=m_tilde,
        lambdas=vals[idx].copy(),
        e_tilde=e,
        mobility=mobility_matrix(tensor, m),
    )


# --- regime classification ---------------------------------------------------

@dataclass(frozen=True)
class RegimeInfo:
    label: str                     # full_band | weak_gap | full_gap | resonance_flat_band
    gamma_eigenvalues: Optional[np.ndarray]
    propagating_subspace: Optional[np.ndarray]  # (3,k) eigenvectors of the nonneg part
    flat_band_indices: tuple = ()


def classify_frequency(
    ev: GammaEvaluator,
    spec: Optional[ResonanceSpectrum],
    omega: float,
    band_tol_rel: float = 1e-6,
    route: str = "series",
) -> RegimeInfo:
    """Propagation regime at omega from the eigenvalue signs of Gamma."""
    spec = ev.spectrum if spec is None else spec
    w2 = omega**2
    flat = tuple(
        k
        for k in range(spec.count)
        if spec.zero_mean_flags[k] and abs(w2 - spec.alphas[k]) <= ev.delta_pole
    )
    if flat:
        return RegimeInfo("resonance_flat_band", None, None, flat)
    g = ev.gamma(omega, route=route)
    lam, vecs = np.linalg.eigh(0.5 * (g + g.T))
    tol = band_tol_rel * max(1.0, float(np.abs(lam).max()))
    if np.all(lam > tol):
        return RegimeInfo("full_band", lam, vecs)
    if np.all(lam < -tol):
        return RegimeInfo("full_gap", lam, None)
    if lam[0] < -tol and lam[-1] > -tol:
        keep = lam > -tol
        return RegimeInfo("weak_gap", lam, vecs[:, keep])
    return RegimeInfo("full_band", lam, vecs)  # band edge / singular boundary


# --- root finding -------------------------------------------------------------

@dataclass
class Root:
    m: tuple
    omega: float
    multiplicity: int
    u_basis: np.ndarray          # (3, multiplicity), orthonormal
    residual_mode: float         # |(M - Gamma) u| / |M - Gamma|
    residual_solv: float         # |Gamma u . m| / scale
    det_residual: float          # |det(M - Gamma)| / |M - Gamma|^3
    kind: str                    # transverse | longitudinal | mixed
    regime: str = ""
    flagged_uncertain: bool = False

    def as_row(self) -> dict:
        return {
            "m": self.m,
            "omega": self.omega,
            "multiplicity": self.multiplicity,
            "kind": self.kind,
            "regime": self.regime,
            "residual_mode": self.residual_mode,
            "residual_solv": self.residual_solv,
            "det_residual": self.det_residual,
        }


@dataclass(frozen=True)
class ScanConfig:
    samples_per_interval: int = 64
    pole_refine: int = 8
    tol_omega_rel: float = 1e-10
    null_tol: float = 1e-8
    det_tol: float = 1e-10
    dedupe_rel: float = 1e-8
    omega_min: float = 1e-3  # excludes the trivial zero-frequency mode


def _segment_samples(lo: float, hi: float, cfg: ScanConfig,
                     pole_lo: bool, pole_hi: bool) -> np.ndarray:
    base = np.linspace(lo, hi, cfg.samples_per_interval)
    extras = []
    width = hi - lo
    # geometric refinement into ends that abut a pole, where curves diverge
    if pole_lo:
        extras.append(lo + width * 0.1 * np.geomspace(1e-4, 1.0, 2 * cfg.pole_refine))
    if pole_hi:
        extras.append(hi - width * 0.1 * np.geomspace(1e-4, 1.0, 2 * cfg.pole_refine))
    if extras:
        base = np.unique(np.concatenate([base] + extras))
    return base


def _sorted_eigenvalue(frame: ModeFrame, ev: GammaEvaluator, omega: float,
                       index: int, route: str) -> float:
    d = frame.mobility - ev.gamma(omega, route=route)
    return float(np.linalg.eigvalsh(d)[index])


def solve_branch(
    frame: ModeFrame,
    ev: GammaEvaluator,
    omega_window: tuple[float, float],
    cfg: ScanConfig = ScanConfig(),
    route: str = "series",
) -> list[Root]:
    """All roots of det(M(m) - Gamma(omega)) = 0 in the window.

    Tracks the three sorted eigenvalue curves of M - Gamma (continuous in
    omega), brackets their sign changes on a refined sample grid, bisects,
    and reads polarisations and multiplicity off the nullspace.
    """
    lo, hi = omega_window
    lo = max(lo, cfg.omega_min)
    if hi <= lo:
        return []
    # split the window at poles (omega^2 = pole), excluding guard bands
    cuts = [(lo, False)]
    for a in ev.poles:
        wlo2, whi2 = a - ev.delta_pole, a + ev.delta_pole
        if whi2 <= lo**2 or wlo2 >= hi**2:
            continue
        cuts.append((math.sqrt(max(wlo2, 0.0)), True))
        cuts.append((math.sqrt(whi2), True))
    cuts.append((hi, False))
    pts = sorted(cuts)
    roots: list[Root] = []
    for (a, pole_a), (b, pole_b) in zip(pts[:-1], pts[1:]):
        if b - a < 1e-14 or (pole_a and pole_b and b - a < 2e-12):
            continue
        mid = 0.5 * (a + b)
        if any(abs(mid**2 - p) < ev.delta_pole for p in ev.poles):
            continue  # this segment is a guard band interior
        samples = _segment_samples(a, b, cfg, pole_a, pole_b)
        mus = np.empty((samples.size, 3))
        ok = np.ones(samples.size, dtype=bool)
        for i, w in enumerate(samples):
            try:
                d = frame.mobility - ev.gamma(w, route=route)
                mus[i] = np.linalg.eigvalsh(d)
            except PoleProximityError:
                ok[i] = False
        samples, mus = samples[ok], mus[ok]
        for comp in range(3):
            sign = np.sign(mus[:, comp])
            for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
                # bisect to machine resolution; tol_omega_rel only merges roots
                w_root = _bisect(
                    lambda w: _sorted_eigenvalue(frame, ev, w, comp, route),
                    samples[i], samples[i + 1], 0.0,
                )
                root = _make_root(frame, ev, w_root, cfg, route)
                if root is not None:
                    root.flagged_uncertain = (
                        (pole_a and w_root - a < 4 * (samples[1] - samples[0]))
                        or (pole_b and b - w_root < 4 * (samples[-1] - samples[-2]))
                    )
                    roots.append(root)
    return _dedupe(roots, cfg)


def _bisect(f, a: float, b: float, tol_rel: float) -> float:
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    for _ in range(200):
        mid = 0.5 * (a + b)
        if b - a <= max(tol_rel * mid, 8 * np.finfo(float).eps * mid):
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if fa * fm < 0:
            b, fb = mid, fm
        else:
            a, fa = mid, fm
    mid = 0.5 * (a + b)
    candidates = [(abs(f(w)), w) for w in (a, mid, b)]
    return min(candidates)[1]


def _make_root(frame: ModeFrame, ev: GammaEvaluator, omega: float,
               cfg: ScanConfig, route: str) -> Optional[Root]:
    gam = ev.gamma(omega, route=route)
    d = frame.mobility - gam
    u_svd, s, vt = np.linalg.svd(0.5 * (d + d.T))
    scale = max(s[0], np.finfo(float).tiny)
    null = s < cfg.null_tol * scale
    mult = int(null.sum())
    if mult == 0:
        return None  # spurious bracket (e.g. eigenvalue grazing zero)
    basis = vt[null].T  # (3, mult)
    res_mode = float(np.linalg.norm(d @ basis, axis=0).max() / scale)
    res_solv = float(
        np.abs(basis.T @ gam @ np.asarray(frame.m, float)).max()
        / max(scale * frame.m_abs, np.finfo(float).tiny)
    )
    detval = float(abs(np.linalg.det(d)) / scale**3)
    align = np.abs(frame.m_tilde @ basis)
    if np.all(align > 1 - 1e-6):
        kind = "longitudinal"
    elif np.all(align < 1e-6):
        kind = "transverse"
    else:
        kind = "mixed"
    return Root(
        m=frame.m, omega=float(omega), multiplicity=mult, u_basis=basis,
        residual_mode=res_mode, residual_solv=res_solv, det_residual=detval,
        kind=kind,
    )


def _dedupe(roots: list[Root], cfg: ScanConfig) -> list[Root]:
    roots = sorted(roots, key=lambda r: r.omega)
    out: list[Root] = []
    for r in roots:
        if out and abs(r.omega - out[-1].omega) <= cfg.dedupe_rel * max(1.0, r.omega):
            if r.multiplicity > out[-1].multiplicity:
                out[-1] = r
            continue
        out.append(r)
    return out


# --- eigenfunction reconstruction ---------------------------------------------

@dataclass
class TwoScaleMode:
    m: tuple
    omega: float
    u_hat: np.ndarray             # (3,) complex polarisation
    profile: np.ndarray           # (3,n,n,n) complex microscale profile (I + w^2 B(y)) u
    b_fields: np.ndarray          # (3,3,n,n,n) per-load divergence-free fields
    potentials: np.ndarray        # (3,n,n,n) scalar micro potentials per load
    residuals: dict

    def macro(self, x: np.ndarray) -> np.ndarray:
        """Plane-wave macro field at points (...,3)."""
        phase = np.exp(2j * np.pi * (x @ np.asarray(self.m, float)))
        return phase[..., None] * self.u_hat


def _polish_root_direct(frame: ModeFrame, ev: GammaEvaluator, omega: float,
                        rel_window: float = 5e-3) -> float:
    """Relocate a (possibly series-located) root on the direct route.

    The truncated series shifts roots by the tail; bisect the sorted
    eigenvalue curve of M - Gamma_direct inside a small bracket.
    """
    def eigs(w):
        return np.linalg.eigvalsh(frame.mobility - ev.gamma_direct(w))

    center = eigs(omega)
    comp = int(np.argmin(np.abs(center)))
    lo, hi = omega * (1 - rel_window), omega * (1 + rel_window)
    flo, fhi = eigs(lo)[comp], eigs(hi)[comp]
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        return float(omega)  # grazing or already converged; keep the input
    return float(_bisect(lambda w: float(eigs(w)[comp]), lo, hi, 1e-12))


def reconstruct_eigenfunction(
    frame: ModeFrame,
    ev: GammaEvaluator,
    omega: float,
    uhat,
    validate_tol: float = 1e-6,
) -> TwoScaleMode:
    """Two-scale eigenfunction for a validated root (omega, uhat).

    The frequency is re-polished on the direct route and the polarisation is
    projected onto the exact nullspace there; inputs that are not close to a
    genuine root are rejected.
    """
    uhat = np.asarray(uhat, dtype=complex)
    nrm = np.linalg.norm(uhat)
    if nrm == 0:
        raise ValueError("uhat must be nonzero")
    uhat = uhat / nrm
    omega = _polish_root_direct(frame, ev, omega)
    gam = ev.gamma(omega, route="direct")
    d = frame.mobility - gam
    scale = max(np.linalg.norm(d, 2), np.finfo(float).tiny)
    _, s, vt = np.linalg.svd(d)
    null = s < max(validate_tol, 1e-7) * scale
    if not null.any():
        raise ValueError("(omega, uhat) is not a validated dispersion root")
    basis = vt[null].T
    proj = basis @ (basis.conj().T @ uhat)
    if np.linalg.norm(proj) < 1.0 - validate_tol * 10:
        # polarisation must essentially live in the root's nullspace; allow
        # degenerate-cluster rotations but not foreign vectors
        if np.linalg.norm(proj) < 0.5:
            raise ValueError("(omega, uhat) is not a validated dispersion root")
    uhat = proj / np.linalg.norm(proj)

    sol = ev.direct_solve(omega)
    ops = ev.spectrum.ops
    h, n = ops.h, ops.n
    w2 = omega**2
    profile = np.zeros((3, n, n, n), dtype=complex)
    for a in range(3):
        profile[a] = uhat[a]
    profile += w2 * np.tensordot(uhat, sol.b_fields, axes=(0, 0))

    from . import grid_ops as gops

    div_res = float(np.abs(gops.div_bwd(profile, h)).max())
    # inclusion equation residual: the combination (A - w^2 B) psi(u) = u|_S
    psi_u = sol.psi @ uhat
    me3 = ops.apply_A(psi_u) - w2 * ops.apply_B(psi_u)
    me3 -= ops.restrict(gops.constant_edge_field(uhat, n, h, dtype=complex))
    me3_res = float(np.linalg.norm(me3) * w2 * h**1.5)
    return TwoScaleMode(
        m=frame.m, omega=float(omega), u_hat=uhat, profile=profile,
        b_fields=sol.b_fields, potentials=sol.potentials,
        residuals={"divergence": div_res, "inclusion_eq": me3_res,
                   "mode": float(np.linalg.norm(d @ uhat) / scale)},
    )


def flat_band_mode(spec: ResonanceSpectrum, k: int, envelope=None):
    """Separable eigenfunction at a zero-mean resonance: envelope(x) r_k(y)."""
    if not spec.zero_mean_flags[k]:
        raise ValueError(f"resonance {k} has a nonzero mean; not a flat band")
    r = spec.r_field(k)
    return {"alpha": float(spec.alphas[k]), "r_field": r, "envelope": envelope}


# --- band structure -----------------------------------------------------------

@dataclass
class FlatBandRow:
    alpha: float
    omega: float
    indices: tuple
    regime: str = "resonance_flat_band"
    multiplicity: float = math.inf


@dataclass
class DispersionTable:
    rows: list                # Root, sorted by omega
    flat_bands: list          # FlatBandRow
    levels: list              # deduped omega levels across m
    omega_max: float
    m_max: int

    def all_omegas(self) -> np.ndarray:
        return np.array([r.omega for r in self.rows])


def enumerate_wave_vectors(m_max: int) -> list[tuple]:
    out = []
    rng = range(-m_max, m_max + 1)
    for i in rng:
        for j in rng:
            for k in rng:
                if (i, j, k) != (0, 0, 0):
                    out.append((i, j, k))
    return out


def band_structure(
    tensor: EffectiveTensor,
    ev: GammaEvaluator,
    m_max: int,
    omega_max: float,
    cfg: ScanConfig = ScanConfig(),
    route: str = "series",
) -> DispersionTable:
    """Roots over all wave vectors with sup-norm <= m_max, plus flat bands."""
    gate = math.sqrt(ev.spectrum.alpha_gate)
    if omega_max >= 0.9 * gate:
        raise ValueError(
            f"omega_max={omega_max:.4g} exceeds the truncation guard 0.9*sqrt(alpha_gate)={0.9 * gate:.4g}; "
            "raise the resonance count"
        )
    rows: list[Root] = []
    for m in enumerate_wave_vectors(m_max):
        frame = mode_frame(tensor, m)
        for root in solve_branch(frame, ev, (0.0, omega_max), cfg, route):
            info = classify_frequency(ev, ev.spectrum, root.omega)
            root.regime = info.label
            rows.append(root)
    rows.sort(key=lambda r: r.omega)

    spec = ev.spectrum
    flat = []
    for group in spec.clusters:
        zero = tuple(k for k in group if spec.zero_mean_flags[k])
        alpha = float(np.mean(spec.alphas[list(group)]))
        if zero and alpha <= omega_max**2:
            flat.append(FlatBandRow(alpha=alpha, omega=math.sqrt(alpha), indices=zero))

    levels: list[dict] = []
    for r in rows:
        if levels and abs(r.omega - levels[-1]["omega"]) <= 1e-8 * max(1.0, r.omega):
            levels[-1]["multiplicity"] += r.multiplicity
            levels[-1]["wave_vectors"].append(r.m)
        else:
            levels.append(
                {"omega": r.omega, "multiplicity": r.multiplicity,
                 "wave_vectors": [r.m], "regime": r.regime}
            )
    return DispersionTable(rows=rows, flat_bands=flat, levels=levels,
                           omega_max=omega_max, m_max=m_max)


# --- regime scan over a frequency grid -----------------------------------------

@dataclass
class RegimeWindow:
    lo: float
    hi: float
    regime: str
    propagating_subspace: Optional[np.ndarray] = None


def scan_regimes(
    ev: GammaEvaluator,
    omega_max: float,
    samples: int = 2048,
    band_tol_rel: float = 1e-6,
) -> tuple[np.ndarray, list[str], list[RegimeWindow]]:
    """Classify a dense omega grid and extract contiguous regime windows."""
    omegas = np.linspace(omega_max / samples, omega_max, samples)
    labels: list[str] = []
    kept: list[float] = []
    infos: list[RegimeInfo] = []
    for w in omegas:
        if ev.guard_violation(w) is not None:
            continue
        info = classify_frequency(ev, ev.spectrum, w, band_tol_rel)
        kept.append(w)
        labels.append(info.label)
        infos.append(info)
    windows: list[RegimeWindow] = []
    for w, lab, info in zip(kept, labels, infos):
        if windows and windows[-1].regime == lab:
            windows[-1].hi = w
        else:
            sub = info.propagating_subspace if lab == "weak_gap" else None
            windows.append(RegimeWindow(lo=w, hi=w, regime=lab, propagating_subspace=sub))
    return np.asarray(kept), labels, windows
