"""Acceptance gate: every stated criterion at its stated tolerance.

Each test prints one PASS/FAIL line per criterion clause before asserting, so
a full run reads as a checklist.  Heavy pipeline stages (effective tensors,
spectra, the supercell ladder) are computed once in module fixtures.
"""
import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from hcmaxwell import grid_ops as gops
from hcmaxwell.geometry import Ball, Box, Cylinder, MaterialCell
from hcmaxwell.cell_problem import assemble_A_hom, check_symmetry, effective_tensor
from hcmaxwell.resonances import assemble_operators, solve_resonances
from hcmaxwell.gamma import GammaEvaluator, check_gamma_symmetry
from hcmaxwell.dispersion import (
    band_structure,
    characteristic_roots,
    mode_frame,
    reconstruct_eigenfunction,
    scan_regimes,
    solve_branch,
)
from hcmaxwell.supercell import assemble_heterogeneous, lowest_modes, run_validation_ladder


def report(criterion: str, ok: bool, detail: str) -> bool:
    print(f"[{criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


# --- shared heavy fixtures -----------------------------------------------------

@pytest.fixture(scope="module")
def cubic16():
    cell = MaterialCell(
        n=16, shape=Ball((0.5, 0.5, 0.5), 0.25),
        symmetry_tags=((1, "pi/2"), (2, "pi/2"), (3, "pi/2")),
    )
    tensor, corrector = assemble_A_hom(cell)
    spec = solve_resonances(cell, count=12)
    return cell, tensor, spec, GammaEvaluator(spectrum=spec)


@pytest.fixture(scope="module")
def cylinder16():
    cell = MaterialCell(
        n=16, shape=Cylinder(1, (0.5, 0.5, 0.5), 0.2, 0.3),
        symmetry_tags=((1, "pi/2"), (2, "pi"), (3, "pi")),
    )
    tensor, _ = assemble_A_hom(cell)
    spec = solve_resonances(cell, count=16)
    return cell, tensor, spec, GammaEvaluator(spectrum=spec)


@pytest.fixture(scope="module")
def ladder_report():
    cell = MaterialCell(n=8, shape=Ball((0.5, 0.5, 0.5), 0.25))
    tensor, corrector = assemble_A_hom(cell)
    spec = solve_resonances(cell, count=10, method="dense")
    ev = GammaEvaluator(spectrum=spec)
    frame = mode_frame(tensor, (1, 1, 0))
    roots = solve_branch(frame, ev, (0.0, 0.89 * math.sqrt(spec.alpha_gate)))
    root = [r for r in roots if r.kind == "transverse"][0]
    mode = reconstruct_eigenfunction(frame, ev, root.omega, root.u_basis[:, 0])
    return run_validation_ladder(cell, mode, corrector, ladder=(2, 3, 4),
                                 seed=0, tensor=tensor)


# --- criterion 1: discrete vector calculus --------------------------------------

def test_criterion_1_discrete_identities():
    worst = {"divcurl": 0.0, "curlgrad": 0.0, "adjoint": 0.0, "green": 0.0}
    for n in (8, 16):
        h = 1.0 / n
        rng = np.random.default_rng(n)
        scale = n**2
        for _ in range(100):
            u = rng.standard_normal((3, n, n, n))
            v = rng.standard_normal((3, n, n, n))
            p = rng.standard_normal((n, n, n))
            worst["divcurl"] = max(
                worst["divcurl"], np.abs(gops.div_fwd(gops.curl_fwd(u, h), h)).max() / scale
            )
            worst["curlgrad"] = max(
                worst["curlgrad"], np.abs(gops.curl_fwd(gops.grad_fwd(p, h), h)).max() / scale
            )
            lhs = np.vdot(gops.curl_fwd(u, h), v)
            rhs = np.vdot(u, gops.curl_bwd(v, h))
            worst["adjoint"] = max(worst["adjoint"], abs(lhs - rhs) / (abs(lhs) + scale))
            f = rng.standard_normal((n, n, n))
            gf = gops.green_apply(f, n)
            lap = gops.div_bwd(gops.grad_fwd(gf, h), h)
            worst["green"] = max(
                worst["green"], np.abs(-lap - (f - f.mean())).max() / (scale * np.abs(f).max())
            )
    ok = all(v <= 1e-12 for v in worst.values())
    assert report(
        "criterion 1", ok,
        "identities at n in {8,16}, 100 random fields: "
        + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + " (tol 1e-12 relative)",
    )


# --- criterion 2: duality oracle -------------------------------------------------

def _duality_series(shape):
    return [
        effective_tensor(MaterialCell(n=n, shape=shape)).product_residual
        for n in (8, 16, 32)
    ]


def test_criterion_2_duality_ball():
    res = _duality_series(Ball((0.5, 0.5, 0.5), 0.25))
    ok = res[0] > res[1] > res[2] and res[2] <= 0.02
    assert report(
        "criterion 2 (ball)", ok,
        f"|A.stiff - I|_F at n=8,16,32: {res[0]:.4f}, {res[1]:.4f}, {res[2]:.4f} "
        "(strictly decreasing, final <= 0.02)",
    )


def test_criterion_2_duality_box():
    res = _duality_series(Box((0.5, 0.5, 0.5), (0.25, 0.25, 0.25)))
    ok = res[0] > res[1] > res[2] and res[2] <= 0.02
    assert report(
        "criterion 2 (box)", ok,
        f"|A.stiff - I|_F at n=8,16,32: {res[0]:.4f}, {res[1]:.4f}, {res[2]:.4f} "
        "(strictly decreasing, final <= 0.02)",
    )


# --- criterion 3: trivial media ---------------------------------------------------

def test_criterion_3_trivial_media():
    ten = effective_tensor(MaterialCell(n=8, shape=None, eps1=4.0))
    tensor_err = np.abs(ten.A - 0.25 * np.eye(3)).max()
    ok_tensor = tensor_err <= 1e-8

    errs = {}
    for n_cell in (8, 16):
        op = assemble_heterogeneous(MaterialCell(n=n_cell, shape=None), p=2)
        modes = lowest_modes(op, count=16, seed=0)
        errs[op.grid_n] = np.abs(modes.omegas[3:15] ** 2 - 4 * np.pi**2).max()
    order = math.log2(errs[16] / errs[32])
    ok_super = order >= 1.8
    assert report(
        "criterion 3", ok_tensor and ok_super,
        f"uniform tensor error {tensor_err:.2e} (tol 1e-8); supercell transverse pairs "
        f"vs 4pi^2: err(16)={errs[16]:.4f}, err(32)={errs[32]:.4f}, order {order:.2f} (>= 1.8)",
    )


# --- criterion 4: resonance solver oracle ------------------------------------------

def test_criterion_4_resonance_oracle():
    cell = MaterialCell(n=8, shape=Box((0.5, 0.5, 0.5), (0.25, 0.25, 0.25)))
    dense = solve_resonances(cell, count=10, method="dense")
    isolved = solve_resonances(cell, count=10, method="lobpcg")
    rel = np.abs(isolved.alphas[:10] - dense.alphas[:10]).max() / dense.alphas[0]
    positive = bool(np.all(dense.alphas > 0) and np.all(isolved.alphas > 0))
    r = np.stack([dense.r_field(k).ravel() for k in range(10)])
    gram_err = np.abs(r @ r.T * cell.h**3 - np.eye(10)).max()
    ok = rel <= 1e-8 and positive and gram_err <= 1e-8
    assert report(
        "criterion 4", ok,
        f"iterative vs dense alpha_1..10 rel err {rel:.2e} (tol 1e-8); all alphas > 0: "
        f"{positive}; orthonormality err {gram_err:.2e} (tol 1e-8)",
    )


# --- criterion 5: gamma series/direct equivalence ------------------------------------

def test_criterion_5_gamma_equivalence():
    cell = MaterialCell(n=8, shape=Ball((0.5, 0.5, 0.5), 0.25))
    ops = assemble_operators(cell)
    avail = ops.sdim - ops.grad_basis.shape[1]
    spec = solve_resonances(cell, count=avail, method="dense")
    ev = GammaEvaluator(spectrum=spec)

    poles = ev.poles
    samples = []
    bands = [(0.05 * poles[0], 0.97 * poles[0])]
    for lo, hi in zip(poles[:-1], poles[1:]):
        if hi / lo > 1.1:
            bands.append((lo * 1.03, hi * 0.97))
        if len(bands) >= 5:
            break
    per = max(1, math.ceil(20 / len(bands)))
    for lo, hi in bands:
        samples.extend(np.sqrt(np.linspace(lo, hi, per)))
    samples = samples[:20] if len(samples) >= 20 else samples
    worst = max(
        np.abs(ev.gamma_series(w) - ev.gamma_direct(w)).max() for w in samples
    )
    ok_eq = worst <= 1e-8 and len(samples) >= 20

    a1 = spec.alphas[0]
    ws = np.sqrt(a1) * np.array([0.02, 0.04, 0.06, 0.08, 0.1])
    devs = np.array([np.linalg.norm(ev.gamma_series(w) / w**2 - np.eye(3), 2) for w in ws])
    c_fit = float(np.polyfit(ws**2, devs, 1)[0])
    c_pred = np.linalg.norm(
        sum(np.outer(b, b) / a for a, b in zip(spec.alphas, spec.moments)), 2
    )
    ok_small = 0.5 * c_pred <= c_fit <= 2.0 * c_pred
    assert report(
        "criterion 5", ok_eq and ok_small,
        f"series/direct entrywise gap {worst:.2e} over {len(samples)} samples (tol 1e-8); "
        f"small-omega quadratic coefficient fit {c_fit:.3e} vs moment prediction {c_pred:.3e}",
    )


# --- criterion 6: symmetry corollaries ------------------------------------------------

def _gamma_samples(ev):
    a1 = ev.spectrum.alphas[0]
    return [w for w in (0.35 * math.sqrt(a1), 0.75 * math.sqrt(a1))
            if ev.guard_violation(w) is None]


def test_criterion_6_symmetry_patterns(cubic16, cylinder16):
    tol = 1e-6
    msgs, oks = [], []

    cell, tensor, spec, ev = cubic16
    rep = check_symmetry(tensor, cell, tol)
    grep = check_gamma_symmetry(ev, cell, _gamma_samples(ev), tol)
    a = tensor.A
    iso = max(
        np.abs(a - np.diag(np.diag(a))).max(),
        np.abs(np.diag(a) - a[0, 0]).max(),
    ) / abs(a[0, 0])
    oks.append(rep.ok and all(r.ok for _, r in grep) and iso <= tol)
    msgs.append(f"cubic ball a*I pattern off by {iso:.2e}")

    cell, tensor, spec, ev = cylinder16
    rep = check_symmetry(tensor, cell, tol)
    grep = check_gamma_symmetry(ev, cell, _gamma_samples(ev), tol)
    a = tensor.A
    cyl = max(
        np.abs(a - np.diag(np.diag(a))).max(),
        abs(a[1, 1] - a[2, 2]),
    ) / abs(a[1, 1])
    oks.append(rep.ok and all(r.ok for _, r in grep) and cyl <= tol)
    msgs.append(f"cylinder diag(a,b,b) pattern off by {cyl:.2e}")

    cell = MaterialCell(
        n=16, shape=Box((0.5, 0.5, 0.5), (1 / 3, 0.25, 1 / 6)),
        symmetry_tags=((1, "pi"), (2, "pi"), (3, "pi")),
    )
    tensor, _ = assemble_A_hom(cell)
    spec = solve_resonances(cell, count=10)
    ev = GammaEvaluator(spectrum=spec)
    rep = check_symmetry(tensor, cell, tol)
    grep = check_gamma_symmetry(ev, cell, _gamma_samples(ev), tol)
    a = tensor.A
    offdiag = np.abs(a - np.diag(np.diag(a))).max() / np.abs(np.diag(a)).min()
    distinct = np.diff(np.sort(np.diag(a))).min() > 1e-4
    oks.append(rep.ok and all(r.ok for _, r in grep) and offdiag <= tol and distinct)
    msgs.append(f"pi-only box diagonal, off-diag {offdiag:.2e}, distinct entries {distinct}")

    ok = all(oks)
    assert report("criterion 6", ok, "; ".join(msgs) + " (tol 1e-6 relative)")


# --- criterion 7: dispersion closed forms ----------------------------------------------

def test_criterion_7_closed_forms(cubic16, cylinder16):
    rng = np.random.default_rng(7)
    diag = [1.3, 2.2, 3.1]
    from hcmaxwell.cell_problem import EffectiveTensor

    ten = EffectiveTensor(A=np.diag(diag), stiff=None)
    worst = 0.0
    for _ in range(100):
        mt = rng.standard_normal(3)
        mt /= np.linalg.norm(mt)
        fr = mode_frame(ten, mt, kernel_tol=1e-8)
        closed = np.sort(4 * np.pi**2 * characteristic_roots(diag, mt))
        worst = max(worst, np.abs(np.sort(fr.lambdas) - closed).max() / closed[-1])
    ok_char = worst <= 1e-12

    # isotropic reduced system on the cubic cell
    cell, tensor, spec, ev = cubic16
    a = tensor.A[0, 0]

    def beta(w, i=0):
        w2 = w**2
        return w2 + sum(w2**2 * b[i] ** 2 / (al - w2)
                        for al, b in zip(spec.alphas, spec.moments))

    frame = mode_frame(tensor, (1, 0, 0))
    omega_hi = 0.89 * math.sqrt(spec.alpha_gate)
    roots = solve_branch(frame, ev, (0.0, omega_hi))
    trans = [r for r in roots if r.kind == "transverse"]
    longi = [r for r in roots if r.kind == "longitudinal"]
    w_oracle = brentq(lambda w: beta(w) - 4 * np.pi**2 * a, 1e-3,
                      math.sqrt(spec.alphas[0]) * (1 - 1e-6), xtol=1e-13)
    ok_iso = (
        trans and trans[0].multiplicity == 2
        and abs(trans[0].omega - w_oracle) <= 1e-8 * w_oracle
        and longi and abs(beta(longi[0].omega)) <= 1e-6 * longi[0].omega ** 2
    )

    # axis-aligned cylinder case: no transverse roots where beta_2 < 0
    cell, tensor, spec, ev = cylinder16
    frame = mode_frame(tensor, (1, 0, 0))
    omega_hi = 0.89 * math.sqrt(spec.alpha_gate)
    croots = solve_branch(frame, ev, (0.0, omega_hi))

    def beta_i(w, i):
        w2 = w**2
        return w2 + sum(w2**2 * b[i] ** 2 / (al - w2)
                        for al, b in zip(spec.alphas, spec.moments))

    ok_case1 = True
    for r in croots:
        if r.kind == "transverse":
            ok_case1 &= beta_i(r.omega, 1) > 0
        if r.kind == "longitudinal":
            ok_case1 &= abs(beta_i(r.omega, 0)) <= 1e-6 * max(1.0, r.omega**2)
    ok = ok_char and ok_iso and bool(ok_case1)
    assert report(
        "criterion 7", ok,
        f"characteristic roots off by {worst:.2e} (tol 1e-12 rel, 100 draws); "
        f"isotropic transverse double root matches scalar oracle: {bool(ok_iso)}; "
        f"axis-aligned cylinder sign logic: {bool(ok_case1)}",
    )


# --- criterion 8: regime classification --------------------------------------------------

def test_criterion_8_regimes(cubic16, cylinder16):
    _, ten_c, spec_c, ev_c = cubic16
    omega_max = 0.85 * math.sqrt(spec_c.alpha_gate)
    _, labels, windows = scan_regimes(ev_c, omega_max, samples=2048)
    weak_cubic = sum(1 for w in windows if w.regime == "weak_gap")

    _, ten_y, spec_y, ev_y = cylinder16
    omega_max_y = 0.85 * math.sqrt(spec_y.alpha_gate)
    _, labels_y, windows_y = scan_regimes(ev_y, omega_max_y, samples=2048)
    weak_cyl = sum(1 for w in windows_y if w.regime == "weak_gap")

    table_c = band_structure(ten_c, ev_c, 1, omega_max)
    table_y = band_structure(ten_y, ev_y, 1, omega_max_y)
    clean = True
    for table, wins in ((table_c, windows), (table_y, windows_y)):
        for w in wins:
            if w.regime != "full_gap":
                continue
            clean &= not any(w.lo < r.omega < w.hi for r in table.rows)
    ok = weak_cubic == 0 and weak_cyl >= 1 and clean
    assert report(
        "criterion 8", ok,
        f"cubic weak-gap windows: {weak_cubic} (expect 0); cylinder weak-gap windows: "
        f"{weak_cyl} (expect >= 1); no emitted root inside any full gap: {clean}",
    )


# --- criterion 9: supercell desk-scale ladder ----------------------------------------------

def test_criterion_9_theorem_trend(ladder_report):
    rep = ladder_report
    ds = [r.d_p for r in rep.rungs]
    dist = [r.dist_h0 for r in rep.rungs]
    corr_last = rep.rungs[-1]
    monotone = all(ds[i + 1] <= ds[i] * 1.1 for i in range(len(ds) - 1))
    ok = (
        monotone
        and rep.fitted_rate >= 0.7
        and all(dist[i + 1] < dist[i] for i in range(len(dist) - 1))
        and corr_last.dist_corrected < corr_last.dist_h0
    )
    assert report(
        "criterion 9", ok,
        f"d_p = {[f'{d:.4f}' for d in ds]} monotone(10% slack)={monotone}, rate "
        f"{rep.fitted_rate:.2f} (>= 0.7); eigenspace distance {[f'{d:.3f}' for d in dist]} "
        f"decreasing; corrector improves at p=4: {corr_last.dist_corrected:.4f} < "
        f"{corr_last.dist_h0:.4f}",
    )


# --- criterion 10: determinism ---------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    from hcmaxwell.cli import main

    cfg = tmp_path / "c.toml"
    cfg.write_text(
        """
[geometry]
shape = "ball"
center = [0.5, 0.5, 0.5]
radius = 0.25
symmetry = [[1, "pi/2"], [2, "pi/2"], [3, "pi/2"]]
[grid]
n = 8
[material]
eps0 = 1.0
eps1 = 1.0
[spectrum]
count = 6
[dispersion]
m_max = 1
"""
    )
    outs = [tmp_path / f"r{i}" for i in range(2)]
    for out in outs:
        assert main(["ahom", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["bands", "--config", str(cfg), "--out", str(out)]) == 0
    identical = (
        (outs[0] / "ahom.json").read_bytes() == (outs[1] / "ahom.json").read_bytes()
        and (outs[0] / "bands.csv").read_bytes() == (outs[1] / "bands.csv").read_bytes()
        and (outs[0] / "gaps.json").read_bytes() == (outs[1] / "gaps.json").read_bytes()
    )
    for seed, out in ((1, tmp_path / "s1"), (2, tmp_path / "s2")):
        assert main(["spectrum", "--config", str(cfg), "--out", str(out),
                     "--seed", str(seed)]) == 0
    a1 = np.array(json.loads((tmp_path / "s1" / "spectrum.json").read_text())["alphas"])
    a2 = np.array(json.loads((tmp_path / "s2" / "spectrum.json").read_text())["alphas"])
    seed_ok = np.allclose(a1, a2, rtol=1e-8)
    ok = identical and bool(seed_ok)
    assert report(
        "criterion 10", ok,
        f"repeated runs byte-identical: {identical}; seed change shifts alphas by "
        f"{np.abs(a1 - a2).max():.2e} (within tolerance): {bool(seed_ok)}",
    )
