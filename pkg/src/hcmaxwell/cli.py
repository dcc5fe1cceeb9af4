"""Command-line pipeline: config ingestion, orchestration, artifact emission.

Subcommands: ahom, spectrum, gamma, bands, gaps, validate, symmetry-check.
Config is a TOML file with [geometry], [grid], [material], [spectrum],
[dispersion] and [validate] sections; outputs are CSV tables (17 significant
digits, '#' header comments), JSON reports and raw little-endian float64
field dumps with JSON headers.  Every artifact embeds the config hash and
grid parameters.  Config errors exit 2 before any file is written; solver
failures exit 3.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .geometry import Ball, Box, Cylinder, GeometryError, MaterialCell, build_indicator
from .cell_problem import (
    CorrectorN,
    EffectiveTensor,
    assemble_A_hom,
    check_symmetry,
    effective_tensor,
)
from .resonances import ResonanceSpectrum, solve_resonances
from .gamma import GammaEvaluator, PoleProximityError, check_gamma_symmetry, definiteness
from .dispersion import (
    ScanConfig,
    band_structure,
    mode_frame,
    reconstruct_eigenfunction,
    scan_regimes,
    solve_branch,
)
from .solvers import SolverError
from .supercell import run_validation_ladder


class ConfigError(ValueError):
    """The run configuration failed validation."""


# --- configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    cell: MaterialCell
    n_cell: int
    spectrum_count: int
    spectrum_method: str
    zero_mean_tol: float
    dump_fields: bool
    m_max: int
    omega_max: Optional[float]        # None = auto from the truncation gate
    scan_samples: int
    gap_scan_samples: int
    ladder: tuple
    target_omega: Optional[float]
    target_m: tuple
    seed: int = 0
    threads: int = 1
    raw_text: bytes = b""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_text).hexdigest()


def _expression_sampler(expr: str):
    allowed = {
        name: getattr(np, name)
        for name in ("sin", "cos", "tan", "exp", "sqrt", "abs", "minimum", "maximum", "where")
    }
    allowed["pi"] = np.pi
    code = compile(expr, "<material expression>", "eval")
    for name in code.co_names:
        if name not in allowed and name not in ("x", "y", "z"):
            raise ConfigError(f"material expression uses unknown name {name!r}")

    def sampler(pts: np.ndarray) -> np.ndarray:
        env = dict(allowed)
        env.update(x=pts[..., 0], y=pts[..., 1], z=pts[..., 2])
        return np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float)

    return sampler


def _material_from(value):
    if isinstance(value, (int, float)):
        if value <= 0:
            raise ConfigError(f"permittivity must be positive, got {value}")
        return float(value)
    if isinstance(value, str):
        return _expression_sampler(value)
    raise ConfigError(f"permittivity must be a number or expression, got {value!r}")


def _shape_from(geo: dict):
    kind = geo.get("shape", "none")
    center = tuple(geo.get("center", (0.5, 0.5, 0.5)))
    try:
        if kind == "none":
            return None
        if kind == "ball":
            return Ball(center, float(geo["radius"]))
        if kind == "box":
            return Box(center, tuple(geo["half_widths"]))
        if kind == "cylinder":
            return Cylinder(
                int(geo.get("axis", 1)), center,
                float(geo["radius"]), float(geo["half_height"]),
            )
    except KeyError as exc:
        raise ConfigError(f"geometry.{exc.args[0]} is required for shape {kind!r}") from exc
    raise ConfigError(f"unknown geometry.shape {kind!r}")


def load_config(path: Path, seed: int = 0, threads: int = 1) -> RunConfig:
    try:
        raw = Path(path).read_bytes()
        data = tomllib.loads(raw.decode())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc

    geo = data.get("geometry", {})
    grid = data.get("grid", {})
    mat = data.get("material", {})
    spec = data.get("spectrum", {})
    disp = data.get("dispersion", {})
    val = data.get("validate", {})

    symmetry = tuple(
        (int(axis), str(angle)) for axis, angle in geo.get("symmetry", [])
    )
    n = int(grid.get("n", 16))
    try:
        cell = MaterialCell(
            n=n,
            shape=_shape_from(geo),
            eps0=_material_from(mat.get("eps0", 1.0)),
            eps1=_material_from(mat.get("eps1", 1.0)),
            symmetry_tags=symmetry,
            smooth_sigma=float(geo.get("smooth_sigma", 0.0)),
        )
        build_indicator(cell)
    except GeometryError as exc:
        raise ConfigError(str(exc)) from exc

    omega_max = disp.get("omega_max", "auto")
    if omega_max == "auto":
        omega_max = None
    elif not isinstance(omega_max, (int, float)) or omega_max <= 0:
        raise ConfigError("dispersion.omega_max must be positive or 'auto'")

    target_omega = val.get("target_omega", "auto")
    if target_omega == "auto":
        target_omega = None
    elif not isinstance(target_omega, (int, float)) or target_omega <= 0:
        raise ConfigError("validate.target_omega must be positive or 'auto'")

    count = int(spec.get("count", 20))
    if count < 1:
        raise ConfigError("spectrum.count must be >= 1")
    zero_tol = float(spec.get("zero_mean_tol", 1e-8))
    if zero_tol < 0:
        raise ConfigError("spectrum.zero_mean_tol must be nonnegative")

    ladder = tuple(int(p) for p in val.get("ladder", (2, 3, 4)))
    if any(p < 1 for p in ladder):
        raise ConfigError("validate.ladder entries must be positive integers")

    return RunConfig(
        cell=cell,
        n_cell=int(grid.get("n_cell", 8)),
        spectrum_count=count,
        spectrum_method=str(spec.get("method", "auto")),
        zero_mean_tol=zero_tol,
        dump_fields=bool(spec.get("dump_fields", False)),
        m_max=int(disp.get("m_max", 1)),
        omega_max=omega_max,
        scan_samples=int(disp.get("scan_samples", 64)),
        gap_scan_samples=int(disp.get("gap_scan_samples", 2048)),
        ladder=ladder,
        target_omega=target_omega,
        target_m=tuple(int(c) for c in val.get("target_m", (1, 1, 0))),
        seed=seed,
        threads=threads,
        raw_text=raw,
    )


# --- artifact writers ----------------------------------------------------------

def _meta(cfg: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "config_sha256": cfg.config_hash,
        "grid_n": cfg.cell.n,
        "grid_n_cell": cfg.n_cell,
        "seed": cfg.seed,
        "package_version": __version__,
        "units": "cell period = 1; omega is angular frequency, alphas are frequency^2",
    }


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def write_json(path: Path, payload: dict, cfg: RunConfig, command: str):
    body = {"meta": _meta(cfg, command), **_jsonify(payload)}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header_notes: list, columns: list, rows: list,
              cfg: RunConfig, command: str):
    lines = [f"# {command} | config {cfg.config_hash[:16]} | n={cfg.cell.n}"]
    lines += [f"# {note}" for note in header_notes]
    lines.append(",".join(columns))
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(f"{float(v):.17g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def write_field_dump(base: Path, name: str, array: np.ndarray, cfg: RunConfig, command: str):
    """Raw little-endian float64 dump plus a JSON header describing it."""
    data = np.ascontiguousarray(array, dtype="<f8")
    bin_path = base / f"{name}.bin"
    data.tofile(bin_path)
    write_json(
        base / f"{name}.json",
        {
            "file": bin_path.name,
            "dtype": "<f8",
            "order": "C",
            "shape": list(data.shape),
            "layout": "edge-ordered x,y,z components, row-major, little-endian float64",
        },
        cfg,
        command,
    )


# --- shared pipeline ------------------------------------------------------------

class Pipeline:
    """Lazily computed, cached stages shared by the subcommands."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._tensor: Optional[EffectiveTensor] = None
        self._corrector: Optional[CorrectorN] = None
        self._spectrum: Optional[ResonanceSpectrum] = None
        self._evaluator: Optional[GammaEvaluator] = None

    def tensor(self) -> EffectiveTensor:
        if self._tensor is None:
            ten, corr = assemble_A_hom(self.cfg.cell, threads=self.cfg.threads)
            self._tensor, self._corrector = ten, corr
        return self._tensor

    def corrector(self) -> CorrectorN:
        self.tensor()
        return self._corrector

    def full_tensor(self) -> EffectiveTensor:
        ten = effective_tensor(self.cfg.cell, threads=self.cfg.threads)
        self._tensor = ten
        return ten

    def spectrum(self) -> ResonanceSpectrum:
        if self._spectrum is None:
            self._spectrum = solve_resonances(
                self.cfg.cell,
                count=self.cfg.spectrum_count,
                method=self.cfg.spectrum_method,
                seed=self.cfg.seed,
                zero_mean_tol=self.cfg.zero_mean_tol,
            )
        return self._spectrum

    def evaluator(self) -> GammaEvaluator:
        if self._evaluator is None:
            self._evaluator = GammaEvaluator(spectrum=self.spectrum())
        return self._evaluator

    def omega_max(self) -> float:
        if self.cfg.omega_max is not None:
            return self.cfg.omega_max
        return 0.85 * math.sqrt(self.spectrum().alpha_gate)

    def scan_config(self) -> ScanConfig:
        return ScanConfig(samples_per_interval=self.cfg.scan_samples)


# --- subcommands -----------------------------------------------------------------

def cmd_ahom(pipe: Pipeline, out: Path) -> list:
    ten = pipe.full_tensor()
    payload = {
        "A_hom": ten.A,
        "eps_stiff": ten.stiff,
        "product_residual": ten.residuals["product_residual"],
        "asymmetry": ten.residuals["asymmetry"],
        "cg_iterations": ten.residuals["cg_iterations"],
        "stiff_cg_iterations": ten.residuals["stiff_cg_iterations"],
    }
    write_json(out / "ahom.json", payload, pipe.cfg, "ahom")
    return ["ahom.json"]


def cmd_spectrum(pipe: Pipeline, out: Path) -> list:
    spec = pipe.spectrum()
    payload = {
        "alphas": spec.alphas,
        "moments": spec.moments,
        "zero_mean_flags": spec.zero_mean_flags,
        "degenerate_clusters": spec.clusters,
        "alpha_gate": spec.alpha_gate,
    }
    write_json(out / "spectrum.json", payload, pipe.cfg, "spectrum")
    written = ["spectrum.json"]
    if pipe.cfg.dump_fields:
        fields = np.stack([spec.phi_field(k) for k in range(spec.count)])
        write_field_dump(out, "phi_fields", fields, pipe.cfg, "spectrum")
        written += ["phi_fields.bin", "phi_fields.json"]
    return written


def _parse_omega_grid(text: str) -> np.ndarray:
    try:
        lo, hi, steps = text.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError as exc:
        raise ConfigError(f"--omega-grid expects lo:hi:steps, got {text!r}") from exc
    if not (0 <= lo < hi) or steps < 1:
        raise ConfigError("--omega-grid needs 0 <= lo < hi and steps >= 1")
    return np.linspace(lo, hi, steps)


def cmd_gamma(pipe: Pipeline, out: Path, omega_grid: Optional[str]) -> list:
    ev = pipe.evaluator()
    grid = (
        _parse_omega_grid(omega_grid)
        if omega_grid
        else np.linspace(pipe.omega_max() / 64, pipe.omega_max(), 64)
    )
    rows = []
    for w in grid:
        if w <= 0 or ev.guard_violation(w) is not None:
            continue
        g = ev.gamma_series(w)
        cls = definiteness(g, tol=1e-10 * max(1.0, float(np.abs(g).max())))
        poles = ev.poles
        nearest = float(poles[np.argmin(np.abs(poles - w**2))]) if poles.size else float("nan")
        rows.append([w, *g.ravel(), cls.label, nearest, ev.tail_bound(w)])
    cols = ["omega"] + [f"gamma_{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    cols += ["definiteness", "nearest_pole_alpha", "truncation_tail_bound"]
    write_csv(
        out / "gamma.csv",
        ["dispersion matrix on an omega grid; entries are dimensionless frequency^2",
         "tail bound controls the dropped part of the resonance series"],
        cols, rows, pipe.cfg, "gamma",
    )
    return ["gamma.csv"]


def _gap_report(pipe: Pipeline) -> dict:
    ev = pipe.evaluator()
    omega_max = pipe.omega_max()
    _, _, windows = scan_regimes(ev, omega_max, samples=pipe.cfg.gap_scan_samples)
    return {
        "omega_max": omega_max,
        "windows": [
            {
                "lo": w.lo,
                "hi": w.hi,
                "regime": w.regime,
                "propagating_subspace": w.propagating_subspace,
            }
            for w in windows
        ],
        "weak_gap_count": sum(1 for w in windows if w.regime == "weak_gap"),
        "full_gap_count": sum(1 for w in windows if w.regime == "full_gap"),
    }


def cmd_bands(pipe: Pipeline, out: Path) -> list:
    ten = pipe.tensor()
    ev = pipe.evaluator()
    table = band_structure(ten, ev, pipe.cfg.m_max, pipe.omega_max(), pipe.scan_config())
    rows = []
    for r in table.rows:
        rows.append([
            r.m[0], r.m[1], r.m[2], r.omega, r.multiplicity, r.kind, r.regime,
            r.residual_mode, r.residual_solv, r.det_residual,
            *np.real(r.u_basis[:, 0]),
        ])
    for fb in table.flat_bands:
        rows.append([0, 0, 0, fb.omega, "inf", "flat", fb.regime, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    rows.sort(key=lambda row: row[3])
    cols = ["m1", "m2", "m3", "omega", "multiplicity", "kind", "regime",
            "residual_mode", "residual_solv", "det_residual", "u1", "u2", "u3"]
    write_csv(
        out / "bands.csv",
        ["dispersion roots; omega in angular frequency units of the unit cell",
         "flat rows mark zero-mean resonances (infinite multiplicity)"],
        cols, rows, pipe.cfg, "bands",
    )
    write_json(out / "gaps.json", _gap_report(pipe), pipe.cfg, "bands")
    return ["bands.csv", "gaps.json"]


def cmd_gaps(pipe: Pipeline, out: Path) -> list:
    # band table plus the dense-grid interval extraction
    written = cmd_bands(pipe, out)
    write_json(out / "gaps.json", _gap_report(pipe), pipe.cfg, "gaps")
    return written


def _auto_target(pipe: Pipeline):
    ev = pipe.evaluator()
    ten = pipe.tensor()
    frame = mode_frame(ten, pipe.cfg.target_m)
    roots = solve_branch(frame, ev, (0.0, pipe.omega_max()), pipe.scan_config())
    transverse = [r for r in roots if r.kind == "transverse"]
    if not transverse:
        raise SolverError(f"no transverse root for m={pipe.cfg.target_m} below omega_max")
    root = transverse[0]
    return frame, root


def cmd_validate(pipe: Pipeline, out: Path, target_omega: Optional[float],
                 ladder: Optional[str]) -> list:
    cfg = pipe.cfg
    rungs = tuple(int(p) for p in ladder.split(",")) if ladder else cfg.ladder
    cell = cfg.cell
    if cell.n != cfg.n_cell:
        cell = dataclasses.replace(cell, n=cfg.n_cell)
        pipe = Pipeline(dataclasses.replace(cfg, cell=cell))
    ten = pipe.tensor()
    ev = pipe.evaluator()
    frame, root = _auto_target(pipe)
    omega = target_omega if target_omega is not None else cfg.target_omega
    if omega is None:
        omega = root.omega
    mode = reconstruct_eigenfunction(frame, ev, omega, root.u_basis[:, 0])
    report = run_validation_ladder(
        cell, mode, pipe.corrector(), ladder=rungs, seed=cfg.seed, tensor=ten
    )
    write_json(out / "validate.json", report.as_dict(), cfg, "validate")
    return ["validate.json"]


def cmd_symmetry_check(pipe: Pipeline, out: Path) -> list:
    cfg = pipe.cfg
    if not cfg.cell.symmetry_tags:
        raise ConfigError("symmetry-check requires geometry.symmetry tags")
    ten = pipe.tensor()
    rep = check_symmetry(ten, cfg.cell)
    ev = pipe.evaluator()
    a1 = ev.spectrum.alphas[0]
    samples = [0.3 * math.sqrt(a1), 0.6 * math.sqrt(a1), 0.9 * math.sqrt(a1)]
    samples = [w for w in samples if ev.guard_violation(w) is None]
    gamma_reports = check_gamma_symmetry(ev, cfg.cell, samples)
    payload = {
        "A_hom": ten.A,
        "tensor_symmetry": rep.entries,
        "tensor_ok": rep.ok,
        "gamma_symmetry": [
            {"omega": w, "entries": r.entries, "ok": r.ok} for w, r in gamma_reports
        ],
        "gamma_ok": all(r.ok for _, r in gamma_reports),
    }
    write_json(out / "symmetry.json", payload, cfg, "symmetry-check")
    return ["symmetry.json"]


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hcmaxwell",
        description="Homogenised spectra of high-contrast periodic Maxwell composites",
    )
    parser.add_argument("command", choices=[
        "ahom", "spectrum", "gamma", "bands", "gaps", "validate", "symmetry-check",
    ])
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=Path("out"))
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--omega-grid", default=None, help="gamma: lo:hi:steps")
    parser.add_argument("--target-omega", type=float, default=None, help="validate")
    parser.add_argument("--ladder", default=None, help="validate: e.g. 2,3,4")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, threads=max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    pipe = Pipeline(cfg)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "ahom":
            written = cmd_ahom(pipe, out)
        elif args.command == "spectrum":
            written = cmd_spectrum(pipe, out)
        elif args.command == "gamma":
            written = cmd_gamma(pipe, out, args.omega_grid)
        elif args.command == "bands":
            written = cmd_bands(pipe, out)
        elif args.command == "gaps":
            written = cmd_gaps(pipe, out)
        elif args.command == "validate":
            written = cmd_validate(pipe, out, args.target_omega, args.ladder)
        else:
            written = cmd_symmetry_check(pipe, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, PoleProximityError, MemoryError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    for name in written:
        print(out / name)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
