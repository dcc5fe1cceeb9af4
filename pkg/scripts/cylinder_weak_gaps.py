#!/usr/bin/env python3
"""Locate weak band gaps for the cylindrical inclusion.

The axial and transverse dipole resonances split, so the diagonal entries of
the dispersion matrix change sign at different frequencies; windows with
mixed signs restrict propagation to a polarisation subspace.
"""
import argparse
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from hcmaxwell.geometry import Cylinder, MaterialCell
from hcmaxwell.resonances import solve_resonances
from hcmaxwell.gamma import GammaEvaluator
from hcmaxwell.dispersion import scan_regimes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--count", type=int, default=16)
    ap.add_argument("--samples", type=int, default=2048)
    args = ap.parse_args()

    cell = MaterialCell(
        n=args.n,
        shape=Cylinder(1, (0.5, 0.5, 0.5), 0.2, 0.3),
        symmetry_tags=((1, "pi/2"), (2, "pi"), (3, "pi")),
    )
    spec = solve_resonances(cell, count=args.count)
    ev = GammaEvaluator(spectrum=spec)
    omega_max = 0.85 * math.sqrt(spec.alpha_gate)
    print("resonances:", np.round(spec.alphas, 3))
    _, _, windows = scan_regimes(ev, omega_max, samples=args.samples)
    for w in windows:
        line = f"[{w.lo:8.4f}, {w.hi:8.4f}]  {w.regime}"
        if w.regime == "weak_gap" and w.propagating_subspace is not None:
            line += f"  propagating dirs:\n{np.round(w.propagating_subspace.T, 4)}"
        print(line)


if __name__ == "__main__":
    main()
