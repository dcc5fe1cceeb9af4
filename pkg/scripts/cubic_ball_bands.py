#!/usr/bin/env python3
"""Band table and gap report for the cubic ball composite.

Runs the full pipeline at a configurable resolution and prints the distinct
frequency levels with multiplicities and regimes; artifacts land in out/.
"""
import argparse
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hcmaxwell.geometry import Ball, MaterialCell
from hcmaxwell.cell_problem import assemble_A_hom
from hcmaxwell.resonances import solve_resonances
from hcmaxwell.gamma import GammaEvaluator
from hcmaxwell.dispersion import band_structure, scan_regimes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--radius", type=float, default=0.25)
    ap.add_argument("--count", type=int, default=12)
    ap.add_argument("--m-max", type=int, default=1)
    args = ap.parse_args()

    cell = MaterialCell(n=args.n, shape=Ball((0.5, 0.5, 0.5), args.radius))
    tensor, _ = assemble_A_hom(cell)
    spec = solve_resonances(cell, count=args.count)
    ev = GammaEvaluator(spectrum=spec)
    omega_max = 0.85 * math.sqrt(spec.alpha_gate)

    print(f"A_hom = {tensor.A[0, 0]:.6f} I,  alpha_1 = {spec.alphas[0]:.3f}")
    table = band_structure(tensor, ev, m_max=args.m_max, omega_max=omega_max)
    print(f"{'omega':>10} {'mult':>5} {'regime':>12}  wave vectors")
    for lv in table.levels:
        print(f"{lv['omega']:10.5f} {lv['multiplicity']:5d} {lv['regime']:>12}  "
              f"{len(lv['wave_vectors'])} vectors")
    for fb in table.flat_bands:
        print(f"{fb.omega:10.5f} {'inf':>5} {fb.regime:>12}")
    _, _, windows = scan_regimes(ev, omega_max, samples=512)
    print("\nregime windows:")
    for w in windows:
        print(f"  [{w.lo:8.4f}, {w.hi:8.4f}]  {w.regime}")


if __name__ == "__main__":
    main()
