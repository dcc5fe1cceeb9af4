import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings as hypothesis_settings

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

hypothesis_settings.register_profile("deterministic", derandomize=True, deadline=None)
hypothesis_settings.load_profile("deterministic")

from hcmaxwell.geometry import Ball, Box, Cylinder, MaterialCell
from hcmaxwell.cell_problem import assemble_A_hom
from hcmaxwell.resonances import solve_resonances
from hcmaxwell.gamma import GammaEvaluator


@pytest.fixture(scope="session")
def ball8_cell():
    return MaterialCell(
        n=8, shape=Ball((0.5, 0.5, 0.5), 0.25),
        symmetry_tags=((1, "pi/2"), (2, "pi/2"), (3, "pi/2")),
    )


@pytest.fixture(scope="session")
def box8_cell():
    return MaterialCell(n=8, shape=Box((0.5, 0.5, 0.5), (0.25, 0.25, 0.25)))


@pytest.fixture(scope="session")
def cylinder12_cell():
    return MaterialCell(
        n=12, shape=Cylinder(1, (0.5, 0.5, 0.5), 0.2, 0.3),
        symmetry_tags=((1, "pi/2"), (2, "pi"), (3, "pi")),
    )


@pytest.fixture(scope="session")
def box8_spectrum(box8_cell):
    return solve_resonances(box8_cell, count=10, method="dense")


@pytest.fixture(scope="session")
def box8_full_spectrum(box8_cell):
    from hcmaxwell.resonances import assemble_operators

    ops = assemble_operators(box8_cell)
    avail = ops.sdim - ops.grad_basis.shape[1]
    return solve_resonances(box8_cell, count=avail, method="dense")


@pytest.fixture(scope="session")
def box8_evaluator(box8_full_spectrum):
    return GammaEvaluator(spectrum=box8_full_spectrum)


@pytest.fixture(scope="session")
def box8_tensor(box8_cell):
    tensor, corrector = assemble_A_hom(box8_cell)
    return tensor


@pytest.fixture(scope="session")
def cylinder12_spectrum(cylinder12_cell):
    return solve_resonances(cylinder12_cell, count=14, method="dense")


@pytest.fixture(scope="session")
def cylinder12_evaluator(cylinder12_spectrum):
    return GammaEvaluator(spectrum=cylinder12_spectrum)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
