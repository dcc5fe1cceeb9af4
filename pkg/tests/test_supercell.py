import math

import numpy as np
import pytest

from hcmaxwell import grid_ops as gops
from hcmaxwell.geometry import Ball, MaterialCell
from hcmaxwell.supercell import (
    assemble_heterogeneous,
    corrector_augmented_field,
    eigenspace_distance,
    estimate_mode_count,
    htilde_relative_error,
    lowest_modes,
    nearest_eigenvalues,
    sample_two_scale,
)


@pytest.fixture(scope="module")
def ball_cell():
    return MaterialCell(n=8, shape=Ball((0.5, 0.5, 0.5), 0.25))


class TestAssembly:
    def test_p1_reproduces_unit_cell(self, ball_cell):
        op = assemble_heterogeneous(ball_cell, p=1)
        assert op.grid_n == ball_cell.n
        assert op.eta == 1.0
        # with eta = 1 the inclusion coefficient is just 1/eps0
        from hcmaxwell.geometry import face_inside_mask

        inside = face_inside_mask(ball_cell)
        assert np.allclose(op.inv_coeff_face[inside], 1.0)

    def test_p2_tiling_invariance(self, ball_cell):
        op = assemble_heterogeneous(ball_cell, p=2)
        w = op.inv_coeff_face
        for axis in (1, 2, 3):
            assert np.array_equal(w, np.roll(w, ball_cell.n, axis=axis))

    def test_contrast_scaling(self, ball_cell):
        from hcmaxwell.geometry import face_inside_mask

        inside = face_inside_mask(ball_cell)
        tile = np.concatenate([inside] * 1)
        op2 = assemble_heterogeneous(ball_cell, p=2)
        inc_vals = op2.inv_coeff_face[np.stack([np.tile(inside[a], (2, 2, 2)) for a in range(3)])]
        assert np.allclose(inc_vals, 0.25)

    def test_memory_cap(self, ball_cell):
        with pytest.raises(MemoryError):
            assemble_heterogeneous(ball_cell, p=9, grid_cap=64)

    def test_operator_symmetric_nonnegative(self, ball_cell, rng):
        op = assemble_heterogeneous(ball_cell, p=2)
        n = op.grid_n
        for _ in range(100):
            u = rng.standard_normal((3, n, n, n))
            assert op.rayleigh(u) >= -1e-12
        u, v = rng.standard_normal((2, 3, n, n, n))
        lhs = np.vdot(op.apply(u), v)
        rhs = np.vdot(u, op.apply(v))
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


class TestEigensolve:
    def test_uniform_matches_discrete_symbol(self):
        cell = MaterialCell(n=8, shape=None)
        op = assemble_heterogeneous(cell, p=2)
        modes = lowest_modes(op, count=16, seed=0)
        big_n = op.grid_n
        lam1 = (2 * big_n * math.sin(math.pi / big_n)) ** 2
        assert np.allclose(modes.omegas[:3], 0.0, atol=1e-5)
        assert np.allclose(modes.omegas[3:15] ** 2, lam1, rtol=1e-7)

    def test_solenoidal_eigenfields(self, ball_cell):
        op = assemble_heterogeneous(ball_cell, p=2)
        modes = lowest_modes(op, count=8, seed=0)
        n = op.grid_n
        for k in (3, 5, 7):
            u = modes.fields[:, k].reshape(3, n, n, n)
            div = gops.div_bwd(u, op.h)
            assert np.abs(div).max() <= 1e-8 * np.abs(u).max() / op.h

    def test_nearest_selection(self, ball_cell):
        op = assemble_heterogeneous(ball_cell, p=2)
        pairs, modes = nearest_eigenvalues(op, omega_target=5.0, count=3, seed=0)
        dists = [abs(w - 5.0) for w, _ in pairs]
        assert dists == sorted(dists)
        assert modes.omegas[-1] > 5.0

    def test_target_must_be_positive(self, ball_cell):
        op = assemble_heterogeneous(ball_cell, p=2)
        with pytest.raises(ValueError):
            nearest_eigenvalues(op, omega_target=-1.0)


class TestTwoScaleSampling:
    def _toy_mode(self, n_cell, m=(1, 0, 0)):
        from hcmaxwell.dispersion import TwoScaleMode

        profile = np.zeros((3, n_cell, n_cell, n_cell), dtype=complex)
        profile[1] = 1.0  # constant transverse polarisation
        return TwoScaleMode(
            m=m, omega=2 * math.pi, u_hat=np.array([0, 1.0, 0], dtype=complex),
            profile=profile, b_fields=np.zeros((3, 3, n_cell, n_cell, n_cell)),
            potentials=np.zeros((3, n_cell, n_cell, n_cell)), residuals={},
        )

    def test_constant_profile_gives_plane_wave(self):
        from hcmaxwell.geometry import edge_midpoints

        mode = self._toy_mode(8)
        out = sample_two_scale(mode, p=2)
        n = 16
        x = edge_midpoints(n, 1)
        expect = np.exp(2j * np.pi * x[..., 0])
        assert np.allclose(out[1], expect, atol=1e-13)
        assert np.allclose(out[0], 0.0) and np.allclose(out[2], 0.0)

    def test_corrector_grid_mismatch_rejected(self, ball_cell):
        from hcmaxwell.cell_problem import solve_corrector_columns

        mode = self._toy_mode(8)
        corr16 = solve_corrector_columns(
            MaterialCell(n=16, shape=Ball((0.5, 0.5, 0.5), 0.25))
        )
        with pytest.raises(ValueError):
            corrector_augmented_field(mode, corr16, eta=0.5)

    def test_zero_frequency_corrector_preserves_constant(self, ball_cell):
        from hcmaxwell.cell_problem import solve_corrector_columns

        mode = self._toy_mode(8, m=(0, 0, 1))
        mode.m = (0, 0, 0)  # constant macro field: curl u = 0, grad v = 0
        corr = solve_corrector_columns(ball_cell)
        out = corrector_augmented_field(mode, corr, eta=0.5)
        base = sample_two_scale(mode, p=2)
        assert np.allclose(out, base, atol=1e-12)

    def test_eigenspace_distance_basics(self, rng):
        basis = np.linalg.qr(rng.standard_normal((50, 4)))[0]
        inside = basis @ rng.standard_normal(4)
        assert eigenspace_distance(basis, inside) <= 1e-12
        v = rng.standard_normal(50)
        d = eigenspace_distance(basis, v)
        assert 0 <= d <= 1.0


class TestDiagnostics:
    def test_mode_count_estimate(self, box8_tensor):
        low = estimate_mode_count(box8_tensor, omega=2.0)
        high = estimate_mode_count(box8_tensor, omega=9.0)
        assert low == 3  # only the zero modes below a tiny target
        assert high > 12

    def test_htilde_uniform_identity_mode(self):
        # for the uniform medium an exact discrete eigenfield makes
        # (A + 1) H = (lam + 1) H, so the resolvent error is tiny
        cell = MaterialCell(n=8, shape=None)
        op = assemble_heterogeneous(cell, p=2)
        modes = lowest_modes(op, count=6, seed=0)
        n = op.grid_n
        u = modes.fields[:, 4].reshape(3, n, n, n).astype(complex)
        lam = modes.omegas[4] ** 2
        err = htilde_relative_error(op, u, math.sqrt(lam))
        assert err <= 1e-5
