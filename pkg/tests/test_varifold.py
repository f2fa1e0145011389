import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from fbaclab.energy import in_band
from fbaclab.errors import ConfigurationError, InputError
from fbaclab.gamma import disc, recovery_sequence
from fbaclab.grid import Field, Grid, VectorField, integrate
from fbaclab.solver import bump_field, exact_profile, first_variation, multi_sheet_profile
from fbaclab.varifold import (
    OMEGA,
    VARIFOLD_IDENTITY_C,
    ball_mass,
    density_and_sheets,
    discrepancy_variation,
    first_variation_varifold,
    line_crossings,
    local_normal,
    monotonicity_profile,
    normal_field,
    parity_audit,
    samples_to_csv,
    tilt_excess,
    varifold_identity_check,
)


def unit(h):
    return Grid.from_spacing(((0, 1), (0, 1)), h)


@pytest.fixture(scope="module")
def flat_fine():
    eps = 0.01
    g = unit(eps / 8)
    return eps, exact_profile(g, eps, (0, 1), 0.5)


class TestNormal:
    def test_aligned_with_profile(self):
        g = unit(0.01)
        u = exact_profile(g, 0.1, (0, 1), 0.5)
        nu = normal_field(u, 0.1).components
        band = in_band(u.values)
        np.testing.assert_allclose(nu[1][band], 1.0, atol=1e-12)
        np.testing.assert_allclose(nu[0][band], 0.0, atol=1e-12)

    def test_constant_gives_zero(self):
        g = unit(0.05)
        assert np.all(normal_field(Field(g, np.full(g.shape, 0.2)), 0.1).components == 0)

    def test_radial(self):
        eps = 0.02
        g = unit(eps / 8)
        u = recovery_sequence(disc(g, (0.5, 0.5), 0.25), eps)
        nu = normal_field(u, eps)
        band = in_band(u.values) & (nu.norm() > 0)
        np.testing.assert_allclose(nu.norm()[band], 1.0, atol=1e-12)
        X, Y = g.mesh()
        radial = np.stack([X - 0.5, Y - 0.5])
        radial /= np.maximum(np.sqrt(np.sum(radial**2, axis=0)), 1e-300)
        cos = np.abs(np.sum(nu.components * radial, axis=0))[band]
        # interior of the band sees the exact radial distance gradient
        assert np.median(cos) > 0.999


class TestBallMass:
    def test_pure_phase(self):
        g = unit(0.01)
        m, covered = ball_mass(Field(g, np.ones(g.shape)), 0.05, (0.5, 0.5), 0.2)
        assert m == 0.0 and covered

    def test_chord(self, flat_fine):
        eps, u = flat_fine
        m, _ = ball_mass(u, eps, (0.5, 0.5), 0.2)
        assert m == pytest.approx(4 * 2 * 0.2, rel=0.05)

    def test_disjoint(self):
        g = unit(0.005)
        u = exact_profile(g, 0.02, (0, 1), 0.8)
        m, _ = ball_mass(u, 0.02, (0.5, 0.3), 0.2)
        assert m == 0.0

    def test_clipped_ball(self):
        g = unit(0.01)
        u = exact_profile(g, 0.05, (0, 1), 0.5)
        m, covered = ball_mass(u, 0.05, (0.05, 0.5), 0.2)
        assert not covered and m > 0

    def test_radius_must_exceed_two_cells(self):
        g = unit(0.01)
        with pytest.raises(ConfigurationError):
            ball_mass(Field(g, np.zeros(g.shape)), 0.1, (0.5, 0.5), 0.015)


class TestMonotonicity:
    def test_flat_ratio_constant(self, flat_fine):
        eps, u = flat_fine
        s = monotonicity_profile(u, eps, (0.5, 0.5), [0.05, 0.1, 0.15, 0.2])
        np.testing.assert_allclose(s.ratios, 8.0, rtol=0.05)
        assert s.violations == []
        assert s.masses == sorted(s.masses)

    def test_off_band_center(self, flat_fine):
        eps, u = flat_fine
        delta0 = 0.1
        radii = [0.04, 0.06, 0.08, 0.12, 0.16, 0.2, 0.3]
        s = monotonicity_profile(u, eps, (0.5, 0.5 + delta0), radii)
        assert s.ratios[0] == 0.0 and s.ratios[1] == 0.0
        assert s.violations == []
        assert all(b >= a for a, b in zip(s.ratios, s.ratios[1:]))

    def test_pure_phase(self):
        g = unit(0.01)
        s = monotonicity_profile(Field(g, -np.ones(g.shape)), 0.02, (0.5, 0.5), [0.1, 0.2])
        assert s.ratios == [0.0, 0.0]

    @pytest.mark.parametrize("radii", [[0.2, 0.1], [0.01, 0.1], [0.1, 0.6], []])
    def test_preconditions(self, radii):
        g = unit(0.01)
        with pytest.raises(ConfigurationError):
            monotonicity_profile(Field(g, np.zeros(g.shape)), 0.01, (0.5, 0.5), radii)

    def test_sample_serialization(self, flat_fine):
        eps, u = flat_fine
        s = monotonicity_profile(u, eps, (0.5, 0.5), [0.05, 0.1])
        assert json.loads(s.to_json())["radii"] == [0.05, 0.1]
        text = samples_to_csv([s])
        assert len(text.strip().splitlines()) == 3


class TestFirstVariationVarifold:
    def test_zero_field(self):
        g = unit(0.01)
        u = exact_profile(g, 0.05, (0, 1), 0.5)
        zero = VectorField(g, np.zeros((2,) + g.shape))
        assert first_variation_varifold(u, 0.05, zero) == 0.0

    def test_rigid_translation_rejected(self):
        g = unit(0.05)
        with pytest.raises(InputError):
            first_variation_varifold(Field(g, np.zeros(g.shape)), 0.1,
                                     VectorField(g, np.ones((2,) + g.shape)))

    @pytest.mark.parametrize("angle", [0.0, 0.3, 0.8])
    def test_identity_with_energy_variation(self, angle):
        eps = 0.04
        g = unit(eps / 8)
        n = (math.sin(angle), math.cos(angle))
        u = exact_profile(g, eps, n, n[0] * 0.5 + n[1] * 0.5)
        gf = bump_field(g, (0.5, 0.5), 0.3, (0.6, -0.8))
        dv = first_variation_varifold(u, eps, gf)
        dj = first_variation(u, eps, gf)
        gap = discrepancy_variation(u, eps, gf)
        assert dv == pytest.approx(dj + gap, rel=1e-9, abs=1e-12)

    def test_bound_on_exact_profile(self):
        eps = 0.05
        out = []
        for ratio in (8, 16):
            g = unit(eps / ratio)
            u = exact_profile(g, eps, (0.3, math.sqrt(0.91)), 0.5)
            gf = bump_field(g, (0.5, 0.5), 0.3, (1.0, 0.0))
            holds, c = varifold_identity_check(u, eps, gf, VARIFOLD_IDENTITY_C)
            assert holds and c == 0.0
            out.append(abs(first_variation_varifold(u, eps, gf)))
        assert out[1] <= out[0]


class TestTilt:
    def test_aligned(self):
        g = unit(0.01)
        u = exact_profile(g, 0.05, (0, 1), 0.5)
        assert abs(tilt_excess(u, 0.05, (0.0, 1.0))) <= 1e-10

    def test_orthogonal_full_mass(self):
        g = unit(0.01)
        u = exact_profile(g, 0.05, (0, 1), 0.5)
        from fbaclab.grid import gradient
        dirichlet = integrate(0.05 * np.sum(gradient(u).components ** 2, axis=0), grid=g)
        assert tilt_excess(u, 0.05, (1.0, 0.0)) == pytest.approx(dirichlet, rel=1e-12)

    def test_diagonal_half(self):
        eps = 0.05
        g = unit(eps / 16)
        s = math.sqrt(0.5)
        u = exact_profile(g, eps, (s, s), s)
        from fbaclab.grid import gradient
        dirichlet = integrate(eps * np.sum(gradient(u).components ** 2, axis=0), grid=g)
        assert tilt_excess(u, eps, (1.0, 0.0)) == pytest.approx(0.5 * dirichlet, rel=0.02)

    def test_direction_must_be_unit(self):
        g = unit(0.05)
        with pytest.raises(ConfigurationError):
            tilt_excess(Field(g, np.zeros(g.shape)), 0.1, (1.0, 1.0))


class TestDensity:
    def test_single_interface(self, flat_fine):
        eps, u = flat_fine
        theta, sheets, gap = density_and_sheets(u, eps, (0.5, 0.5), (0.05, 0.2))
        assert theta == pytest.approx(8.0 / OMEGA[1] * 1.0, rel=0.05)
        assert sheets == 1 and gap <= 0.05

    def test_two_sheets(self):
        eps = 0.01
        g = Grid.from_spacing(((-1, 1), (-1, 1)), eps / 8)
        u = multi_sheet_profile(g, eps, [-0.03, 0.03])
        theta, sheets, _ = density_and_sheets(u, eps, (0.0, 0.0), (0.3, 0.6))
        assert sheets == 2
        assert theta == pytest.approx(8.0, rel=0.05)

    def test_pure_phase(self):
        g = unit(0.01)
        theta, sheets, gap = density_and_sheets(Field(g, -np.ones(g.shape)), 0.01,
                                                (0.5, 0.5), (0.1, 0.2))
        assert (theta, sheets, gap) == (0.0, 0, 0.0)

    def test_empty_window(self):
        g = unit(0.01)
        with pytest.raises(InputError):
            density_and_sheets(Field(g, np.zeros(g.shape)), 0.01, (0.5, 0.5), (0.2, 0.2))

    @given(st.floats(0.04, 0.15), st.floats(0.01, 0.05), st.floats(0.4, 0.6))
    def test_rounding_rule(self, r_lo, width, cy):
        eps = 0.01
        g = unit(eps / 4)
        u = exact_profile(g, eps, (0, 1), 0.5)
        theta, sheets, gap = density_and_sheets(u, eps, (0.5, cy), (r_lo, r_lo + width), num=5)
        assert theta >= 0.0
        assert sheets == int(round(theta / 4))
        assert gap == pytest.approx(abs(theta / 4 - sheets))
        assert gap <= 0.5


class TestCrossings:
    def test_profile_along_normal(self):
        g = unit(0.01)
        u = exact_profile(g, 0.05, (0, 1), 0.5)
        for t in (-0.5, 0.0, 0.9):
            assert line_crossings(u, (0.3, 0.0), 1, t) == 1

    def test_three_sheets(self):
        g = unit(0.0025)
        u = multi_sheet_profile(g, 0.02, [0.3, 0.5, 0.7])
        assert line_crossings(u, (0.4, 0.0), 1) == 3
        assert line_crossings(u, (0.4, 0.0), 1) == oracles.count_sign_changes(
            list(u.values[g.nearest_node((0.4, 0.0))[0]]))

    def test_pure_phase(self):
        g = unit(0.05)
        assert line_crossings(Field(g, np.ones(g.shape)), (0.5, 0.5), 0, 0.3) == 0

    def test_exact_zero_node(self):
        g = Grid.cube(1, 0, 1, 5)
        assert line_crossings(Field(g, [-1, -0.5, 0.0, 0.5, 1]), (0.0,), 0) == 1
        assert line_crossings(Field(g, [-1, -0.5, 0.0, -0.5, -1]), (0.0,), 0) == 0


class TestParity:
    def test_single_interface_odd(self):
        eps = 0.02
        g = unit(eps / 8)
        u = exact_profile(g, eps, (0, 1), 0.5)
        u0 = Field(g, np.where(g.mesh()[1] > 0.5, 1.0, -1.0))
        rep = parity_audit([u], [eps], u0, [(0.5, 0.5)])
        assert rep.sheets == [[1]] or rep.sheets[0][-1] == 1
        assert rep.sign_change == [True]
        assert rep.agreement == 1.0

    def test_collapsing_pair_even(self):
        us, epsilons = [], []
        for eps in (0.04, 0.02):
            g = unit(eps / 8)
            gap = 2 * eps + eps**2
            us.append(multi_sheet_profile(g, eps, [0.5 - gap, 0.5 + gap], signs=[1, -1]))
            epsilons.append(eps)
        u0 = Field(us[-1].grid, -np.ones(us[-1].grid.shape))
        rep = parity_audit(us, epsilons, u0, [(0.3, 0.5), (0.7, 0.5)])
        assert all(s[-1] == 2 for s in rep.sheets)
        assert rep.sign_change == [False, False]
        assert rep.agreement == 1.0

    def test_no_interface_vacuous(self):
        g = unit(0.01)
        u = Field(g, -np.ones(g.shape))
        rep = parity_audit([u], [0.01], u, [])
        assert rep.agreement == 1.0

    def test_local_normal(self):
        eps = 0.02
        g = unit(eps / 8)
        a = 0.4
        n = np.array([math.sin(a), math.cos(a)])
        u = exact_profile(g, eps, n, float(n @ [0.5, 0.5]))
        np.testing.assert_allclose(local_normal(u, eps, (0.5, 0.5), 4 * eps), n, atol=5e-3)
