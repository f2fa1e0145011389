import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from fbaclab.acceptance import random_phase_field
from fbaclab.calibration import HOLDOUT_SEED, calibration_grid, make_rng, random_pl_field
from fbaclab.energy import (
    INTERPOLATION_C_STAR,
    EnergyReport,
    Mollifier,
    band_fraction,
    cs_lower_bound_check,
    discrepancy_density,
    energy,
    energy_density,
    in_band,
    indicator,
    interpolation_check,
    interpolation_terms,
    modica_check,
    mollified_energy,
)
from fbaclab.errors import ConfigurationError
from fbaclab.grid import Field, Grid, gradient, integrate
from fbaclab.solver import exact_profile, multi_sheet_profile


def line(eps, ratio, lo=-1.0, hi=1.0):
    return Grid.from_spacing(((lo, hi),), eps / ratio)


def phase_arrays(shape):
    return hnp.arrays(float, shape, elements=st.floats(-1.0, 1.0))


class TestIndicator:
    def test_values(self):
        assert indicator(0.0) == 1.0
        assert indicator(1.0) == 0.0
        assert indicator(-1.0) == 0.0
        assert indicator(0.999999) == 1.0

    def test_in_band_open_interval(self):
        np.testing.assert_array_equal(in_band([-1.0, -0.5, 1.0, 0.0]), [False, True, False, True])


class TestMollifier:
    @pytest.mark.parametrize("k", [0.0, 1.0, -0.1, 1.5])
    def test_invalid_kappa(self, k):
        with pytest.raises(ConfigurationError):
            Mollifier(k)

    @given(st.floats(0.01, 0.99), st.floats(-2.0, 2.0))
    def test_ramp_shape(self, kappa, t):
        m = Mollifier(kappa)
        v = float(m(t))
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(oracles.ramp_chi(t, kappa), abs=1e-12)

    @given(st.floats(-0.999, 0.999))
    def test_pointwise_limit(self, t):
        vals = [float(Mollifier(k)(t)) for k in (0.5, 0.1, 1e-3, 1e-6)]
        assert vals == sorted(vals)
        if abs(t) < 1.0 - 1e-6:
            assert vals[-1] == 1.0

    def test_derivative_matches_difference(self):
        m = Mollifier(0.2)
        for t in (-0.95, -0.85, 0.5, 0.9, 0.85):
            d = 1e-7
            num = (float(m(t + d)) - float(m(t - d))) / (2 * d)
            assert float(m.derivative(t)) == pytest.approx(num, abs=1e-5)


class TestEnergy:
    def test_pure_phase(self):
        g = Grid.cube(2, 0, 1, 9)
        r = energy(Field(g, np.ones(g.shape)), 0.1)
        assert r.total == 0.0 and r.discrepancy_l1 == 0.0
        assert r.modica_violation == pytest.approx(-10.0)

    @pytest.mark.parametrize("eps", [0.0, -1.0, np.nan])
    def test_invalid_epsilon(self, eps):
        g = Grid.cube(1, 0, 1, 9)
        with pytest.raises(ConfigurationError):
            energy(Field(g, np.zeros(9)), eps)

    def test_exact_profile_1d(self):
        eps = 0.1
        r = energy(exact_profile(line(eps, 16), eps), eps)
        assert r.total == pytest.approx(oracles.profile_energy(eps), rel=0.02)

    def test_flat_interface_2d(self):
        eps = 0.05
        g = Grid.from_spacing(((0, 1), (0, 1)), eps / 8)
        u = exact_profile(g, eps, normal=(0, 1), offset=0.5)
        assert energy(u, eps).total == pytest.approx(4.0 * 1.0, rel=0.02)

    def test_first_order_convergence(self):
        eps = 0.1
        gaps = []
        for ratio in (8, 16, 32, 64):
            gaps.append(abs(energy(exact_profile(line(eps, ratio), eps), eps).total - 4.0))
        # first order in h/eps: each halving roughly halves the gap
        for a, b in zip(gaps, gaps[1:]):
            assert b < a
            assert 0.35 < b / a < 0.65

    def test_json_field_names(self):
        g = Grid.cube(1, -1, 1, 41)
        r = energy(exact_profile(g, 0.2), 0.2)
        data = json.loads(r.to_json())
        assert list(data) == ["epsilon", "dirichlet", "potential", "total",
                              "discrepancy_l1", "modica_violation", "bv_lower_bound"]

    def test_densities_integrate_to_report(self):
        eps = 0.05
        g = Grid.from_spacing(((0, 1), (0, 1)), eps / 8)
        u = exact_profile(g, eps, normal=(0.6, 0.8), offset=0.7)
        r = energy(u, eps)
        assert integrate(energy_density(u, eps), grid=g) == pytest.approx(r.total, rel=1e-12)
        assert integrate(np.abs(discrepancy_density(u, eps)), grid=g) == pytest.approx(
            r.discrepancy_l1, rel=1e-12)

    @given(phase_arrays((9, 8)), st.floats(0.05, 1.0))
    def test_report_invariants(self, vals, eps):
        g = Grid(((0, 1), (0, 1)), (9, 8))
        u = Field(g, vals)
        r = energy(u, eps)
        assert r.total == r.dirichlet + r.potential
        assert r.dirichlet >= 0 and r.potential >= 0 and r.bv_lower_bound >= 0
        g1 = np.sqrt(np.sum(gradient(u).components ** 2, axis=0))
        assert r.total >= 2.0 * integrate(g1, in_band(vals), grid=g) - 1e-12

    @given(phase_arrays((7, 7)), st.floats(0.05, 1.0))
    def test_sign_symmetry(self, vals, eps):
        g = Grid.cube(2, 0, 1, 7)
        a = energy(Field(g, vals), eps)
        b = energy(Field(g, -vals), eps)
        assert b.total == pytest.approx(a.total, rel=1e-12, abs=1e-12)

    @given(phase_arrays((7, 7)), st.floats(0.05, 1.0))
    def test_reflection_and_permutation(self, vals, eps):
        g = Grid.cube(2, 0, 1, 7)
        ref = energy(Field(g, vals), eps).total
        for t in (vals[::-1], vals[:, ::-1], vals.T, vals[::-1].T):
            assert energy(Field(g, np.ascontiguousarray(t)), eps).total == pytest.approx(
                ref, rel=1e-12, abs=1e-12)


class TestBandFraction:
    def test_interior_and_clamped(self):
        g = Grid.cube(1, -1, 1, 201)
        u = exact_profile(g, 0.2)
        f = band_fraction(g, u.values)
        x = g.axis(0)
        assert np.all(f[np.abs(x) < 0.19] == 1.0)
        assert np.all(f[np.abs(x) > 0.21] == 0.0)

    def test_measures_interpolant_band(self):
        # the linear interpolant leaves the band only at the first clamped node,
        # so its band spans (interior node count + 1) cells
        eps = 0.1037
        g = Grid.cube(1, -1, 1, 401)
        u = exact_profile(g, eps)
        from fbaclab.grid import node_weights
        measured = float(np.sum(band_fraction(g, u.values) * node_weights(g)))
        interior = int(np.sum(np.abs(u.values) < 1.0))
        assert measured == pytest.approx((interior + 1) * g.h, abs=g.h / 4)


class TestModica:
    def test_exact_profile_zero(self):
        eps = 0.1
        g = line(eps, 16)
        u = exact_profile(g, eps)
        v, has = modica_check(u, eps)
        assert has
        assert abs(v) <= 10 * g.h / eps**2

    def test_exact_profile_interior_nodes(self):
        eps = 0.1
        g = line(eps, 16)
        u = exact_profile(g, eps)
        d = gradient(u).components[0]
        inner = np.abs(g.axis(0)) < eps - 1.5 * g.h
        np.testing.assert_allclose(eps * d[inner] ** 2 - 1 / eps, 0.0, atol=1e-9)

    def test_zero_field(self):
        g = Grid.cube(2, 0, 1, 6)
        v, has = modica_check(Field(g, np.zeros(g.shape)), 0.2)
        assert has and v == pytest.approx(-5.0)

    def test_no_band_sentinel(self):
        g = Grid.cube(1, 0, 1, 6)
        v, has = modica_check(Field(g, -np.ones(6)), 0.25)
        assert not has and v == -4.0

    def test_steepened_profile(self):
        eps = 0.1
        g = line(eps, 32)
        x = g.axis(0)
        u = Field(g, np.clip(2 * x / eps, -1, 1))
        v, _ = modica_check(u, eps)
        expected = eps * (2 / eps) ** 2 - 1 / eps
        assert expected == pytest.approx(3 / eps)
        assert v == pytest.approx(expected, rel=1e-9)


class TestCauchySchwarz:
    def test_random_fields_hold(self):
        for seed in range(100):
            u, eps = random_phase_field(np.random.Generator(np.random.Philox(key=[seed, 8])))
            holds, margin = cs_lower_bound_check(u, eps)
            assert holds and margin >= 0.0

    @given(phase_arrays(15), st.floats(0.01, 2.0))
    def test_margin_nonnegative(self, vals, eps):
        g = Grid.cube(1, 0, 1, 15)
        holds, margin = cs_lower_bound_check(Field(g, vals), eps)
        assert holds and margin >= 0.0

    def test_exact_profile_margin_zero(self):
        eps = 0.1
        g = line(eps, 16)
        _, margin = cs_lower_bound_check(exact_profile(g, eps), eps)
        assert margin == pytest.approx(0.0, abs=1e-9)

    def test_empty_band(self):
        g = Grid.cube(1, 0, 1, 6)
        assert cs_lower_bound_check(Field(g, np.ones(6)), 0.1) == (True, float("inf"))


class TestMollifiedEnergy:
    def test_pure_phase(self):
        g = Grid.cube(2, 0, 1, 7)
        value, grad = mollified_energy(Field(g, np.ones(g.shape)), 0.1, 0.3)
        assert value == 0.0
        # the one-sided slope at u = 1 points out of [-1, 1], so the projected step is zero
        assert np.all(grad <= 0.0)
        np.testing.assert_array_equal(np.clip(1.0 - 0.01 * grad, -1, 1), 1.0)

    def test_ramp_closed_form(self):
        eps, kappa = 0.1, 0.25
        value, _ = mollified_energy(exact_profile(line(eps, 16), eps), eps, kappa)
        assert 4.0 * (1 - kappa / 2) <= value < 4.0
        assert value == pytest.approx(oracles.mollified_profile_energy(kappa), rel=0.02)

    def test_halving_kappa_non_decreasing(self):
        eps = 0.05
        g = Grid.from_spacing(((0, 1), (0, 1)), eps / 8)
        u = exact_profile(g, eps, normal=(0.3, np.sqrt(1 - 0.09)), offset=0.6)
        total = energy(u, eps).total
        values = [mollified_energy(u, eps, k)[0] for k in (0.4, 0.2, 0.1)]
        assert values == sorted(values)
        assert all(v <= total for v in values)

    @given(phase_arrays((6, 6)), st.floats(0.05, 1.0), st.floats(0.02, 0.9))
    def test_monotone_in_kappa(self, vals, eps, kappa):
        g = Grid.cube(2, 0, 1, 6)
        a, _ = mollified_energy(Field(g, vals), eps, kappa)
        b, _ = mollified_energy(Field(g, vals), eps, kappa / 2)
        assert b >= a - 1e-12

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        g = Grid.cube(2, 0, 1, 8)
        from fbaclab.grid import node_weights
        vals = rng.uniform(-0.7, 0.7, g.shape)
        eps, kappa = 0.2, 0.5
        _, grad = mollified_energy(vals, eps, kappa, grid=g)
        w = node_weights(g)
        for idx in [(0, 0), (3, 4), (7, 2)]:
            e = np.zeros(g.shape)
            e[idx] = 1e-6
            num = (mollified_energy(vals + e, eps, kappa, grid=g)[0]
                   - mollified_energy(vals - e, eps, kappa, grid=g)[0]) / 2e-6
            assert grad[idx] * w[idx] == pytest.approx(num, rel=1e-5)

    def test_invalid_kappa(self):
        g = Grid.cube(1, 0, 1, 5)
        with pytest.raises(ConfigurationError):
            mollified_energy(Field(g, np.zeros(5)), 0.1, 1.0)


class TestInterpolation:
    @pytest.mark.parametrize("c", [0.3, 1.0])
    def test_constant_field(self, c):
        g = Grid.cube(1, -1, 1, 41)
        _, realized = interpolation_check(Field(g, np.full(41, c)))
        # L = c, I = 2c on [-1, 1], K = 0
        assert realized == pytest.approx(0.5)

    def test_constant_on_unit_interval(self):
        g = Grid.cube(1, 0, 1, 41)
        _, realized = interpolation_check(Field(g, np.full(41, 0.4)))
        assert realized == pytest.approx(1.0)

    def test_tent(self):
        r = 0.25
        g = Grid.cube(1, -1, 1, 401)
        x = g.axis(0)
        vals = np.maximum(0.0, 1 - np.abs(x) / r)
        L, I, K = interpolation_terms(Field(g, vals))
        assert L == 1.0
        assert I == pytest.approx(r, rel=1e-9)
        assert K == pytest.approx(1 / r, rel=1e-9)
        holds, realized = interpolation_check(Field(g, vals))
        assert holds and realized == pytest.approx(1.0, rel=1e-9)
        assert realized == pytest.approx(oracles.realized_constant_1d(list(vals), g.h), rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2])
    def test_holdout_family_bounded(self, n):
        grid = calibration_grid(n)
        rng = make_rng(HOLDOUT_SEED)
        for _ in range(200):
            u = random_pl_field(grid, rng)
            holds, c = interpolation_check(u)
            assert holds, c
            assert c <= INTERPOLATION_C_STAR[n]

    def test_loop_oracle_agrees_1d(self):
        grid = calibration_grid(1)
        rng = make_rng(5)
        for _ in range(10):
            u = random_pl_field(grid, rng)
            _, c = interpolation_check(u)
            assert c == pytest.approx(oracles.realized_constant_1d(list(u.values), grid.h), rel=1e-10)


def test_multi_sheet_energy():
    eps = 0.02
    g = Grid.from_spacing(((0, 1), (0, 1)), eps / 8)
    u = multi_sheet_profile(g, eps, [0.4, 0.6], normal=(0, 1))
    assert energy(u, eps).total == pytest.approx(8.0, rel=0.03)


def test_report_roundtrip():
    r = EnergyReport(0.1, 1.0, 2.0, 3.0, 0.5, -1.0, 2.5)
    assert EnergyReport(**json.loads(r.to_json())) == r
