import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from fbaclab.energy import in_band
from fbaclab.errors import ConfigurationError, InputError
from fbaclab.gamma import disc, recovery_sequence
from fbaclab.geometry import (
    SLIVER_DELTA,
    InterfaceMesh,
    connected_components,
    directed_hausdorff,
    extract_level_set,
    hausdorff,
    sliver_audit,
    transition_band,
)
from fbaclab.grid import Field, Grid
from fbaclab.problems import flat_problem
from fbaclab.solver import exact_profile, minimize, multi_sheet_profile


def unit(h):
    return Grid.from_spacing(((0, 1), (0, 1)), h)


@pytest.fixture(scope="module")
def disc_mesh():
    eps = 0.01
    g = unit(eps / 8)
    u = recovery_sequence(disc(g, (0.5, 0.5), 0.25), eps)
    return extract_level_set(u, 0.0)


class TestExtraction:
    def test_straight_line(self):
        g = unit(0.01)
        u = exact_profile(g, 0.05, (0, 1), 0.503)
        mesh = extract_level_set(u, 0.0)
        assert mesh.dim == 1
        assert mesh.length_or_area == pytest.approx(1.0, rel=0.01)
        np.testing.assert_allclose(mesh.vertices[:, 1], 0.503, atol=1e-12)

    def test_tilted_line_length(self):
        g = unit(0.01)
        a = 0.4
        n = (math.sin(a), math.cos(a))
        u = exact_profile(g, 0.05, n, n[0] * 0.5 + n[1] * 0.5)
        mesh = extract_level_set(u)
        assert mesh.length_or_area == pytest.approx(1.0 / math.cos(a), rel=0.01)

    def test_disc_length(self, disc_mesh):
        length = disc_mesh.length_or_area
        assert length == pytest.approx(2 * math.pi * 0.25, rel=0.02)
        assert length == pytest.approx(
            oracles.polyline_length(disc_mesh.vertices, disc_mesh.elements), rel=1e-12)

    def test_disc_polyline_closed(self, disc_mesh):
        degree = np.bincount(disc_mesh.elements.ravel(), minlength=len(disc_mesh.vertices))
        assert np.all(degree == 2)

    def test_sphere_area(self):
        g = Grid.from_spacing(((0, 1),) * 3, 1 / 60)
        X, Y, Z = g.mesh()
        r = np.sqrt((X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2)
        u = Field(g, np.clip((r - 0.3) / 0.05, -1, 1))
        mesh = extract_level_set(u)
        assert mesh.dim == 2
        assert mesh.length_or_area == pytest.approx(4 * math.pi * 0.09, rel=0.01)

    def test_1d_crossings(self):
        g = Grid.cube(1, 0, 1, 101)
        u = multi_sheet_profile(g, 0.02, [0.2, 0.5, 0.8])
        mesh = extract_level_set(u)
        assert mesh.dim == 0 and mesh.length_or_area == 3

    def test_out_of_range_level(self):
        g = unit(0.05)
        mesh = extract_level_set(Field(g, np.ones(g.shape)), 0.0)
        assert mesh.empty and not mesh.in_range
        mesh = extract_level_set(exact_profile(g, 0.1, (0, 1), 0.5), 1.0)
        assert mesh.empty and not mesh.in_range

    def test_saddle_cells_give_degree_two(self):
        # checkerboard-like field with many saddle cells
        g = Grid.cube(2, 0, 1, 41)
        X, Y = g.mesh()
        u = Field(g, np.clip(np.sin(9 * np.pi * X) * np.sin(7 * np.pi * Y) + 0.05, -1, 1))
        mesh = extract_level_set(u)
        degree = np.bincount(mesh.elements.ravel(), minlength=len(mesh.vertices))
        inside = np.all((mesh.vertices > 1e-12) & (mesh.vertices < 1 - 1e-12), axis=1)
        assert np.all(degree[inside] == 2)
        assert np.all(degree <= 2)

    @given(hnp.arrays(float, (9, 9), elements=st.floats(-1, 1)), st.floats(-0.9, 0.9))
    def test_mesh_invariants(self, vals, t):
        mesh = extract_level_set(Field(Grid.cube(2, 0, 1, 9), vals), t)
        if mesh.elements.size:
            assert mesh.elements.min() >= 0 and mesh.elements.max() < len(mesh.vertices)
        assert mesh.length_or_area >= 0
        assert mesh.length_or_area == pytest.approx(mesh.element_measures().sum(), abs=1e-12)

    def test_bad_elements_rejected(self):
        with pytest.raises(InputError):
            InterfaceMesh(1, np.zeros((2, 2)), np.array([[0, 5]]), 0.0)

    def test_csv_tables(self, tmp_path):
        g = unit(0.05)
        mesh = extract_level_set(exact_profile(g, 0.1, (0, 1), 0.52))
        mesh.write_csv(tmp_path / "v.csv", tmp_path / "e.csv")
        v = np.loadtxt(tmp_path / "v.csv", delimiter=",", skiprows=1)
        e = np.loadtxt(tmp_path / "e.csv", delimiter=",", skiprows=1)
        assert v.shape == (len(mesh.vertices), 3)
        assert e.shape == (len(mesh.elements), 3)


class TestBand:
    def test_profile_band_width(self):
        eps = 0.1
        g = unit(eps / 10)
        band = transition_band(exact_profile(g, eps, (0, 1), 0.5))
        # width as a measure: band nodes per column times the spacing
        widths = band.sum(axis=1) * g.spacing[1]
        np.testing.assert_allclose(widths, 2 * eps, atol=2 * g.h)

    def test_pure_phase_empty(self):
        g = unit(0.05)
        assert not transition_band(Field(g, -np.ones(g.shape))).any()

    def test_two_sheets_two_bands(self):
        g = unit(0.005)
        band = transition_band(multi_sheet_profile(g, 0.02, [0.3, 0.7]))
        report = connected_components(band, g)
        assert report.count == 2
        assert report.volumes[0] == report.volumes[1]


class TestHausdorff:
    def test_identity(self):
        pts = np.random.default_rng(0).uniform(size=(50, 2))
        assert hausdorff(pts, pts) == 0.0

    def test_parallel_lines(self):
        g = unit(0.01)
        a = extract_level_set(exact_profile(g, 0.05, (0, 1), 0.3))
        b = extract_level_set(exact_profile(g, 0.05, (0, 1), 0.55))
        assert hausdorff(a, b) == pytest.approx(0.25, abs=g.h)

    def test_band_to_midline(self):
        eps = 0.05
        g = unit(eps / 8)
        u = exact_profile(g, eps, (0, 1), 0.5)
        mid = extract_level_set(u)
        d = directed_hausdorff(transition_band(u), mid, grid=g)
        assert d == pytest.approx(eps, abs=2 * g.h)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            hausdorff(np.zeros((0, 2)), np.zeros((3, 2)))

    def test_mask_needs_grid(self):
        with pytest.raises(ConfigurationError):
            hausdorff(np.zeros((3, 3), bool), np.zeros((3, 3), bool))

    @given(hnp.arrays(float, (6, 2), elements=st.floats(-5, 5)),
           hnp.arrays(float, (4, 2), elements=st.floats(-5, 5)))
    def test_symmetric(self, a, b):
        assert hausdorff(a, b) == hausdorff(b, a)


class TestComponents:
    @given(hnp.arrays(bool, (8, 7)))
    def test_volumes_sum_to_mask_volume(self, mask):
        g = Grid(((0, 1), (0, 2)), (8, 7))
        report = connected_components(mask, g)
        assert report.total_volume() == pytest.approx(mask.sum() * g.cell_volume)

    def test_face_connectivity(self):
        g = Grid.cube(2, 0, 1, 4)
        mask = np.zeros((4, 4), bool)
        mask[0, 0] = mask[1, 1] = True
        assert connected_components(mask, g).count == 2

    def test_flat_solution_has_no_slivers(self):
        grid, init, cfg = flat_problem(0.05)
        u, _ = minimize(cfg, init, residual=False)
        report = connected_components(in_band(u.values), grid)
        assert report.count == 1
        assert sliver_audit(report, 0.05, grid.h, 2, SLIVER_DELTA) == []

    def test_sliver_detected(self):
        g = Grid.cube(2, 0, 1, 101)
        mask = np.zeros(g.shape, bool)
        mask[40:60, 40:60] = True
        mask[10, 10] = True
        report = connected_components(mask, g)
        slivers = sliver_audit(report, 0.05, g.h, 2)
        assert len(slivers) == 1 and slivers[0].node_count == 1
