"""Geometry generation: sampling, centerlines, radii, normalization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffrkit import geom
from ffrkit.errors import DataError, NumericError
from ffrkit.seeds import derive_seed

from conftest import make_design, make_vessel


# ---------------------------------------------------------------------------
# Design-variable sampling


def test_ranges_cover_all_variables():
    assert set(geom.VARIABLE_ORDER) == set(geom.RANGES)
    assert len(geom.VARIABLE_ORDER) == 7
    for lo, hi in geom.RANGES.values():
        assert lo < hi


def test_midpoint_single_stratum_unskewed():
    (dv,) = geom.sample_designs(1, skew=geom.UNIFORM_SKEW, seed=0, midpoint=True)
    assert dv.S_s == pytest.approx(0.575, abs=1e-15)


def test_midpoint_single_stratum_skewed():
    (dv,) = geom.sample_designs(1, skew=geom.DEFAULT_SKEW, seed=0, midpoint=True)
    expected = ((0.30**10 + 0.85**10) / 2.0) ** (1.0 / 10.0)
    assert dv.S_s == pytest.approx(expected, rel=1e-14)
    assert dv.S_s == pytest.approx(0.7930804214716821, rel=1e-14)


def test_skewed_sampling_biases_severity_high():
    designs = geom.sample_designs(1000, skew=geom.DEFAULT_SKEW, seed=42)
    median = np.median([dv.S_s for dv in designs])
    assert median > 0.7


def test_unskewed_sampling_keeps_severity_centered():
    designs = geom.sample_designs(1000, skew=geom.UNIFORM_SKEW, seed=42)
    median = np.median([dv.S_s for dv in designs])
    assert 0.5 < median < 0.65


@given(n=st.integers(2, 60), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_lhs_exact_stratification(n, seed):
    designs = geom.sample_designs(n, seed=seed)
    for name in geom.VARIABLE_ORDER:
        k = geom.DEFAULT_SKEW[name]
        lo, hi = geom.RANGES[name]
        values = np.array([getattr(dv, name) for dv in designs])
        assert np.all(values >= lo) and np.all(values <= hi)
        transformed = values**k
        edges = np.linspace(lo**k, hi**k, n + 1)
        buckets = np.clip(np.searchsorted(edges, transformed, side="right") - 1, 0, n - 1)
        assert sorted(buckets) == list(range(n))


def test_sampling_is_deterministic():
    a = geom.sample_designs(50, seed=9)
    b = geom.sample_designs(50, seed=9)
    assert all(x.as_array().tolist() == y.as_array().tolist() for x, y in zip(a, b))
    assert [x.template_id for x in a] == [y.template_id for y in a]


def test_sampling_rejects_bad_counts():
    with pytest.raises(DataError):
        geom.sample_designs(0, seed=0)
    with pytest.raises(DataError):
        geom.sample_designs(10, skew={**geom.DEFAULT_SKEW, "S_s": 0}, seed=0)


def test_template_ids_within_range():
    designs = geom.sample_designs(200, seed=3, n_templates=3)
    ids = {dv.template_id for dv in designs}
    assert ids <= {0, 1, 2}
    assert len(ids) > 1


def test_design_validation_rejects_out_of_range():
    with pytest.raises(DataError):
        make_design(S_s=0.9).validate()
    with pytest.raises(DataError):
        make_design(Q=0.0).validate()
    make_design().validate()


# ---------------------------------------------------------------------------
# Templates


def test_builtin_templates_shape():
    templates = geom.builtin_templates()
    assert len(templates) == 3
    for t in templates:
        assert t.means.shape == (geom.N_CONTROL_POINTS, 3)
        assert t.sigmas.shape == (geom.N_CONTROL_POINTS, 3)


def test_template_file_round_trip(tmp_path):
    templates = geom.builtin_templates()
    path = tmp_path / "templates.txt"
    geom.write_templates(path, templates)
    back = geom.read_templates(path)
    assert len(back) == len(templates)
    for a, b in zip(templates, back):
        assert a.name == b.name
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.sigmas, b.sigmas)


def test_template_file_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a template file\n")
    with pytest.raises(DataError):
        geom.read_templates(path)


# ---------------------------------------------------------------------------
# Centerline sampling


def zero_sigma(template):
    return geom.CenterlineTemplate(
        name=template.name, means=template.means, sigmas=np.zeros_like(template.sigmas)
    )


def test_straight_template_gives_uniform_segment():
    template = zero_sigma(geom.builtin_templates()[0])
    l_v, m = 0.05, 128
    curve = geom.sample_centerline(template, seed=1, m=m, l_v=l_v)
    spacing = np.linalg.norm(np.diff(curve, axis=1), axis=0)
    assert spacing == pytest.approx(np.full(m - 1, l_v / (m - 1)), rel=1e-9)
    assert np.allclose(curve[1:], 0.0, atol=1e-12)
    assert curve[0, 0] == 0.0


def test_arc_template_matches_analytic_curve():
    template = zero_sigma(geom.builtin_templates()[1])
    l_v, m = 0.05, 128
    curve = geom.sample_centerline(template, seed=1, m=m, l_v=l_v)
    # the arc template is a planar circular arc from phi = -25 deg to +25 deg;
    # with zero jitter the resampled curve must stay within 1e-6 * l_v of it
    angle = np.deg2rad(50.0)
    half = np.deg2rad(25.0)
    radius = l_v / angle
    s = np.linspace(0.0, l_v, m)
    phi = -half + s / radius
    exact = np.stack(
        [
            radius * (np.sin(phi) + np.sin(half)),
            radius * (np.cos(half) - np.cos(phi)),
            np.zeros(m),
        ]
    )
    err = np.abs(curve - exact).max()
    assert err < 1e-6 * l_v


def test_centerline_total_length_is_exact():
    # chord sums converge to the curve arc length from below as m grows, so
    # measure on a dense resampling; station-level chords are a bit shorter
    for tid in range(3):
        template = geom.builtin_templates()[tid]
        dense = geom.sample_centerline(template, seed=7, m=4096, l_v=0.061)
        seg = np.linalg.norm(np.diff(dense, axis=1), axis=0)
        assert seg.sum() == pytest.approx(0.061, rel=2e-6)
        coarse = geom.sample_centerline(template, seed=7, m=128, l_v=0.061)
        chords = np.linalg.norm(np.diff(coarse, axis=1), axis=0)
        assert chords.sum() == pytest.approx(0.061, rel=1e-2)
        assert chords.sum() <= 0.061 + 1e-12


def test_centerline_spacing_uniformity():
    template = geom.builtin_templates()[2]
    curve = geom.sample_centerline(template, seed=5, m=128, l_v=0.05)
    seg = np.linalg.norm(np.diff(curve, axis=1), axis=0)
    assert seg.var() / seg.mean() < 1e-6


def test_centerline_deterministic_and_seed_sensitive():
    template = geom.builtin_templates()[1]
    a = geom.sample_centerline(template, seed=11, m=64, l_v=0.05)
    b = geom.sample_centerline(template, seed=11, m=64, l_v=0.05)
    c = geom.sample_centerline(template, seed=12, m=64, l_v=0.05)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_centerline_starts_at_origin():
    for tid in range(3):
        template = geom.builtin_templates()[tid]
        curve = geom.sample_centerline(template, seed=2, m=32, l_v=0.04)
        assert np.allclose(curve[:, 0], 0.0, atol=1e-15)


def test_degenerate_template_rejected():
    means = np.zeros((geom.N_CONTROL_POINTS, 3))  # all points coincide
    template = geom.CenterlineTemplate("point", means, np.zeros_like(means))
    with pytest.raises(NumericError):
        geom.sample_centerline(template, seed=0, m=32, l_v=0.05)


# ---------------------------------------------------------------------------
# Radius profiles


def test_zero_severity_is_pure_taper():
    dv = make_design(S_s=0.0, r_p=0.002, T_r=0.8, l_v=0.05)
    r = geom.build_radius_profile(dv, m=128)
    expected = np.linspace(0.002, 0.8 * 0.002, 128)
    assert r == pytest.approx(expected, rel=1e-12)
    assert r.min() == pytest.approx(0.8 * 0.002, rel=1e-12)


def test_mid_vessel_radius_matches_hand_calculation():
    # taper line at mid-vessel: 0.002 * (1 - 0.2 * 0.5) = 0.0018; halved by
    # the 50% stenosis centered there -> 9.0e-4. m odd puts a station at 0.5.
    dv = make_design(x_p=0.5, l_s=0.02, S_s=0.5, r_p=0.002, T_r=0.8, l_v=0.05)
    r = geom.build_radius_profile(dv, m=129)
    assert r[64] == pytest.approx(9.0e-4, rel=1e-12)


def test_severity_realized_at_center():
    # measured (D_n - D_s)/D_n at the stenosis center equals requested S_s
    dv = make_design(x_p=0.5, S_s=0.75, r_p=0.002, T_r=0.8)
    r = geom.build_radius_profile(dv, m=129)
    base = 0.002 * (1 - 0.2 * 0.5)
    severity = (base - r[64]) / base
    assert severity == pytest.approx(0.75, abs=1e-9)


@given(
    x_p=st.floats(0.0, 1.0),
    S_s=st.floats(0.30, 0.85),
    T_r=st.floats(0.59, 0.8),
)
@settings(max_examples=50, deadline=None)
def test_radius_profiles_stay_positive(x_p, S_s, T_r):
    dv = make_design(x_p=x_p, S_s=S_s, T_r=T_r)
    r = geom.build_radius_profile(dv, m=128)
    assert np.all(r > 0)
    assert r.shape == (128,)


def test_radius_profile_rejects_tiny_station_count():
    with pytest.raises(DataError):
        geom.build_radius_profile(make_design(), m=8)


# ---------------------------------------------------------------------------
# Vessel assembly and generation


def test_assemble_rejects_mismatched_lengths():
    line = np.stack([np.linspace(0, 1, 10), np.zeros(10), np.zeros(10)])
    with pytest.raises(DataError):
        geom.assemble_vessel(line, np.ones(9))


def test_generated_vessel_satisfies_invariants():
    g = make_vessel()
    g.validate()
    assert g.samples.shape == (4, 128)
    assert np.all(g.radii > 0)
    seg = np.linalg.norm(np.diff(g.centerline, axis=1), axis=0)
    assert np.all(seg > 0)
    # station-chord polyline length sits just under the curve length l_v
    assert g.arc_length()[-1] == pytest.approx(g.meta.l_v, rel=1e-2)
    assert g.arc_length()[-1] <= g.meta.l_v + 1e-12


def test_generation_deterministic_per_seed():
    a = make_vessel(seed=21)
    b = make_vessel(seed=21)
    c = make_vessel(seed=22)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


# ---------------------------------------------------------------------------
# Normalization


def test_bounding_box_covers_templates_with_margin():
    lo, hi = geom.bounding_box()
    assert np.all(lo == -1.05 * 0.07)
    assert np.all(hi == 1.05 * 0.07)


def test_normalize_maps_into_unit_cube():
    ng = geom.normalize_geometry(make_vessel())
    assert ng.samples.min() >= 0.0
    assert ng.samples.max() <= 1.0


def test_normalized_max_radius_is_exactly_one():
    ng = geom.normalize_geometry(make_vessel())
    assert ng.samples[3].max() == 1.0


def test_degenerate_axis_maps_to_half():
    tube_line = np.stack([np.linspace(0, 0.05, 32), np.zeros(32), np.zeros(32)])
    g = geom.assemble_vessel(tube_line, np.full(32, 0.002))
    ng = geom.normalize_geometry(g)
    assert np.all(ng.samples[1] == 0.5)
    assert np.all(ng.samples[2] == 0.5)


def test_out_of_box_geometry_rejected():
    line = np.stack([np.linspace(0, 0.2, 32), np.zeros(32), np.zeros(32)])
    g = geom.assemble_vessel(line, np.full(32, 0.002))
    with pytest.raises(DataError):
        geom.normalize_geometry(g)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_normalize_round_trip(seed):
    designs = geom.sample_designs(1, seed=seed)
    dv = designs[0]
    g = geom.generate_vessel(
        dv, geom.builtin_templates()[dv.template_id], seed=derive_seed(seed, "v")
    )
    ng = geom.normalize_geometry(g)
    back = geom.denormalize_geometry(ng, meta=g.meta)
    scale = np.abs(g.samples).max()
    assert np.abs(back.samples - g.samples).max() < 1e-12 * max(scale, 1.0)
