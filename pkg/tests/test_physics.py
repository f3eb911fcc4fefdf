"""Hemodynamics: low-fidelity solver, enriched oracle, FFR, ingestion."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffrkit import datafiles, geom, physics
from ffrkit.errors import DataError
from ffrkit.seeds import derive_seed

from conftest import make_design, make_vessel, uniform_tube

P_IN = physics.P_IN_DEFAULT


# ---------------------------------------------------------------------------
# Low-fidelity solver


def test_uniform_tube_matches_poiseuille(tube, bc):
    lf = physics.solve_lf(tube, bc)
    drop = lf.P[0] - lf.P[-1]
    analytic = 8 * bc.mu * 0.05 * bc.Q / (np.pi * 0.002**4)
    assert analytic == pytest.approx(31.830988618379063, rel=1e-12)
    assert drop == pytest.approx(analytic, rel=1e-10)
    # constant area: velocity is uniform Q/A
    assert lf.U == pytest.approx(np.full(128, 0.07957747154594766), rel=1e-12)


def test_uniform_tube_ffr_outlet_value(tube, bc):
    lf = physics.solve_lf(tube, bc)
    f = physics.ffr(lf)
    assert f.values[0] == 1.0
    expected = (P_IN - 8 * bc.mu * 0.05 * bc.Q / (np.pi * 0.002**4)) / P_IN
    assert f.values[-1] == pytest.approx(expected, rel=1e-10)
    assert f.values[-1] == pytest.approx(0.99756375607562, abs=1e-9)


def test_lf_runtime_under_a_millisecond(tube, bc):
    physics.solve_lf(tube, bc)  # warm-up
    t0 = time.perf_counter()
    n = 200
    for _ in range(n):
        physics.solve_lf(tube, bc)
    per_solve = (time.perf_counter() - t0) / n
    assert per_solve < 1e-3


def test_zero_flow_limit(tube):
    bc = physics.BoundaryConditions(Q=0.0)
    lf = physics.solve_lf(tube, bc)
    assert np.all(lf.U == 0.0)
    assert np.all(lf.P == P_IN)
    assert np.all(physics.ffr(lf).values == 1.0)


def test_inlet_pressure_is_exact(stenosed_vessel):
    bc = physics.BoundaryConditions(Q=stenosed_vessel.meta.Q)
    lf = physics.solve_lf(stenosed_vessel, bc)
    assert lf.P[0] == P_IN
    lf.validate()


def test_uniform_tube_pressure_monotone_decreasing(tube, bc):
    lf = physics.solve_lf(tube, bc)
    assert np.all(np.diff(lf.P) < 0)


def test_velocity_follows_continuity(stenosed_vessel):
    bc = physics.BoundaryConditions(Q=stenosed_vessel.meta.Q)
    lf = physics.solve_lf(stenosed_vessel, bc)
    area = np.pi * stenosed_vessel.radii**2
    assert lf.U == pytest.approx(bc.Q / area, rel=1e-12)


def test_grid_convergence_on_stenosed_vessels():
    designs = geom.sample_designs(5, seed=77)
    templates = geom.builtin_templates()
    for i, dv in enumerate(designs):
        seed = derive_seed(77, "v", i)
        coarse = geom.generate_vessel(dv, templates[dv.template_id], seed=seed, m=128)
        fine = geom.generate_vessel(dv, templates[dv.template_id], seed=seed, m=256)
        bc = physics.BoundaryConditions(Q=dv.Q)
        p_c = physics.solve_lf(coarse, bc).P[-1]
        p_f = physics.solve_lf(fine, bc).P[-1]
        assert abs(p_f - p_c) / abs(p_f) < 1e-3


# ---------------------------------------------------------------------------
# Boundary conditions and profile validation


def test_bc_rejects_negative_flow_and_bad_constants():
    with pytest.raises(DataError):
        physics.BoundaryConditions(Q=-1e-7).validate()
    with pytest.raises(DataError):
        physics.BoundaryConditions(Q=1e-6, mu=0.0).validate()
    physics.BoundaryConditions(Q=0.0).validate()


def test_profile_validation_enforces_inlet_anchor(tube, bc):
    lf = physics.solve_lf(tube, bc)
    bad = physics.HemoProfile(U=lf.U, P=lf.P + 1.0, fidelity="low", bc=bc)
    with pytest.raises(DataError):
        bad.validate()


def test_ffr_profile_starts_at_one(stenosed_vessel):
    bc = physics.BoundaryConditions(Q=stenosed_vessel.meta.Q)
    prof = physics.solve_hf_oracle(stenosed_vessel, bc)
    assert physics.ffr(prof).values[0] == 1.0


# ---------------------------------------------------------------------------
# Stenosis loss and enriched oracle


def test_zero_severity_collapses_to_lf():
    g = make_vessel(S_s=0.0)
    bc = physics.BoundaryConditions(Q=g.meta.Q)
    lf = physics.solve_lf(g, bc)
    hf = physics.solve_hf_oracle(g, bc)
    assert np.array_equal(lf.P, hf.P)
    assert np.array_equal(lf.U, hf.U)
    assert hf.fidelity == "high"


def test_stenosis_adds_extra_pressure_drop():
    g = make_vessel(S_s=0.8)
    bc = physics.BoundaryConditions(Q=g.meta.Q)
    lf = physics.solve_lf(g, bc)
    hf = physics.solve_hf_oracle(g, bc)
    assert hf.P[-1] < lf.P[-1]
    assert np.all(hf.P <= lf.P + 1e-12)


def test_stenosis_loss_ramp_shape():
    g = make_vessel(S_s=0.7, x_p=0.5)
    bc = physics.BoundaryConditions(Q=g.meta.Q)
    drop, weight = physics.stenosis_loss(g, bc)
    assert drop > 0.0
    assert np.all(np.diff(weight) >= 0.0)
    assert weight[0] == 0.0
    assert weight[-1] == 1.0
    assert np.any((weight > 0) & (weight < 1))  # ramp across the stenotic extent


def test_stenosis_loss_grows_with_severity():
    drops = []
    for s in (0.3, 0.5, 0.7, 0.85):
        g = make_vessel(S_s=s)
        bc = physics.BoundaryConditions(Q=g.meta.Q)
        drops.append(physics.stenosis_loss(g, bc)[0])
    assert drops == sorted(drops)
    assert drops[-1] > drops[0]


def test_oracle_requires_design_metadata(tube, bc):
    assert tube.meta is None
    with pytest.raises(DataError):
        physics.solve_hf_oracle(tube, bc)


@given(
    S_s=st.floats(0.30, 0.85),
    Q=st.floats(4.0e-7, 1.4e-6),
    x_p=st.floats(0.2, 0.8),
)
@settings(max_examples=25, deadline=None)
def test_oracle_drop_nonnegative_and_finite(S_s, Q, x_p):
    g = make_vessel(S_s=S_s, Q=Q, x_p=x_p)
    bc = physics.BoundaryConditions(Q=Q)
    drop, weight = physics.stenosis_loss(g, bc)
    assert np.isfinite(drop) and drop >= 0.0
    assert weight.shape == (g.m,)
    assert np.all((weight >= 0.0) & (weight <= 1.0))


# ---------------------------------------------------------------------------
# External high-fidelity ingestion


def write_profile(path, prof, vessel_id=0):
    rec = datafiles.HemoRecord(
        vessel_id, prof.bc.Q, prof.bc.p_in, prof.fidelity, prof.U, prof.P,
        prof.bc.mu, prof.bc.rho,
    )
    datafiles.write_hemo(path, [rec])


def test_ingest_round_trip_same_grid(tmp_path, stenosed_vessel):
    bc = physics.BoundaryConditions(Q=stenosed_vessel.meta.Q)
    hf = physics.solve_hf_oracle(stenosed_vessel, bc)
    path = tmp_path / "hf.txt"
    write_profile(path, hf)
    back = physics.ingest_hf_profile(path, stenosed_vessel)
    assert back.fidelity == "external"
    assert np.array_equal(back.P, hf.P)
    assert np.array_equal(back.U, hf.U)


def test_ingest_resamples_station_counts(tmp_path):
    g_coarse = make_vessel(m=96)
    g_fine = make_vessel(m=128)
    bc = physics.BoundaryConditions(Q=g_coarse.meta.Q)
    hf = physics.solve_hf_oracle(g_coarse, bc)
    path = tmp_path / "hf96.txt"
    write_profile(path, hf)
    back = physics.ingest_hf_profile(path, g_fine)
    assert back.P.shape == (128,)
    ref = np.interp(np.linspace(0, 1, 128), np.linspace(0, 1, 96), hf.P)
    ref[0] = bc.p_in
    assert back.P == pytest.approx(ref, rel=1e-12)


def test_ingest_rejects_inlet_mismatch(tmp_path, stenosed_vessel):
    bc = physics.BoundaryConditions(Q=stenosed_vessel.meta.Q)
    hf = physics.solve_hf_oracle(stenosed_vessel, bc)
    # Declared inlet stays at P_IN while the stored curve starts 3% below it:
    # the self-consistency check between the record's own p_in and P[0] must fire.
    rec = datafiles.HemoRecord(
        0, bc.Q, P_IN, "high", hf.U, hf.P - 0.03 * P_IN, bc.mu, bc.rho,
    )
    path = tmp_path / "hf_shift.txt"
    datafiles.write_hemo(path, [rec])
    with pytest.raises(DataError):
        physics.ingest_hf_profile(path, stenosed_vessel)


def test_ingest_missing_file_raises(tmp_path, stenosed_vessel):
    with pytest.raises(DataError):
        physics.ingest_hf_profile(tmp_path / "absent.txt", stenosed_vessel)
