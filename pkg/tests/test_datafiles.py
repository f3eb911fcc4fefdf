"""Dataset file formats: round-trips, corruption detection, input mapping."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffrkit import datafiles, geom, physics
from ffrkit.errors import DataError

from conftest import make_vessel


def make_records(n=3, m=16, fidelity="low"):
    rng = np.random.default_rng(5)
    return [
        datafiles.HemoRecord(
            vessel_id=i,
            Q=float(rng.uniform(4e-7, 1.4e-6)),
            p_in=physics.P_IN_DEFAULT,
            fidelity=fidelity,
            U=rng.uniform(0.01, 1.0, m),
            P=rng.uniform(1000.0, 13000.0, m),
        )
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# Vessel datasets


@pytest.mark.parametrize("binary", [False, True])
def test_vessel_round_trip_bit_exact(tmp_path, binary):
    vessels = [make_vessel(seed=i, S_s=0.4 + 0.05 * i) for i in range(3)]
    path = tmp_path / "v.dat"
    datafiles.write_vessels(path, vessels, binary=binary)
    back = datafiles.read_vessels(path)
    assert len(back) == 3
    for orig, new in zip(vessels, back):
        assert np.array_equal(orig.samples, new.samples)
        assert new.meta == orig.meta


def test_vessel_write_rejects_bad_inputs(tmp_path):
    with pytest.raises(DataError):
        datafiles.write_vessels(tmp_path / "x", [])
    v = make_vessel()
    stripped = geom.VesselGeometry(v.samples.copy())
    with pytest.raises(DataError):
        datafiles.write_vessels(tmp_path / "x", [stripped])
    with pytest.raises(DataError):
        datafiles.write_vessels(tmp_path / "x", [v, make_vessel(m=64)])


def test_vessel_reader_rejects_corruption(tmp_path):
    v = [make_vessel()]
    path = tmp_path / "v.txt"
    datafiles.write_vessels(path, v)
    good = path.read_text()

    bad = tmp_path / "bad.txt"
    bad.write_text("ffrkit-wrong v1 m=128 count=1 fmt=text\n" + good.split("\n", 1)[1])
    with pytest.raises(DataError):
        datafiles.read_vessels(bad)
    bad.write_text(good.replace("count=1", "count=2"))
    with pytest.raises(DataError):
        datafiles.read_vessels(bad)
    header, payload = good.split("\n", 1)
    bad.write_text(header + "\n" + payload.strip() + " 0.5\n")  # extra field
    with pytest.raises(DataError):
        datafiles.read_vessels(bad)
    bad.write_text(good.replace("fmt=text", "fmt=csv"))
    with pytest.raises(DataError):
        datafiles.read_vessels(bad)


def test_vessel_binary_truncation_detected(tmp_path):
    path = tmp_path / "v.bin"
    datafiles.write_vessels(path, [make_vessel()], binary=True)
    blob = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(blob[:-8])
    with pytest.raises(DataError):
        datafiles.read_vessels(tmp_path / "t.bin")


def test_vessel_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        datafiles.read_vessels(tmp_path / "absent.txt")


# ---------------------------------------------------------------------------
# Hemodynamics datasets


@pytest.mark.parametrize("binary", [False, True])
def test_hemo_round_trip_bit_exact(tmp_path, binary):
    records = make_records()
    path = tmp_path / "h.dat"
    datafiles.write_hemo(path, records, binary=binary)
    back = datafiles.read_hemo(path)
    assert len(back) == len(records)
    for orig, new in zip(records, back):
        assert new.vessel_id == orig.vessel_id
        assert new.Q == orig.Q
        assert new.p_in == orig.p_in
        assert new.fidelity == orig.fidelity
        assert np.array_equal(new.U, orig.U)
        assert np.array_equal(new.P, orig.P)
        assert new.mu == orig.mu and new.rho == orig.rho


def test_hemo_write_rejects_bad_records(tmp_path):
    with pytest.raises(DataError):
        datafiles.write_hemo(tmp_path / "x", [])
    records = make_records()
    records[1].fidelity = "medium"
    with pytest.raises(DataError):
        datafiles.write_hemo(tmp_path / "x", records)
    records = make_records()
    records[2].U = records[2].U[:-1]
    with pytest.raises(DataError):
        datafiles.write_hemo(tmp_path / "x", records)


def test_hemo_reader_rejects_corruption(tmp_path):
    path = tmp_path / "h.txt"
    datafiles.write_hemo(path, make_records(n=2))
    good = path.read_text()
    bad = tmp_path / "bad.txt"

    bad.write_text(good.replace("ffrkit-hemo", "ffrkit-flow"))
    with pytest.raises(DataError):
        datafiles.read_hemo(bad)
    bad.write_text(good.replace("count=2", "count=3"))
    with pytest.raises(DataError):
        datafiles.read_hemo(bad)
    bad.write_text(good.replace(" low ", " med "))
    with pytest.raises(DataError):
        datafiles.read_hemo(bad)

    binpath = tmp_path / "h.bin"
    datafiles.write_hemo(binpath, make_records(n=2), binary=True)
    (tmp_path / "t.bin").write_bytes(binpath.read_bytes()[:-16])
    with pytest.raises(DataError):
        datafiles.read_hemo(tmp_path / "t.bin")


def test_hemo_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        datafiles.read_hemo(tmp_path / "absent.txt")


def test_hemo_header_carries_fluid_constants(tmp_path):
    records = make_records(n=1)
    records[0].mu = 0.0035
    records[0].rho = 1050.0
    path = tmp_path / "h.txt"
    datafiles.write_hemo(path, records)
    assert "mu=0.0035" in path.read_text().splitlines()[0]
    back = datafiles.read_hemo(path)
    assert back[0].mu == 0.0035 and back[0].rho == 1050.0


# ---------------------------------------------------------------------------
# Formatting and input mapping


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_float_formatting_round_trips_bit_exact(values):
    text = datafiles.fmt_floats(values)
    back = [float(tok) for tok in text.split()]
    assert all(a == b for a, b in zip(back, values))


def test_normalized_bc_maps_reference_points():
    lo, hi = geom.RANGES["Q"]
    mid = 0.5 * (lo + hi)
    out = datafiles.normalized_bc(mid, physics.P_IN_DEFAULT)
    assert out.shape == (2,)
    assert abs(out[0] - 0.5) < 1e-12
    assert out[1] == 1.0
    assert datafiles.normalized_bc(lo, physics.P_IN_DEFAULT)[0] == 0.0
    assert datafiles.normalized_bc(hi, 0.5 * physics.P_IN_DEFAULT)[0] == 1.0
    assert datafiles.normalized_bc(hi, 0.5 * physics.P_IN_DEFAULT)[1] == 0.5
