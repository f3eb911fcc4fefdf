"""Dataset file formats: vessels, hemodynamics records, attention exports.

Text files are newline-delimited records under a one-line header; floats are
written with repr() so every value round-trips bit-exactly. The binary
variants share the text header line followed by fixed-size records of
little-endian 64-bit floats, row-major. Nothing here embeds timestamps, so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DataError
from .geom import RANGES, VARIABLE_ORDER, DesignVariables, VesselGeometry
from .physics import MU_DEFAULT, RHO_DEFAULT

_F8 = "<f8"


def fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


# ---------------------------------------------------------------------------
# Vessel datasets


def write_vessels(path, vessels: list[VesselGeometry], binary: bool = False) -> None:
    if not vessels:
        raise DataError("refusing to write an empty vessel dataset")
    m = vessels[0].m
    for i, g in enumerate(vessels):
        g.validate()
        if g.m != m:
            raise DataError(f"vessel {i} has m={g.m}, dataset uses m={m}")
        if g.meta is None:
            raise DataError(f"vessel {i} lacks design metadata required by the format")
    fmt = "binary" if binary else "text"
    header = f"ffrkit-vessels v1 m={m} count={len(vessels)} fmt={fmt}\n"
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode())
            for g in vessels:
                row = np.concatenate(
                    [g.meta.as_array(), [float(g.meta.template_id)], g.samples.ravel()]
                )
                fh.write(np.ascontiguousarray(row, dtype=_F8).tobytes())
        return
    with open(path, "w") as fh:
        fh.write(header)
        for g in vessels:
            dv = g.meta
            fields = [getattr(dv, name) for name in VARIABLE_ORDER]
            fh.write(fmt_floats(fields) + f" {dv.template_id} " + fmt_floats(g.samples.ravel()) + "\n")


def read_vessels(path) -> list[VesselGeometry]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"{path}: cannot read vessel dataset: {exc}") from exc
    with fh:
        header = fh.readline().decode(errors="replace").strip()
        fields = header.split()
        if len(fields) != 5 or fields[0] != "ffrkit-vessels" or fields[1] != "v1":
            raise DataError(f"{path}: bad vessel dataset header {header!r}")
        try:
            m = int(fields[2].removeprefix("m="))
            count = int(fields[3].removeprefix("count="))
            fmt = fields[4].removeprefix("fmt=")
        except ValueError as exc:
            raise DataError(f"{path}: unparseable header {header!r}") from exc
        if fmt not in ("text", "binary"):
            raise DataError(f"{path}: unknown format {fmt!r}")
        record_values = len(VARIABLE_ORDER) + 1 + 4 * m
        vessels = []
        if fmt == "binary":
            payload = fh.read()
            expected = count * record_values * 8
            if len(payload) != expected:
                raise DataError(
                    f"{path}: payload {len(payload)} bytes, expected {expected}"
                )
            rows = np.frombuffer(payload, dtype=_F8).reshape(count, record_values)
            for row in rows:
                vessels.append(_vessel_from_row(row, m, path))
            return vessels
        for lineno, raw in enumerate(fh.read().decode().splitlines(), start=2):
            if not raw.strip():
                continue
            parts = raw.split()
            if len(parts) != record_values:
                raise DataError(
                    f"{path}:{lineno}: {len(parts)} fields, expected {record_values}"
                )
            try:
                row = np.array([float(v) for v in parts])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad float: {exc}") from exc
            vessels.append(_vessel_from_row(row, m, path))
        if len(vessels) != count:
            raise DataError(f"{path}: {len(vessels)} records, header says {count}")
        return vessels


def _vessel_from_row(row: np.ndarray, m: int, path) -> VesselGeometry:
    n_dv = len(VARIABLE_ORDER)
    dv = DesignVariables(
        **{name: float(row[i]) for i, name in enumerate(VARIABLE_ORDER)},
        template_id=int(row[n_dv]),
    )
    dv.validate()
    samples = row[n_dv + 1 :].reshape(4, m).copy()
    g = VesselGeometry(samples, meta=dv)
    g.validate()
    return g


# ---------------------------------------------------------------------------
# Hemodynamics datasets

_FIDELITY_CODES = {"low": 0.0, "high": 1.0, "external": 2.0}
_FIDELITY_NAMES = {v: k for k, v in _FIDELITY_CODES.items()}


@dataclasses.dataclass
class HemoRecord:
    """One stored profile: provenance ids plus the raw U/P arrays."""

    vessel_id: int
    Q: float
    p_in: float
    fidelity: str
    U: np.ndarray
    P: np.ndarray
    mu: float = MU_DEFAULT
    rho: float = RHO_DEFAULT


def write_hemo(path, records: list[HemoRecord], binary: bool = False) -> None:
    if not records:
        raise DataError("refusing to write an empty hemodynamics dataset")
    m = len(records[0].U)
    for i, rec in enumerate(records):
        if rec.fidelity not in _FIDELITY_CODES:
            raise DataError(f"record {i}: unknown fidelity {rec.fidelity!r}")
        if len(rec.U) != m or len(rec.P) != m:
            raise DataError(f"record {i}: profile length differs from m={m}")
    fmt = "binary" if binary else "text"
    mu, rho = records[0].mu, records[0].rho
    header = (
        f"ffrkit-hemo v1 m={m} count={len(records)} fmt={fmt} "
        f"units=SI mu={mu!r} rho={rho!r}\n"
    )
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode())
            for rec in records:
                row = np.concatenate(
                    [
                        [float(rec.vessel_id), rec.Q, rec.p_in, _FIDELITY_CODES[rec.fidelity]],
                        np.asarray(rec.U, dtype=float),
                        np.asarray(rec.P, dtype=float),
                    ]
                )
                fh.write(np.ascontiguousarray(row, dtype=_F8).tobytes())
        return
    with open(path, "w") as fh:
        fh.write(header)
        for rec in records:
            fh.write(
                f"{rec.vessel_id} {rec.Q!r} {rec.p_in!r} {rec.fidelity} "
                + fmt_floats(rec.U)
                + " "
                + fmt_floats(rec.P)
                + "\n"
            )


def read_hemo(path) -> list[HemoRecord]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"{path}: cannot read hemodynamics dataset: {exc}") from exc
    with fh:
        header = fh.readline().decode(errors="replace").strip()
        fields = header.split()
        if len(fields) != 8 or fields[0] != "ffrkit-hemo" or fields[1] != "v1":
            raise DataError(f"{path}: bad hemodynamics header {header!r}")
        try:
            m = int(fields[2].removeprefix("m="))
            count = int(fields[3].removeprefix("count="))
            fmt = fields[4].removeprefix("fmt=")
            mu = float(fields[6].removeprefix("mu="))
            rho = float(fields[7].removeprefix("rho="))
        except ValueError as exc:
            raise DataError(f"{path}: unparseable header {header!r}") from exc
        records = []
        if fmt == "binary":
            width = 4 + 2 * m
            payload = fh.read()
            if len(payload) != count * width * 8:
                raise DataError(f"{path}: truncated binary payload")
            rows = np.frombuffer(payload, dtype=_F8).reshape(count, width)
            for row in rows:
                code = float(row[3])
                if code not in _FIDELITY_NAMES:
                    raise DataError(f"{path}: unknown fidelity code {code}")
                records.append(
                    HemoRecord(
                        vessel_id=int(row[0]),
                        Q=float(row[1]),
                        p_in=float(row[2]),
                        fidelity=_FIDELITY_NAMES[code],
                        U=row[4 : 4 + m].copy(),
                        P=row[4 + m :].copy(),
                        mu=mu,
                        rho=rho,
                    )
                )
            return records
        for lineno, raw in enumerate(fh.read().decode().splitlines(), start=2):
            if not raw.strip():
                continue
            parts = raw.split()
            if len(parts) != 4 + 2 * m:
                raise DataError(f"{path}:{lineno}: {len(parts)} fields, expected {4 + 2 * m}")
            if parts[3] not in _FIDELITY_CODES:
                raise DataError(f"{path}:{lineno}: unknown fidelity {parts[3]!r}")
            try:
                U = np.array([float(v) for v in parts[4 : 4 + m]])
                P = np.array([float(v) for v in parts[4 + m :]])
                records.append(
                    HemoRecord(
                        vessel_id=int(parts[0]),
                        Q=float(parts[1]),
                        p_in=float(parts[2]),
                        fidelity=parts[3],
                        U=U,
                        P=P,
                        mu=mu,
                        rho=rho,
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad value: {exc}") from exc
        if len(records) != count:
            raise DataError(f"{path}: {len(records)} records, header says {count}")
        return records


def normalized_bc(Q: float, p_in: float) -> np.ndarray:
    """Boundary conditions mapped to network inputs: Q linearly over its
    sampling range, p_in relative to the reference inlet pressure."""
    lo, hi = RANGES["Q"]
    from .physics import P_IN_DEFAULT

    return np.array([(Q - lo) / (hi - lo), p_in / P_IN_DEFAULT])
