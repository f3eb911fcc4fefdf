"""Steady 1-D hemodynamics: low-fidelity solver, high-fidelity stand-in, FFR.

The low-fidelity model integrates the cross-section-averaged incompressible
momentum balance along arc length with a Poiseuille wall-friction closure
(f = -8 mu pi U). The high-fidelity stand-in augments it with an empirical
viscous+turbulent stenosis loss so that the two fidelities diverge across and
after the stenosis, which is the gap the surrogate has to learn. Genuine
external solver output can be ingested from a hemodynamics dataset file.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from scipy.interpolate import CubicSpline

from .errors import DataError
from .geom import VesselGeometry, radius_law

P_IN_DEFAULT = 13065.6  # Pa
MU_DEFAULT = 0.004  # Pa s
RHO_DEFAULT = 1060.0  # kg/m^3

K_T = 1.52  # turbulent stenosis loss coefficient

# Sub-intervals per station interval in the friction quadrature. The stenosis
# dip can be as narrow as two station spacings, where a station-grid trapezoid
# rule leaves ~0.4% outlet-pressure grid sensitivity; refining the integrand
# between stations brings the m=128 -> 256 change below 1e-4.
SUBGRID_K = 32


def _refine(knots: np.ndarray, k: int) -> np.ndarray:
    """Insert k-1 uniform points inside every knot interval (knots kept at ::k)."""
    steps = np.linspace(0.0, 1.0, k + 1)[:-1]
    sub = (knots[:-1, None] + np.diff(knots)[:, None] * steps[None, :]).ravel()
    return np.concatenate([sub, knots[-1:]])


def _viscous_drop(g: VesselGeometry, bc: BoundaryConditions) -> np.ndarray:
    """Cumulative Poiseuille friction drop at each station.

    Integrates 8 mu pi U / A = 8 mu Q / (pi r^4) by the trapezoidal rule on a
    subgrid of the station intervals. The sub-station radius comes from the
    vessel's continuous radius profile when design metadata is attached (the
    station radii are samples of that law), and from a cubic-spline
    reconstruction of the station radii otherwise. Vessels too short to spline
    (m < 4), or whose spline reconstruction leaves the physical range, fall
    back to the plain station-grid rule.
    """
    r = g.radii
    s = g.arc_length()
    if np.all(r == r[0]):
        # Constant integrand: the station-grid rule is already exact.
        s_sub, r_sub = s, r
    elif g.meta is not None:
        # Stations are equispaced in arc length with total meta.l_v by
        # construction; the chord-based coordinate under-measures that by
        # O(h^2), which is itself a grid-dependent error, so the quadrature
        # runs in the law's own arc coordinate.
        s_sub = _refine(np.linspace(0.0, g.meta.l_v, g.m), SUBGRID_K)
        r_sub = radius_law(g.meta, s_sub)
        if np.min(r_sub) <= 0.0:
            raise DataError(
                f"radius profile closes the lumen between stations (min {np.min(r_sub):.3e} m)"
            )
    elif g.m >= 4:
        s_sub = _refine(s, SUBGRID_K)
        r_sub = CubicSpline(s, r)(s_sub)
        if np.min(r_sub) <= 0.0:
            s_sub, r_sub = s, r
    else:
        s_sub, r_sub = s, r
    f = 8.0 * bc.mu * bc.Q / (np.pi * r_sub**4)
    drop = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(s_sub))])
    if r_sub.size == g.m:
        return drop
    return drop[::SUBGRID_K]


@dataclasses.dataclass(frozen=True)
class BoundaryConditions:
    Q: float
    p_in: float = P_IN_DEFAULT
    mu: float = MU_DEFAULT
    rho: float = RHO_DEFAULT

    def validate(self) -> None:
        # Q = 0 is admitted as the zero-flow limit (U = 0, P = p_in).
        if not (math.isfinite(self.Q) and self.Q >= 0):
            raise DataError(f"flow rate must be >= 0, got {self.Q!r}")
        for name in ("p_in", "mu", "rho"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"{name} must be positive, got {v!r}")


@dataclasses.dataclass
class HemoProfile:
    U: np.ndarray
    P: np.ndarray
    fidelity: str  # low | high | external
    bc: BoundaryConditions

    def validate(self) -> None:
        if self.fidelity not in ("low", "high", "external"):
            raise DataError(f"unknown fidelity tag {self.fidelity!r}")
        if self.U.shape != self.P.shape or self.U.ndim != 1:
            raise DataError(f"profile shapes U{self.U.shape} P{self.P.shape} inconsistent")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.P))):
            raise DataError("profile contains non-finite values")
        if self.P[0] != self.bc.p_in:
            raise DataError(f"P[0]={self.P[0]!r} not anchored to p_in={self.bc.p_in!r}")
        if self.bc.Q > 0 and np.any(self.U <= 0):
            raise DataError("velocity must be positive everywhere for Q > 0")


@dataclasses.dataclass
class FfrProfile:
    values: np.ndarray

    def validate(self) -> None:
        if self.values.ndim != 1 or self.values[0] != 1.0:
            raise DataError("FFR profile must start at exactly 1")


def solve_lf(g: VesselGeometry, bc: BoundaryConditions) -> HemoProfile:
    """Low-fidelity profile: continuity U = Q/A plus integrated momentum balance.

    P(x) = p_in - (rho/2)(U^2 - U(0)^2) - int_0^x 8 mu pi U / A ds, with the
    friction integral evaluated by the trapezoidal rule on a sub-station
    refinement of the arc-length grid (see _viscous_drop).
    """
    g.validate()
    bc.validate()
    r = g.radii
    area = np.pi * r * r
    U = bc.Q / area
    P = bc.p_in - 0.5 * bc.rho * (U * U - U[0] * U[0]) - _viscous_drop(g, bc)
    prof = HemoProfile(U=U, P=P, fidelity="low", bc=bc)
    prof.validate()
    return prof


def _min_lumen_radius(dv, start: float, end: float) -> float:
    """Minimum of the continuous radius profile over [start, end].

    Dense sampling plus a parabolic refinement of the interior minimum; the
    taper shifts the true minimum slightly off the dip center, so the center
    value alone would under-report the severity of tapered vessels.
    """
    grid = np.linspace(start, end, 513)
    vals = radius_law(dv, grid)
    i = int(np.argmin(vals))
    if 0 < i < grid.size - 1:
        y0, y1, y2 = vals[i - 1], vals[i], vals[i + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom > 0.0:
            h = grid[1] - grid[0]
            s_min = grid[i] + 0.5 * h * (y0 - y2) / denom
            return float(radius_law(dv, np.array([s_min]))[0])
    return float(vals[i])


def stenosis_loss(g: VesselGeometry, bc: BoundaryConditions) -> tuple[float, np.ndarray]:
    """Empirical viscous+turbulent pressure loss and its along-vessel ramp.

    dP = (K_v mu / D_n) U_n + (K_t rho / 2)((A_n/A_s) - 1)^2 U_n^2 with
    K_v = 32 (l_s / D_n)(A_n/A_s)^2, evaluated from the proximal-shoulder
    section (A_n) and minimum lumen (A_s) of the continuous radius profile.
    The returned weight ramps 0 -> 1 linearly across the stenotic extent and
    stays 1 distally: the loss is not recovered downstream.
    """
    dv = g.meta
    if dv is None:
        raise DataError("high-fidelity oracle needs design metadata on the vessel")
    if dv.S_s == 0.0:
        return 0.0, np.zeros(g.m)

    # Shoulder and minimum-lumen sections come from the continuous radius
    # profile, not the station samples: the dip minimum generally falls
    # between stations, and a station-sampled minimum would make the loss
    # (and with it the oracle's outlet pressure) grid-dependent.
    center = dv.x_p * dv.l_v
    start = max(center - dv.l_s / 2.0, 0.0)
    end = min(center + dv.l_s / 2.0, dv.l_v)
    r_n = float(radius_law(dv, np.array([start]))[0])
    d_n = 2.0 * r_n
    a_n = np.pi * r_n * r_n
    u_n = bc.Q / a_n
    r_s = _min_lumen_radius(dv, start, end)
    a_s = np.pi * r_s * r_s
    ratio = a_n / a_s

    k_v = 32.0 * (dv.l_s / d_n) * ratio**2
    drop = (k_v * bc.mu / d_n) * u_n + K_T * (bc.rho / 2.0) * (ratio - 1.0) ** 2 * u_n**2

    s = np.linspace(0.0, dv.l_v, g.m)
    if end > start:
        weight = np.clip((s - start) / (end - start), 0.0, 1.0)
    else:
        weight = (s >= start).astype(float)
    return float(drop), weight


def solve_hf_oracle(g: VesselGeometry, bc: BoundaryConditions) -> HemoProfile:
    """High-fidelity stand-in: LF solution plus the ramped stenosis loss."""
    lf = solve_lf(g, bc)
    drop, weight = stenosis_loss(g, bc)
    prof = HemoProfile(U=lf.U.copy(), P=lf.P - drop * weight, fidelity="high", bc=bc)
    prof.validate()
    return prof


def ffr(p: HemoProfile) -> FfrProfile:
    p.validate()
    out = FfrProfile(values=p.P / p.bc.p_in)
    out.validate()
    return out


def ingest_hf_profile(path, g: VesselGeometry) -> HemoProfile:
    """Read one externally computed profile and adapt it to the vessel grid.

    The file uses the hemodynamics dataset format. Station counts other than
    the vessel's m are linearly resampled. The inlet pressure must match the
    declared p_in within 1% (tolerated as format noise and removed by a
    uniform offset); larger mismatches indicate the wrong file and error out.
    """
    from .datafiles import read_hemo

    g.validate()
    records = read_hemo(path)
    if not records:
        raise DataError(f"{path}: no hemodynamics records")
    rec = records[0]
    U, P = np.asarray(rec.U, dtype=float), np.asarray(rec.P, dtype=float)
    if U.shape != P.shape or U.ndim != 1 or U.size < 2:
        raise DataError(f"{path}: malformed profile arrays")
    if U.size != g.m:
        pos_in = np.linspace(0.0, 1.0, U.size)
        pos_out = np.linspace(0.0, 1.0, g.m)
        U = np.interp(pos_out, pos_in, U)
        P = np.interp(pos_out, pos_in, P)
    bc = BoundaryConditions(Q=rec.Q, p_in=rec.p_in, mu=rec.mu, rho=rec.rho)
    bc.validate()
    offset = bc.p_in - P[0]
    if abs(offset) > 0.01 * bc.p_in:
        raise DataError(
            f"{path}: inlet pressure {P[0]:.6g} deviates from p_in {bc.p_in:.6g} by more than 1%"
        )
    P = P + offset
    P[0] = bc.p_in
    prof = HemoProfile(U=U, P=P, fidelity="external", bc=bc)
    prof.validate()
    return prof
