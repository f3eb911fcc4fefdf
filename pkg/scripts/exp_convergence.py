"""Measure grid convergence (m=128 -> 256) of outlet pressure, LF and HF.

Compares the current station-grid trapezoid against subgrid-refined
quadrature prototypes, over 50 randomly sampled stenosed vessels.
"""

import sys
import time

import numpy as np
from scipy.interpolate import CubicSpline

sys.path.insert(0, "src")
from ffrkit import geom, physics  # noqa: E402

N = 50
SEED = 2026


def subgrid_param(t, k):
    """Per-interval uniform refinement of knot vector t; keeps knots at ::k."""
    steps = np.linspace(0.0, 1.0, k + 1)[:-1]  # k points per interval
    sub = (t[:-1, None] + np.diff(t)[:, None] * steps[None, :]).ravel()
    return np.concatenate([sub, t[-1:]])


def radius_law(dv, s):
    base = dv.r_p * (1.0 - (1.0 - dv.T_r) * s / dv.l_v)
    c = dv.x_p * dv.l_v
    sigma = dv.l_s / 6.0
    base_center = dv.r_p * (1.0 - (1.0 - dv.T_r) * dv.x_p)
    return base - dv.S_s * base_center * np.exp(-((s - c) ** 2) / (2.0 * sigma**2))


def solve_lf_proto(g, bc, k=16, arc="chord"):
    r = g.radii
    m = r.size
    t = g.arc_length()  # chord-based station coordinate
    if arc == "analytic":
        s_sub = subgrid_param(np.linspace(0.0, g.meta.l_v, m), k)
        r_sub = radius_law(g.meta, s_sub)
    else:
        t_sub = subgrid_param(t, k)
        r_sub = CubicSpline(t, r)(t_sub)
    if arc in ("meta", "analytic"):
        if arc == "meta":
            s_sub = subgrid_param(np.linspace(0.0, g.meta.l_v, m), k)
    elif arc == "spline":
        cs = CubicSpline(t, g.centerline, axis=1)
        speed = np.linalg.norm(cs(t_sub, 1), axis=0)
        inc = 0.5 * (speed[1:] + speed[:-1]) * np.diff(t_sub)
        s_sub = np.concatenate([[0.0], np.cumsum(inc)])
    else:
        s_sub = t_sub
    f_sub = 8.0 * bc.mu * bc.Q / (np.pi * r_sub**4)
    visc_sub = np.concatenate(
        [[0.0], np.cumsum(0.5 * (f_sub[1:] + f_sub[:-1]) * np.diff(s_sub))]
    )
    visc = visc_sub[::k]
    area = np.pi * r * r
    U = bc.Q / area
    P = bc.p_in - 0.5 * bc.rho * (U * U - U[0] * U[0]) - visc
    return U, P


def stenosis_drop_analytic(dv, bc):
    """Closed-form stenosis loss from the radius law (m-independent)."""
    c = dv.x_p * dv.l_v
    sigma = dv.l_s / 6.0
    base_center = dv.r_p * (1.0 - (1.0 - dv.T_r) * dv.x_p)

    def radius(s):
        base = dv.r_p * (1.0 - (1.0 - dv.T_r) * s / dv.l_v)
        return base - dv.S_s * base_center * np.exp(-((s - c) ** 2) / (2.0 * sigma**2))

    start = max(c - dv.l_s / 2.0, 0.0)
    end = min(c + dv.l_s / 2.0, dv.l_v)
    r_n = float(radius(start))
    grid = np.linspace(start, end, 513)
    vals = radius(grid)
    i = int(np.argmin(vals))
    if 0 < i < grid.size - 1:
        y0, y1, y2 = vals[i - 1 : i + 2]
        denom = y0 - 2.0 * y1 + y2
        if denom > 0:
            h = grid[1] - grid[0]
            s_min = grid[i] + 0.5 * h * (y0 - y2) / denom
            r_s = float(radius(np.array([s_min]))[0])
        else:
            r_s = float(vals[i])
    else:
        r_s = float(vals[i])
    d_n = 2.0 * r_n
    a_n = np.pi * r_n * r_n
    a_s = np.pi * r_s * r_s
    u_n = bc.Q / a_n
    ratio = a_n / a_s
    k_v = 32.0 * (dv.l_s / d_n) * ratio**2
    return (k_v * bc.mu / d_n) * u_n + physics.K_T * (bc.rho / 2.0) * (
        ratio - 1.0
    ) ** 2 * u_n**2


def main():
    designs = geom.sample_designs(N, seed=SEED)
    templates = geom.builtin_templates()
    rows = []
    t_old = t_new = 0.0
    for i, dv in enumerate(designs):
        tpl = templates[dv.template_id]
        vseed = 1000 + i
        g1 = geom.generate_vessel(dv, tpl, vseed, m=128)
        g2 = geom.generate_vessel(dv, tpl, vseed, m=256)
        bc = physics.BoundaryConditions(Q=dv.Q)

        # current solver
        t0 = time.perf_counter()
        lo1 = physics.solve_lf(g1, bc)
        t_old += time.perf_counter() - t0
        lo2 = physics.solve_lf(g2, bc)
        cur_lf = abs(lo2.P[-1] - lo1.P[-1]) / abs(lo1.P[-1])
        d1, w1 = physics.stenosis_loss(g1, bc)
        d2, w2 = physics.stenosis_loss(g2, bc)
        cur_hf = abs((lo2.P[-1] - d2 * w2[-1]) - (lo1.P[-1] - d1 * w1[-1])) / max(
            abs(lo1.P[-1] - d1 * w1[-1]), 1e-30
        )

        row = {"cur_lf": cur_lf, "cur_hf": cur_hf, "Pout": lo1.P[-1]}
        for arc in ("chord", "meta", "spline", "analytic"):
            for k in (8, 16, 32):
                t0 = time.perf_counter()
                _, P1 = solve_lf_proto(g1, bc, k=k, arc=arc)
                if arc == "analytic" and k == 16:
                    t_new += time.perf_counter() - t0
                _, P2 = solve_lf_proto(g2, bc, k=k, arc=arc)
                row[f"{arc}{k}"] = abs(P2[-1] - P1[-1]) / abs(P1[-1])
                drop = stenosis_drop_analytic(dv, bc)
                row[f"hf_{arc}{k}"] = abs(P2[-1] - P1[-1]) / max(abs(P1[-1] - drop), 1e-30)
        rows.append(row)

    keys = ["cur_lf", "cur_hf"] + [
        f"{p}{a}{k}" for p in ("", "hf_") for a in ("chord", "meta", "spline", "analytic") for k in (8, 16, 32)
    ]
    print(f"{'metric':<14}{'max':>12}{'median':>12}")
    for key in keys:
        v = np.array([r[key] for r in rows])
        print(f"{key:<14}{v.max():>12.3e}{np.median(v):>12.3e}")
    pouts = np.array([r["Pout"] for r in rows])
    print(f"outlet P range: {pouts.min():.1f} .. {pouts.max():.1f} Pa")
    print(f"old solver: {1e3 * t_old / N:.3f} ms/vessel; proto(analytic,16): {1e3 * t_new / N:.3f} ms/vessel")


if __name__ == "__main__":
    main()
