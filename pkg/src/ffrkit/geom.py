"""Synthetic stenosed-vessel geometry generation.

A vessel is a 4 x m sample grid: centerline coordinates (x, y, z) plus lumen
radius r at m stations equally spaced in arc length. Geometries are built in
three steps: draw design variables with a (possibly skewed) Latin hypercube,
realize a jittered centerline from a 17-control-point template, and carve a
Gaussian stenosis into a linearly tapering radius profile.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DataError, NumericError

# Sampling ranges, SI units (meters, m^3/s). x_p is the fractional stenosis
# position along the vessel, S_s the area-free severity (1 - r_min/r_base),
# T_r the outlet/inlet radius ratio.
RANGES: dict[str, tuple[float, float]] = {
    "x_p": (0.0, 1.0),
    "l_s": (0.005, 0.03),
    "S_s": (0.30, 0.85),
    "r_p": (0.0015, 0.002),
    "T_r": (0.59, 0.80),
    "l_v": (0.04, 0.07),
    "Q": (4.0e-7, 1.4e-6),
}

# Skew exponents k: sample u uniformly over [lo^k, hi^k] and take u^(1/k),
# pushing mass toward the upper end of the range for k > 1.
DEFAULT_SKEW: dict[str, int] = {
    "x_p": 1,
    "l_s": 1,
    "S_s": 10,
    "r_p": 10,
    "T_r": 20,
    "l_v": 10,
    "Q": 1,
}

UNIFORM_SKEW: dict[str, int] = {name: 1 for name in RANGES}

VARIABLE_ORDER = ("x_p", "l_s", "S_s", "r_p", "T_r", "l_v", "Q")

N_CONTROL_POINTS = 17
SUBSAMPLES_PER_SPAN = 1000


@dataclasses.dataclass
class DesignVariables:
    """One sampled vessel design."""

    x_p: float
    l_s: float
    S_s: float
    r_p: float
    T_r: float
    l_v: float
    Q: float
    template_id: int = 0

    def validate(self) -> None:
        for name in VARIABLE_ORDER:
            lo, hi = RANGES[name]
            value = getattr(self, name)
            if name == "S_s" and value == 0.0:
                continue  # healthy twin: exactly zero severity is admitted
            if not math.isfinite(value) or not (lo <= value <= hi):
                raise DataError(
                    f"design variable {name}={value!r} outside [{lo}, {hi}]"
                )
        if self.template_id < 0:
            raise DataError(f"negative template_id {self.template_id}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in VARIABLE_ORDER])


def sample_designs(
    n: int,
    skew: dict[str, int] | None = None,
    seed: int = 0,
    n_templates: int = 3,
    midpoint: bool = False,
) -> list[DesignVariables]:
    """Draw n designs by Latin hypercube sampling in skew-transformed space.

    Each variable is sampled with exactly one point per stratum of the
    transformed range [lo^k, hi^k]; strata are paired across variables by
    independent random permutations. With ``midpoint`` each point sits at its
    stratum center (deterministic, used for calibration tests).
    """
    if n < 1:
        raise DataError(f"need at least one sample, got n={n}")
    if n_templates < 1:
        raise DataError(f"need at least one template, got {n_templates}")
    skew = dict(DEFAULT_SKEW if skew is None else skew)
    for name in VARIABLE_ORDER:
        k = skew.get(name, 1)
        if not isinstance(k, int) or k < 1:
            raise DataError(f"skew exponent for {name} must be a positive int, got {k!r}")
        skew[name] = k

    rng = np.random.default_rng(seed)
    columns = {}
    # Fixed draw order keeps results reproducible for a given seed.
    for name in VARIABLE_ORDER:
        lo, hi = RANGES[name]
        k = skew[name]
        lo_t, hi_t = lo**k, hi**k
        strata = rng.permutation(n)
        offsets = np.full(n, 0.5) if midpoint else rng.random(n)
        u = lo_t + (strata + offsets) / n * (hi_t - lo_t)
        columns[name] = np.clip(u ** (1.0 / k), lo, hi)
    template_ids = rng.integers(0, n_templates, size=n)

    designs = []
    for i in range(n):
        dv = DesignVariables(
            **{name: float(columns[name][i]) for name in VARIABLE_ORDER},
            template_id=int(template_ids[i]),
        )
        dv.validate()
        designs.append(dv)
    return designs


def transform_to_unit(values: np.ndarray, name: str, skew: dict[str, int]) -> np.ndarray:
    """Map samples of one variable into [0, 1) of its skew-transformed range."""
    lo, hi = RANGES[name]
    k = skew.get(name, 1)
    t = np.asarray(values, dtype=float) ** k
    return (t - lo**k) / (hi**k - lo**k)


# ---------------------------------------------------------------------------
# Centerline templates


@dataclasses.dataclass
class CenterlineTemplate:
    """17 control-point means with per-point, per-axis jitter half-widths."""

    name: str
    means: np.ndarray  # (17, 3)
    sigmas: np.ndarray  # (17, 3), >= 0

    def validate(self) -> None:
        means = np.asarray(self.means, dtype=float)
        sigmas = np.asarray(self.sigmas, dtype=float)
        if means.shape != (N_CONTROL_POINTS, 3):
            raise DataError(f"template {self.name!r}: means shape {means.shape}, want (17, 3)")
        if sigmas.shape != (N_CONTROL_POINTS, 3):
            raise DataError(f"template {self.name!r}: sigmas shape {sigmas.shape}, want (17, 3)")
        if not np.all(np.isfinite(means)) or not np.all(np.isfinite(sigmas)):
            raise DataError(f"template {self.name!r}: non-finite control points")
        if np.any(sigmas < 0):
            raise DataError(f"template {self.name!r}: negative jitter width")


def builtin_templates() -> list[CenterlineTemplate]:
    """Three stock templates: straight, 50-degree planar arc, gentle 3-D S-curve.

    Extents are order-unity; curves are rescaled to the sampled vessel length
    downstream, so only shape matters here. Jitter half-widths are ~2% of the
    template extent, enough to decorrelate curvature without risking kinks.
    """
    t = np.linspace(0.0, 1.0, N_CONTROL_POINTS)

    straight = np.zeros((N_CONTROL_POINTS, 3))
    straight[:, 0] = t

    # Planar circular arc subtending 50 degrees, unit chord direction along x.
    half = math.radians(25.0)
    phi = np.linspace(-half, half, N_CONTROL_POINTS)
    arc = np.zeros((N_CONTROL_POINTS, 3))
    arc[:, 0] = np.sin(phi) - np.sin(-half)
    arc[:, 1] = -np.cos(phi) + math.cos(half)

    scurve = np.zeros((N_CONTROL_POINTS, 3))
    scurve[:, 0] = t
    scurve[:, 1] = 0.10 * np.sin(2.0 * np.pi * t)
    scurve[:, 2] = 0.05 * np.sin(np.pi * t)

    sig = np.full((N_CONTROL_POINTS, 3), 0.02)
    sig_arc = np.full((N_CONTROL_POINTS, 3), 0.015)
    return [
        CenterlineTemplate("straight", straight, sig.copy()),
        CenterlineTemplate("arc50", arc, sig_arc),
        CenterlineTemplate("scurve", scurve, sig.copy()),
    ]


def write_templates(path, templates: list[CenterlineTemplate]) -> None:
    lines = [f"ffrkit-templates v1 count={len(templates)}"]
    for tpl in templates:
        tpl.validate()
        lines.append(f"template {tpl.name}")
        for i in range(N_CONTROL_POINTS):
            row = [*tpl.means[i], *tpl.sigmas[i]]
            lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_templates(path) -> list[CenterlineTemplate]:
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"{path}: cannot read template file: {exc}") from exc
    with fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("ffrkit-templates v1"):
        raise DataError(f"{path}: not a template file (bad header)")
    templates = []
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if len(head) != 2 or head[0] != "template":
            raise DataError(f"{path}: expected 'template <name>' at line {i + 1}")
        rows = lines[i + 1 : i + 1 + N_CONTROL_POINTS]
        if len(rows) < N_CONTROL_POINTS:
            raise DataError(f"{path}: template {head[1]!r} truncated")
        try:
            vals = np.array([[float(v) for v in row.split()] for row in rows])
        except ValueError as exc:
            raise DataError(f"{path}: bad float in template {head[1]!r}: {exc}") from exc
        if vals.shape != (N_CONTROL_POINTS, 6):
            raise DataError(f"{path}: template {head[1]!r} needs 6 columns per row")
        tpl = CenterlineTemplate(head[1], vals[:, :3].copy(), vals[:, 3:].copy())
        tpl.validate()
        templates.append(tpl)
        i += 1 + N_CONTROL_POINTS
    declared = lines[0].split("count=")
    if len(declared) == 2 and int(declared[1].split()[0]) != len(templates):
        raise DataError(f"{path}: header count does not match template blocks")
    return templates


def sample_centerline(
    template: CenterlineTemplate, seed: int, m: int, l_v: float
) -> np.ndarray:
    """Realize one centerline: jitter control points, spline, resample by arc length.

    Control points are perturbed uniformly within +-sigma per axis, fitted with
    a cubic spline (not-a-knot ends -- natural ends distort the first and last
    spans enough to break arc-length accuracy against analytic curves), then
    resampled to m stations equally spaced in arc length and rescaled so the
    total arc length is exactly l_v. The inlet is anchored at the origin, which
    bounds every coordinate by l_v regardless of template.
    """
    template.validate()
    if m < 2:
        raise DataError(f"need m >= 2 stations, got {m}")
    if not (l_v > 0 and math.isfinite(l_v)):
        raise DataError(f"vessel length must be positive, got {l_v!r}")

    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-1.0, 1.0, size=(N_CONTROL_POINTS, 3))
    points = np.asarray(template.means, dtype=float) + template.sigmas * jitter

    u = np.arange(N_CONTROL_POINTS, dtype=float)
    spline = CubicSpline(u, points, axis=0)
    dense_u = np.linspace(0.0, N_CONTROL_POINTS - 1.0, (N_CONTROL_POINTS - 1) * SUBSAMPLES_PER_SPAN + 1)
    dense = spline(dense_u)

    if not np.all(np.isfinite(dense)):
        raise NumericError("centerline spline produced non-finite coordinates")
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    if np.any(seg <= 0.0):
        # A repeated dense sample means the curve stalls or folds onto itself;
        # cumulative arc length stops increasing and stations are ill-defined.
        raise NumericError("non-monotone arc length along centerline (degenerate curve)")
    total = float(seg.sum())

    scale = l_v / total
    dense = (dense - dense[0]) * scale
    cum = np.concatenate([[0.0], np.cumsum(seg)]) * scale
    cum[-1] = l_v  # guard against rounding drift in the last station

    targets = np.linspace(0.0, l_v, m)
    resampled = np.empty((3, m))
    for axis in range(3):
        resampled[axis] = np.interp(targets, cum, dense[:, axis])
    return resampled


# ---------------------------------------------------------------------------
# Radius profile and assembly


def radius_law(dv: DesignVariables, s: np.ndarray) -> np.ndarray:
    """Continuous radius profile evaluated at arbitrary arc positions s.

    The base tapers from r_p at the inlet to T_r * r_p at the outlet. The dip
    is centered at arc position x_p * l_v with width sigma = l_s / 6 and depth
    S_s times the local base radius, so the realized severity at the center
    equals the requested S_s exactly. Station grids sample this law; consumers
    that need sub-station resolution (quadrature, minimum-lumen search)
    evaluate it directly.
    """
    s = np.asarray(s, dtype=float)
    base = dv.r_p * (1.0 - (1.0 - dv.T_r) * s / dv.l_v)
    center = dv.x_p * dv.l_v
    sigma = dv.l_s / 6.0
    base_center = dv.r_p * (1.0 - (1.0 - dv.T_r) * dv.x_p)
    return base - dv.S_s * base_center * np.exp(-((s - center) ** 2) / (2.0 * sigma**2))


def build_radius_profile(dv: DesignVariables, m: int) -> np.ndarray:
    """Radius law sampled on the m-station arc grid."""
    if m < 16:
        raise DataError(f"need m >= 16 stations for a radius profile, got {m}")
    radii = radius_law(dv, np.linspace(0.0, dv.l_v, m))
    if np.min(radii) <= 0.0:
        raise DataError(
            f"radius profile closes the lumen (min {np.min(radii):.3e} m) for S_s={dv.S_s}"
        )
    return radii


@dataclasses.dataclass
class VesselGeometry:
    """4 x m sample grid (x, y, z, r) plus the design that produced it."""

    samples: np.ndarray
    meta: DesignVariables | None = None

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def centerline(self) -> np.ndarray:
        return self.samples[:3]

    @property
    def radii(self) -> np.ndarray:
        return self.samples[3]

    def arc_length(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.centerline, axis=1), axis=0)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def validate(self) -> None:
        if self.samples.ndim != 2 or self.samples.shape[0] != 4:
            raise DataError(f"vessel samples shape {self.samples.shape}, want (4, m)")
        if self.m < 2:
            raise DataError(f"vessel needs at least 2 stations, got {self.m}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("vessel samples contain non-finite values")
        if np.any(self.radii <= 0.0):
            raise DataError("vessel has non-positive radii")
        seg = np.linalg.norm(np.diff(self.centerline, axis=1), axis=0)
        if np.any(seg <= 0.0):
            raise DataError("vessel arc length is not strictly increasing")


def assemble_vessel(
    centerline: np.ndarray, radii: np.ndarray, meta: DesignVariables | None = None
) -> VesselGeometry:
    centerline = np.asarray(centerline, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if centerline.ndim != 2 or centerline.shape[0] != 3:
        raise DataError(f"centerline shape {centerline.shape}, want (3, m)")
    if radii.shape != (centerline.shape[1],):
        raise DataError(
            f"radii shape {radii.shape} does not match centerline length {centerline.shape[1]}"
        )
    g = VesselGeometry(np.vstack([centerline, radii[None, :]]), meta=meta)
    g.validate()
    return g


def generate_vessel(dv: DesignVariables, template: CenterlineTemplate, seed: int, m: int = 128) -> VesselGeometry:
    """Full geometry for one design: jittered centerline + stenosed radius profile."""
    dv.validate()
    centerline = sample_centerline(template, seed, m, dv.l_v)
    radii = build_radius_profile(dv, m)
    return assemble_vessel(centerline, radii, meta=dv)


# ---------------------------------------------------------------------------
# Normalization


@dataclasses.dataclass
class NormParams:
    """Parameters of the affine map that scaled a vessel into [0, 1]^4.

    lo/hi describe the fixed coordinate box; r_max is the per-vessel maximum
    radius, so the radius row always attains exactly 1.0 at its widest station.
    """

    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)
    r_max: float

    def validate(self) -> None:
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise DataError("normalization bounds must be 3-vectors")
        if np.any(hi < lo):
            raise DataError("normalization box has hi < lo")
        if not self.r_max > 0:
            raise DataError(f"r_max must be positive, got {self.r_max!r}")


@dataclasses.dataclass
class NormalizedGeometry:
    samples: np.ndarray  # (4, m) in [0, 1]
    params: NormParams


def bounding_box(
    l_v_max: float = RANGES["l_v"][1], margin: float = 1.05
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed coordinate box for origin-anchored centerlines.

    Any curve of arc length <= l_v_max starting at the origin stays inside
    [-l_v_max, l_v_max]^3; the margin keeps samples off the box faces.
    """
    half = margin * l_v_max
    return np.full(3, -half), np.full(3, half)


def normalize_geometry(
    g: VesselGeometry, box: tuple[np.ndarray, np.ndarray] | None = None
) -> NormalizedGeometry:
    """Scale coordinates into [0, 1] over a fixed box, radii by the vessel max.

    A degenerate axis (lo == hi) maps to the constant 0.5. Coordinates outside
    the box are an error: silent clipping would corrupt training targets.
    """
    g.validate()
    lo, hi = bounding_box() if box is None else box
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    params = NormParams(lo, hi, r_max=float(g.radii.max()))
    params.validate()
    out = np.empty_like(g.samples)
    for axis in range(3):
        span = hi[axis] - lo[axis]
        coords = g.samples[axis]
        if span == 0.0:
            if np.any(coords != lo[axis]):
                raise DataError(f"axis {axis} coordinates off the degenerate box plane")
            out[axis] = 0.5
            continue
        scaled = (coords - lo[axis]) / span
        if scaled.min() < 0.0 or scaled.max() > 1.0:
            raise DataError(
                f"axis {axis} coordinates outside normalization box "
                f"[{lo[axis]}, {hi[axis]}]"
            )
        out[axis] = scaled
    out[3] = g.radii / params.r_max
    return NormalizedGeometry(out, params)


def denormalize_geometry(ng: NormalizedGeometry, meta: DesignVariables | None = None) -> VesselGeometry:
    params = ng.params
    params.validate()
    out = np.empty_like(ng.samples)
    lo = np.asarray(params.lo, dtype=float)
    hi = np.asarray(params.hi, dtype=float)
    for axis in range(3):
        span = hi[axis] - lo[axis]
        out[axis] = lo[axis] if span == 0.0 else lo[axis] + ng.samples[axis] * span
    out[3] = ng.samples[3] * params.r_max
    return VesselGeometry(out, meta=meta)
