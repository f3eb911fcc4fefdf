"""Gradient-based attention maps over encoder feature maps.

The attention signal asks: which stations of the deepest pre-latent feature
maps influence the latent summary most?  With latent vector ``z`` and feature
maps ``M`` (``n`` channels x length ``l``), one backward pass from the scalar
``mean(z)`` yields channel weights ``alpha_k = (1/l) * sum_i d mean(z) / d
M_k[i]``; the map is ``A = relu(sum_k alpha_k * M_k)``, a length-``l``
nonnegative profile.  It is projected to the ``m`` vessel stations by linear
interpolation, and a min-max rescaled copy is kept for rendering.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import engine
from .datafiles import fmt_floats
from .errors import DataError
from .geom import NormalizedGeometry, VesselGeometry
from .models import ATTENTION_LAYER, ENCODER_END

__all__ = [
    "AttentionMap",
    "attention_map",
    "project_attention",
    "write_attention",
    "read_attention",
]


@dataclasses.dataclass
class AttentionMap:
    """Nonnegative attention profile at feature-map and station resolution."""

    values: np.ndarray  # (l,) raw attention at the feature-map resolution
    projected: np.ndarray  # (m,) raw attention at vessel stations
    scaled: np.ndarray  # (m,) projected values min-max rescaled to [0, 1]
    source_layer: str

    def validate(self) -> None:
        for name in ("values", "projected", "scaled"):
            arr = getattr(self, name)
            if np.ndim(arr) != 1:
                raise DataError(f"attention {name} must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"attention {name} contains non-finite values")
            if np.min(arr) < 0.0:
                raise DataError(f"attention {name} contains negative values")
        if self.projected.shape != self.scaled.shape:
            raise DataError("projected and scaled attention lengths differ")
        if self.scaled.size and self.scaled.max() > 1.0 + 1e-12:
            raise DataError("scaled attention exceeds 1")


def _minmax(values: np.ndarray) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    span = hi - lo
    if span <= 0.0:
        return np.zeros_like(values)
    return (values - lo) / span


def attention_map(
    encoder: engine.Network,
    ng: NormalizedGeometry,
    layer: str = ATTENTION_LAYER,
    stations: int | None = None,
) -> AttentionMap:
    """Attention of the latent mean over the feature maps of ``layer``.

    ``encoder`` may be either the encoder subnet or a full autoencoder; a
    full autoencoder is truncated at the first decoder layer.  ``stations``
    overrides the projection length (default: the geometry's station count).
    """
    x = np.asarray(ng.samples, dtype=float)
    if x.ndim != 2:
        raise DataError("attention input must be a single (channels, stations) geometry")
    if x.min() < 0.0 or x.max() > 1.0:
        raise DataError("network input must be normalized to [0, 1]")
    names = [spec.name for spec in encoder.layers]
    if ENCODER_END in names:
        encoder = encoder.subnet(None, ENCODER_END)
        names = [spec.name for spec in encoder.layers]
    if layer not in names:
        raise DataError(f"unknown attention layer {layer!r}")
    i = names.index(layer)
    if i + 1 >= len(names):
        raise DataError(f"attention layer {layer!r} has no downstream layers to the latent")
    head = encoder.subnet(None, names[i + 1])
    tail = encoder.subnet(names[i + 1], None)

    maps, _ = engine.forward(head, x)  # (n_channels, l)
    if maps.ndim != 2:
        raise DataError(f"layer {layer!r} does not produce channel x length feature maps")
    latent, cache = engine.forward(tail, maps)
    tail.zero_grads()
    seed = np.full(latent.shape, 1.0 / latent.size)  # d mean(z) / d z
    _, grad_maps, _ = engine.backward(tail, cache, seed)
    alpha = grad_maps.mean(axis=1)  # (n_channels,) per-channel weights
    raw = np.maximum(alpha @ maps, 0.0)  # (l,)

    m = int(x.shape[1] if stations is None else stations)
    if m < 2:
        raise DataError("projection needs at least two stations")
    positions = np.linspace(0.0, 1.0, m)
    nodes = np.linspace(0.0, 1.0, raw.size)
    projected = np.interp(positions, nodes, raw)
    out = AttentionMap(
        values=raw,
        projected=projected,
        scaled=_minmax(projected),
        source_layer=layer,
    )
    out.validate()
    return out


def project_attention(a: AttentionMap, g: VesselGeometry) -> np.ndarray:
    """Annotate each station: index, arc length, x, y, z, r, raw, scaled."""
    a.validate()
    g.validate()
    if a.projected.size != g.m:
        raise DataError(
            f"attention projected to {a.projected.size} stations, geometry has {g.m}"
        )
    rows = np.empty((g.m, 8))
    rows[:, 0] = np.arange(g.m)
    rows[:, 1] = g.arc_length()
    rows[:, 2:5] = g.centerline.T
    rows[:, 5] = g.radii
    rows[:, 6] = a.projected
    rows[:, 7] = a.scaled
    return rows


def write_attention(path, rows: np.ndarray, layer: str) -> None:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 8:
        raise DataError("attention export expects (stations, 8) rows")
    header = f"ffrkit-attention v1 m={rows.shape[0]} layer={layer}\n"
    with open(path, "w") as fh:
        fh.write(header)
        for row in rows:
            fh.write(fmt_floats(row) + "\n")


def read_attention(path) -> tuple[np.ndarray, str]:
    with open(path) as fh:
        header = fh.readline().strip()
        fields = header.split()
        if len(fields) != 4 or fields[0] != "ffrkit-attention" or fields[1] != "v1":
            raise DataError(f"{path}: bad attention export header {header!r}")
        try:
            m = int(fields[2].removeprefix("m="))
        except ValueError as exc:
            raise DataError(f"{path}: unparseable header {header!r}") from exc
        layer = fields[3].removeprefix("layer=")
        rows = []
        for line_no, line in enumerate(fh, start=2):
            parts = line.split()
            if len(parts) != 8:
                raise DataError(f"{path}:{line_no}: expected 8 columns, got {len(parts)}")
            rows.append([float(p) for p in parts])
    if len(rows) != m:
        raise DataError(f"{path}: header says m={m}, found {len(rows)} rows")
    return np.asarray(rows), layer
