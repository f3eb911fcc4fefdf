"""Minimal deterministic 1-D network engine.

Exactly the layer set the two architectures need: conv1d (kernel 3, stride 1,
zero same-padding), relu, maxpool (2/2), convtranspose (2/2), dense, flatten,
reshape, concat_skip, and fuse_inject. Everything is 64-bit numpy.

Activations are stored channels-first with the batch axis last, (C, L, B):
with that layout a convolution over the whole batch collapses to a single
matmul of the flattened kernel against stacked shifted views, which is where
all the throughput comes from. Backward is hand-written reverse mode;
ReLU'(0) = 0 and max-pool ties route gradient to the first (left) index.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .errors import DataError
from .seeds import derive_seed

CONV_KERNEL = 3
POOL_KERNEL = 2
TCONV_KERNEL = 2

KINDS = (
    "conv1d",
    "relu",
    "maxpool",
    "convtranspose",
    "dense",
    "flatten",
    "reshape",
    "concat_skip",
    "fuse_inject",
)


@dataclasses.dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_ch: int = 0  # conv1d / convtranspose
    out_ch: int = 0
    in_w: int = 0  # dense
    out_w: int = 0
    channels: int = 0  # reshape target
    length: int = 0
    source: str = ""  # concat_skip: name of the earlier layer to concatenate
    width: int = 0  # fuse_inject: aux vector width


# A shape is ("map", channels, length) or ("vec", width).


def shape_walk(
    layers: list[LayerSpec], in_shape: tuple
) -> list[tuple]:
    """Propagate the input shape through the chain, validating every layer.

    Returns the output shape of each layer; raises DataError naming the layer
    index on the first inconsistency.
    """
    names = [spec.name for spec in layers]
    if len(set(names)) != len(names):
        raise DataError("duplicate layer names in network")
    shapes = []
    current = in_shape
    for i, spec in enumerate(layers):
        where = f"layer {i} ({spec.kind} {spec.name!r})"
        if spec.kind not in KINDS:
            raise DataError(f"{where}: unknown kind")
        if spec.kind == "conv1d":
            if current[0] != "map" or current[1] != spec.in_ch:
                raise DataError(f"{where}: expects {spec.in_ch} channels, got {current}")
            current = ("map", spec.out_ch, current[2])
        elif spec.kind == "relu":
            pass
        elif spec.kind == "maxpool":
            if current[0] != "map" or current[2] % POOL_KERNEL:
                raise DataError(f"{where}: needs even map length, got {current}")
            current = ("map", current[1], current[2] // POOL_KERNEL)
        elif spec.kind == "convtranspose":
            if current[0] != "map" or current[1] != spec.in_ch:
                raise DataError(f"{where}: expects {spec.in_ch} channels, got {current}")
            current = ("map", spec.out_ch, current[2] * TCONV_KERNEL)
        elif spec.kind == "dense":
            if current[0] != "vec" or current[1] != spec.in_w:
                raise DataError(f"{where}: expects width {spec.in_w}, got {current}")
            current = ("vec", spec.out_w)
        elif spec.kind == "flatten":
            if current[0] != "map":
                raise DataError(f"{where}: flatten needs a map input, got {current}")
            current = ("vec", current[1] * current[2])
        elif spec.kind == "reshape":
            if current[0] != "vec" or current[1] != spec.channels * spec.length:
                raise DataError(
                    f"{where}: cannot reshape {current} to {spec.channels}x{spec.length}"
                )
            current = ("map", spec.channels, spec.length)
        elif spec.kind == "concat_skip":
            if spec.source not in names[:i]:
                raise DataError(f"{where}: skip source {spec.source!r} not found earlier")
            src_shape = shapes[names.index(spec.source)]
            if current[0] != "map" or src_shape[0] != "map" or src_shape[2] != current[2]:
                raise DataError(
                    f"{where}: skip source shape {src_shape} does not align with {current}"
                )
            current = ("map", current[1] + src_shape[1], current[2])
        elif spec.kind == "fuse_inject":
            if current[0] != "vec":
                raise DataError(f"{where}: fuse needs a vector input, got {current}")
            if spec.width < 1:
                raise DataError(f"{where}: aux width must be positive")
            current = ("vec", current[1] + spec.width)
        shapes.append(current)
    return shapes


def param_shapes(spec: LayerSpec) -> dict[str, tuple]:
    if spec.kind == "conv1d":
        return {"W": (spec.out_ch, spec.in_ch, CONV_KERNEL), "b": (spec.out_ch,)}
    if spec.kind == "convtranspose":
        return {"W": (spec.in_ch, spec.out_ch, TCONV_KERNEL), "b": (spec.out_ch,)}
    if spec.kind == "dense":
        return {"W": (spec.out_w, spec.in_w), "b": (spec.out_w,)}
    return {}


class Network:
    """An ordered layer chain with a shared parameter store.

    Subnets produced by ``subnet`` share the same parameter dict, which is how
    the autoencoder's encoder/decoder halves are run separately after joint
    training.
    """

    def __init__(self, layers: list[LayerSpec], in_shape: tuple, params=None):
        self.layers = list(layers)
        self.in_shape = in_shape
        self.shapes = shape_walk(self.layers, in_shape)
        self.params: dict[str, dict[str, np.ndarray]] = {} if params is None else params
        self._skip_sources = {spec.source for spec in self.layers if spec.kind == "concat_skip"}

    @property
    def out_shape(self) -> tuple:
        return self.shapes[-1] if self.shapes else self.in_shape

    def init_params(self, seed: int) -> None:
        """He-uniform weights (bound sqrt(6 / fan_in) over input taps), zero
        biases. Streams are derived per layer name so architecture edits
        elsewhere do not shift a layer's draw."""
        self.params.clear()
        for spec in self.layers:
            shapes = param_shapes(spec)
            if not shapes:
                continue
            rng = np.random.default_rng(derive_seed(seed, f"init:{spec.name}"))
            entry = {}
            if spec.kind == "conv1d":
                fan_in = spec.in_ch * CONV_KERNEL
            elif spec.kind == "convtranspose":
                fan_in = spec.in_ch * TCONV_KERNEL
            else:
                fan_in = spec.in_w
            bound = np.sqrt(6.0 / fan_in)
            entry["W"] = rng.uniform(-bound, bound, size=shapes["W"])
            entry["b"] = np.zeros(shapes["b"])
            self.params[spec.name] = entry

    def zero_grads(self) -> dict:
        return {
            name: {k: np.zeros_like(v) for k, v in entry.items()}
            for name, entry in self.params.items()
        }

    def subnet(self, start: str | None = None, stop: str | None = None) -> "Network":
        """Layers from ``start`` (inclusive) to ``stop`` (exclusive), sharing params."""
        names = [spec.name for spec in self.layers]
        i = 0 if start is None else names.index(start)
        j = len(names) if stop is None else names.index(stop)
        if not 0 <= i < j <= len(names):
            raise DataError(f"bad subnet range {start!r}:{stop!r}")
        in_shape = self.in_shape if i == 0 else self.shapes[i - 1]
        return Network(self.layers[i:j], in_shape, params=self.params)


def _as_batch(x: np.ndarray, in_shape: tuple) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if in_shape[0] == "map":
        if x.ndim == 2:
            return x[:, :, None], True
        if x.ndim == 3:
            return x, False
    else:
        if x.ndim == 1:
            return x[:, None], True
        if x.ndim == 2:
            return x, False
    raise DataError(f"input rank {x.ndim} incompatible with network input {in_shape}")


def _check_shape(x: np.ndarray, shape: tuple, where: str) -> None:
    want = shape[1:] if shape[0] == "vec" else shape[1:]
    if x.shape[:-1] != tuple(want):
        raise DataError(f"{where}: activation shape {x.shape[:-1]} != expected {want}")


def forward(net: Network, x: np.ndarray, aux: np.ndarray | None = None):
    """Run the chain; returns (output, cache) with cache usable by backward."""
    x, squeezed = _as_batch(x, net.in_shape)
    _check_shape(x, net.in_shape, "input")
    batch = x.shape[-1]

    has_fuse = any(spec.kind == "fuse_inject" for spec in net.layers)
    if has_fuse and aux is None:
        raise DataError("network contains fuse_inject but no aux vector was given")
    if aux is not None:
        aux = np.asarray(aux, dtype=float)
        if aux.ndim == 1:
            aux = aux[:, None]
        if aux.shape[-1] != batch:
            raise DataError(f"aux batch {aux.shape[-1]} != input batch {batch}")

    saved: list = []
    skip_acts: dict[str, np.ndarray] = {}
    for i, spec in enumerate(net.layers):
        where = f"layer {i} ({spec.kind} {spec.name!r})"
        if spec.kind == "conv1d":
            W, b = net.params[spec.name]["W"], net.params[spec.name]["b"]
            y = _conv_forward(x, W, b)
            saved.append(x)
        elif spec.kind == "relu":
            y = np.maximum(x, 0.0)
            saved.append(y)
        elif spec.kind == "maxpool":
            x0, x1 = x[:, 0::2, :], x[:, 1::2, :]
            mask = x0 >= x1
            y = np.where(mask, x0, x1)
            saved.append(mask)
        elif spec.kind == "convtranspose":
            W, b = net.params[spec.name]["W"], net.params[spec.name]["b"]
            y = _tconv_forward(x, W, b)
            saved.append(x)
        elif spec.kind == "dense":
            W, b = net.params[spec.name]["W"], net.params[spec.name]["b"]
            y = W @ x + b[:, None]
            saved.append(x)
        elif spec.kind == "flatten":
            saved.append(x.shape)
            y = x.reshape(x.shape[0] * x.shape[1], batch)
        elif spec.kind == "reshape":
            saved.append(x.shape)
            y = x.reshape(spec.channels, spec.length, batch)
        elif spec.kind == "concat_skip":
            src = skip_acts[spec.source]
            saved.append(x.shape[0])
            y = np.concatenate([x, src], axis=0)
        elif spec.kind == "fuse_inject":
            if aux.shape[0] != spec.width:
                raise DataError(f"{where}: aux width {aux.shape[0]} != declared {spec.width}")
            saved.append(x.shape[0])
            y = np.concatenate([x, aux], axis=0)
        _check_shape(y, net.shapes[i], where)
        if spec.name in net._skip_sources:
            skip_acts[spec.name] = y
        x = y

    cache = {"saved": saved, "batch": batch, "squeezed": squeezed, "n_layers": len(net.layers)}
    out = x[..., 0] if squeezed else x
    return out, cache


def backward(net: Network, cache, grad_output: np.ndarray):
    """Reverse-mode pass. Returns (param_grads, input_grad, aux_grad).

    aux_grad is None unless the net contains fuse_inject.
    """
    if cache.get("n_layers") != len(net.layers):
        raise DataError("cache does not match this network (stale or from a subnet)")
    g = np.asarray(grad_output, dtype=float)
    if cache["squeezed"]:
        g = g[..., None]
    out_shape = net.out_shape
    _check_shape(g, out_shape, "grad_output")
    if g.shape[-1] != cache["batch"]:
        raise DataError("grad_output batch size does not match cached forward")

    grads = net.zero_grads()
    aux_grad = None
    pending_skip: dict[str, np.ndarray] = {}
    saved = cache["saved"]

    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        if spec.kind == "conv1d":
            x = saved[i]
            dW, db, dx = _conv_backward(x, net.params[spec.name]["W"], g)
            grads[spec.name]["W"] += dW
            grads[spec.name]["b"] += db
            g = dx
        elif spec.kind == "relu":
            g = g * (saved[i] > 0.0)
        elif spec.kind == "maxpool":
            mask = saved[i]
            dx = np.zeros((mask.shape[0], mask.shape[1] * 2, mask.shape[2]))
            dx[:, 0::2, :] = g * mask
            dx[:, 1::2, :] = g * ~mask
            g = dx
        elif spec.kind == "convtranspose":
            x = saved[i]
            dW, db, dx = _tconv_backward(x, net.params[spec.name]["W"], g)
            grads[spec.name]["W"] += dW
            grads[spec.name]["b"] += db
            g = dx
        elif spec.kind == "dense":
            x = saved[i]
            grads[spec.name]["W"] += g @ x.T
            grads[spec.name]["b"] += g.sum(axis=1)
            g = net.params[spec.name]["W"].T @ g
        elif spec.kind in ("flatten", "reshape"):
            g = g.reshape(saved[i])
        elif spec.kind == "concat_skip":
            split = saved[i]
            pending = pending_skip.get(spec.source)
            skip_part = g[split:]
            pending_skip[spec.source] = (
                skip_part.copy() if pending is None else pending + skip_part
            )
            g = g[:split]
        elif spec.kind == "fuse_inject":
            split = saved[i]
            part = g[split:]
            aux_grad = part.copy() if aux_grad is None else aux_grad + part
            g = g[:split]
        # Gradient flowing out of layer i is the gradient at layer i-1's
        # output; add any skip contributions routed back to that point.
        if i > 0 and net.layers[i - 1].name in pending_skip:
            g = g + pending_skip.pop(net.layers[i - 1].name)

    if pending_skip:
        raise DataError(f"unconsumed skip gradients for {sorted(pending_skip)}")
    if cache["squeezed"]:
        g = g[..., 0]
        if aux_grad is not None:
            aux_grad = aux_grad[..., 0]
    return grads, g, aux_grad


def predict_forward(
    net: Network, x: np.ndarray, aux: np.ndarray | None = None, dtype=np.float64
) -> np.ndarray:
    """Inference-only forward: no cache, in-place activations, optional f32.

    In 64-bit this is bit-identical to ``forward``. The 32-bit path exists
    because single-core 64-bit GEMM throughput cannot reach the pipeline's
    inference rate target on commodity hardware; training and gradient checks
    always stay 64-bit.
    """
    x, squeezed = _as_batch(x, net.in_shape)
    _check_shape(x, net.in_shape, "input")
    batch = x.shape[-1]
    has_fuse = any(spec.kind == "fuse_inject" for spec in net.layers)
    if has_fuse and aux is None:
        raise DataError("network contains fuse_inject but no aux vector was given")
    if aux is not None:
        aux = np.asarray(aux, dtype=dtype)
        if aux.ndim == 1:
            aux = aux[:, None]
        if aux.shape[-1] != batch:
            raise DataError(f"aux batch {aux.shape[-1]} != input batch {batch}")
    x = np.ascontiguousarray(x, dtype=dtype)

    skip: dict[str, np.ndarray] = {}
    for i, spec in enumerate(net.layers):
        if spec.kind == "conv1d":
            entry = net.params[spec.name]
            W = entry["W"].astype(dtype, copy=False)
            b = entry["b"].astype(dtype, copy=False)
            c, length, _ = x.shape
            out_ch = W.shape[0]
            x_flat = x.reshape(c, length * batch)
            w_stack = np.ascontiguousarray(W.transpose(2, 0, 1)).reshape(
                CONV_KERNEL * out_ch, c
            )
            parts = (w_stack @ x_flat).reshape(CONV_KERNEL, out_ch, length * batch)
            y = parts[1]
            y[:, batch:] += parts[0][:, :-batch]
            y[:, :-batch] += parts[2][:, batch:]
            y += b[:, None]
            x = np.ascontiguousarray(y).reshape(out_ch, length, batch)
        elif spec.kind == "relu":
            np.maximum(x, 0, out=x)
        elif spec.kind == "maxpool":
            x0, x1 = x[:, 0::2, :], x[:, 1::2, :]
            x = np.where(x0 >= x1, x0, x1)
        elif spec.kind == "convtranspose":
            entry = net.params[spec.name]
            W = entry["W"].astype(dtype, copy=False)
            b = entry["b"].astype(dtype, copy=False)
            c, length, _ = x.shape
            out_ch = W.shape[1]
            x_flat = x.reshape(c, length * batch)
            y = np.empty((out_ch, length * TCONV_KERNEL, batch), dtype=dtype)
            y_view = y.reshape(out_ch, length, TCONV_KERNEL, batch)
            for k in range(TCONV_KERNEL):
                Wk = np.ascontiguousarray(W[:, :, k].T)
                y_view[:, :, k, :] = (Wk @ x_flat).reshape(out_ch, length, batch)
            y += b[:, None, None]
            x = y
        elif spec.kind == "dense":
            entry = net.params[spec.name]
            y = entry["W"].astype(dtype, copy=False) @ x
            y += entry["b"].astype(dtype, copy=False)[:, None]
            x = y
        elif spec.kind == "flatten":
            x = x.reshape(x.shape[0] * x.shape[1], batch)
        elif spec.kind == "reshape":
            x = x.reshape(spec.channels, spec.length, batch)
        elif spec.kind == "concat_skip":
            x = np.concatenate([x, skip[spec.source]], axis=0)
        elif spec.kind == "fuse_inject":
            if aux.shape[0] != spec.width:
                raise DataError(
                    f"layer {i} ({spec.name!r}): aux width {aux.shape[0]} != {spec.width}"
                )
            x = np.concatenate([x, aux], axis=0)
        if spec.name in net._skip_sources:
            skip[spec.name] = x
    return x[..., 0] if squeezed else x


# ---------------------------------------------------------------------------
# Layer kernels


def _conv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded conv via one stacked matmul plus shifted accumulation.

    In the flattened (C, L*B) layout, shifting a feature map by one station is
    a shift of B columns, so the three kernel taps evaluated by a single
    (3*out, C) @ (C, L*B) product are combined with two slice-adds and the
    zero padding never materializes.
    """
    c, length, batch = x.shape
    out_ch = W.shape[0]
    x_flat = x.reshape(c, length * batch)
    w_stack = np.ascontiguousarray(W.transpose(2, 0, 1)).reshape(
        CONV_KERNEL * out_ch, c
    )
    parts = (w_stack @ x_flat).reshape(CONV_KERNEL, out_ch, length * batch)
    y = parts[1].copy()
    y[:, batch:] += parts[0][:, :-batch]  # left tap: x[l-1] feeds y[l]
    y[:, :-batch] += parts[2][:, batch:]  # right tap: x[l+1] feeds y[l]
    np.add(y, b[:, None], out=y)
    return y.reshape(out_ch, length, batch)


def _conv_backward(x: np.ndarray, W: np.ndarray, g: np.ndarray):
    c, length, batch = x.shape
    out_ch = W.shape[0]
    x_flat = x.reshape(c, length * batch)
    g_flat = g.reshape(out_ch, length * batch)
    dW = np.empty_like(W)
    dW[:, :, 0] = g_flat[:, batch:] @ x_flat[:, :-batch].T
    dW[:, :, 1] = g_flat @ x_flat.T
    dW[:, :, 2] = g_flat[:, :-batch] @ x_flat[:, batch:].T
    db = g_flat.sum(axis=1)
    w_stack = np.ascontiguousarray(W.transpose(2, 1, 0))  # (K, C, out)
    parts = np.matmul(w_stack, g_flat[None, :, :])  # (K, C, L*B)
    dx = parts[1].copy()
    dx[:, :-batch] += parts[0][:, batch:]  # y[l+1] consumed x[l] via left tap
    dx[:, batch:] += parts[2][:, :-batch]  # y[l-1] consumed x[l] via right tap
    return dW, db, dx.reshape(c, length, batch)


def _tconv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, length, batch = x.shape
    out_ch = W.shape[1]
    x_flat = x.reshape(c, length * batch)
    y = np.empty((out_ch, length * TCONV_KERNEL, batch))
    y_view = y.reshape(out_ch, length, TCONV_KERNEL, batch)
    for k in range(TCONV_KERNEL):
        # The per-tap kernel slice is strided; copying it keeps the matmul on
        # the BLAS fast path (the strided fallback is ~50x slower).
        Wk = np.ascontiguousarray(W[:, :, k].T)
        y_view[:, :, k, :] = (Wk @ x_flat).reshape(out_ch, length, batch)
    return y + b[:, None, None]


def _tconv_backward(x: np.ndarray, W: np.ndarray, g: np.ndarray):
    c, length, batch = x.shape
    out_ch = W.shape[1]
    x_flat = x.reshape(c, length * batch)
    g_view = g.reshape(out_ch, length, TCONV_KERNEL, batch)
    dW = np.empty_like(W)
    dx_flat = np.zeros((c, length * batch))
    for k in range(TCONV_KERNEL):
        gk = np.ascontiguousarray(g_view[:, :, k, :]).reshape(out_ch, length * batch)
        dW[:, :, k] = x_flat @ gk.T
        dx_flat += np.ascontiguousarray(W[:, :, k]) @ gk
    db = g.sum(axis=(1, 2))
    return dW, db, dx_flat.reshape(c, length, batch)


# ---------------------------------------------------------------------------
# Optimizer


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """Standard Adam with bias correction, applied in place.

    ``state`` is a dict carrying "t" plus first/second moments per parameter;
    pass {} on the first call.
    """
    b1, b2 = betas
    state.setdefault("t", 0)
    state["t"] += 1
    t = state["t"]
    moments = state.setdefault("m", {})
    for name, entry in params.items():
        for key, theta in entry.items():
            gkey = grads[name][key]
            if gkey.shape != theta.shape:
                raise DataError(f"gradient shape mismatch for {name}.{key}")
            slot = moments.setdefault(f"{name}.{key}", [np.zeros_like(theta), np.zeros_like(theta)])
            m, v = slot
            m *= b1
            m += (1 - b1) * gkey
            v *= b2
            v += (1 - b2) * gkey * gkey
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# Verification


def gradient_check(
    net: Network,
    x: np.ndarray,
    loss_fn,
    aux: np.ndarray | None = None,
    n_coords: int = 60,
    seed: int = 0,
) -> float:
    """Worst relative error between backward and central differences.

    ``loss_fn(y) -> (loss, dL/dy)``. Coordinates are drawn from all
    parameters, plus the aux vector when present and the input tensor.
    Near-zero analytic and numeric gradients (both < 1e-10) count as exact
    to avoid dividing rounding noise by itself.
    """
    y, cache = forward(net, x, aux)
    _, dy = loss_fn(y)
    grads, dx, daux = backward(net, cache, dy)

    sites: list[tuple] = []
    for name in sorted(net.params):
        for key in sorted(net.params[name]):
            arr = net.params[name][key]
            sites.extend(("param", name, key, i) for i in range(arr.size))
    x = np.asarray(x, dtype=float)
    sites.extend(("input", None, None, i) for i in range(x.size))
    if aux is not None:
        aux = np.asarray(aux, dtype=float)
        sites.extend(("aux", None, None, i) for i in range(aux.size))

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(sites), size=min(n_coords, len(sites)), replace=False)

    def eval_loss():
        yy, _ = forward(net, x, aux)
        return loss_fn(yy)[0]

    worst = 0.0
    for idx in chosen:
        kind, name, key, flat = sites[idx]
        if kind == "param":
            arr = net.params[name][key]
            analytic = grads[name][key].ravel()[flat]
        elif kind == "input":
            arr = x
            analytic = np.asarray(dx).ravel()[flat]
        else:
            arr = aux
            analytic = np.asarray(daux).ravel()[flat]
        view = arr.ravel()
        theta = view[flat]
        h = 1e-6 * max(1.0, abs(theta))
        view[flat] = theta + h
        up = eval_loss()
        view[flat] = theta - h
        down = eval_loss()
        view[flat] = theta
        numeric = (up - down) / (2 * h)
        denom = max(abs(analytic), abs(numeric))
        if denom < 1e-10:
            continue
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Weights container: a name->array map as (json manifest, raw little-endian
# 64-bit payload). No timestamps, so identical contents are identical bytes.

_MAGIC = b"ffrkit-weights v1\n"


def save_array_map(path, mapping: dict[str, np.ndarray]) -> None:
    names = sorted(mapping)
    manifest = [[name, list(np.asarray(mapping[name]).shape)] for name in names]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(manifest, separators=(",", ":")).encode() + b"\n")
        for name in names:
            fh.write(np.ascontiguousarray(mapping[name], dtype="<f8").tobytes())


def load_array_map(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise DataError(f"{path}: not a weights file")
        try:
            manifest = json.loads(fh.readline().decode())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: bad manifest: {exc}") from exc
        out = {}
        for name, shape in manifest:
            shape = tuple(shape)
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise DataError(f"{path}: truncated payload at {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after declared arrays")
    return out


def save_weights(path, net: Network) -> None:
    mapping = {
        f"{name}.{key}": arr
        for name, entry in net.params.items()
        for key, arr in entry.items()
    }
    save_array_map(path, mapping)


def load_weights(path, net: Network) -> None:
    """Fill ``net.params`` from a container, validating names and shapes."""
    expected = {
        f"{spec.name}.{key}": shape
        for spec in net.layers
        for key, shape in param_shapes(spec).items()
    }
    mapping = load_array_map(path)
    unexpected = set(mapping) - set(expected)
    if unexpected:
        raise DataError(f"{path}: unexpected parameters {sorted(unexpected)}")
    missing = set(expected) - set(mapping)
    if missing:
        raise DataError(f"{path}: missing parameters {sorted(missing)}")
    loaded: dict[str, dict[str, np.ndarray]] = {}
    for full, arr in mapping.items():
        if arr.shape != expected[full]:
            raise DataError(
                f"{path}: {full} shape {arr.shape}, network wants {expected[full]}"
            )
        name, key = full.rsplit(".", 1)
        loaded.setdefault(name, {})[key] = arr
    net.params.clear()
    net.params.update(loaded)
