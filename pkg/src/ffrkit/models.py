"""The two surrogate networks: geometric autoencoder and feature-fusion U-Net.

The autoencoder compresses a normalized 4x128 vessel into a 6x8 latent block
(48 geometric features) under a radius-weighted L1 loss that concentrates
capacity on narrow-lumen stations. The feature-fusion U-Net maps a normalized
low-fidelity (velocity, pressure) profile to its high-fidelity counterpart,
injecting the 48 geometric features and 2 boundary-condition values into the
bottleneck between encoder and decoder.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os

import numpy as np

from . import engine
from .datafiles import normalized_bc
from .engine import LayerSpec, Network
from .errors import DataError, TrainingDiverged
from .geom import NormalizedGeometry
from .physics import BoundaryConditions, HemoProfile
from .seeds import derive_seed

U_REF = 10.0  # m/s, velocity normalization for network channels
S_FLOOR = math.log(1e-12)  # aleatoric variance floor

LATENT_CHANNELS = 6
LATENT_LENGTH = 8
GEOM_FEATURES = LATENT_CHANNELS * LATENT_LENGTH  # 48
FUSION_WIDTH = 2048 + GEOM_FEATURES + 2  # 2098

# Output of the last encoder pooling stage: 32 channels x length 8. This is
# the deepest stack of geometric feature maps and the default attention target.
ATTENTION_LAYER = "enc_pool4"
ENCODER_END = "dec_up1"  # first decoder layer; encoder = everything before it


@dataclasses.dataclass
class GeometricFeatures:
    values: np.ndarray  # (48,)

    def validate(self) -> None:
        if self.values.shape != (GEOM_FEATURES,):
            raise DataError(f"geometric features shape {self.values.shape}, want (48,)")
        if not np.all(np.isfinite(self.values)):
            raise DataError("geometric features contain non-finite values")


@dataclasses.dataclass
class TrainingConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    loss: str = "weighted_l1"
    patience: int = 10
    s_init: float = -6.0
    loss_ceiling: float | None = None
    checkpoint_dir: str | None = None

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise DataError(f"learning rate must be positive, got {self.lr}")
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise DataError(f"split must be three nonnegative fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1, got {self.split}")
        if self.loss not in ("weighted_l1", "mse", "gaussian_nll"):
            raise DataError(f"unknown loss {self.loss!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise DataError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.patience < 1:
            raise DataError("patience must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for one epoch: constant, or cosine-annealed to lr/100.

        A function of the epoch index only, so an interrupted run resumed from
        a checkpoint replays the identical schedule.
        """
        if self.lr_schedule == "constant" or self.epochs < 2:
            return self.lr
        floor = 0.01 * self.lr
        span = math.cos(math.pi * epoch / (self.epochs - 1))
        return floor + 0.5 * (self.lr - floor) * (1.0 + span)


FFU_SPLIT = (0.95, 0.05, 0.0)


# ---------------------------------------------------------------------------
# Architectures


def _conv_block(prefix: str, in_ch: int, out_ch: int) -> list[LayerSpec]:
    return [
        LayerSpec("conv1d", prefix, in_ch=in_ch, out_ch=out_ch),
        LayerSpec("relu", prefix + "_relu"),
    ]


def build_autoencoder() -> Network:
    """4x128 -> 6x8 latent -> 4x128, four pooling/upsampling stages."""
    layers: list[LayerSpec] = []
    enc_plan = [(4, 32), (32, 128), (128, 256), (256, 32)]
    in_ch = 4
    for stage, (cin, cout) in enumerate(enc_plan, start=1):
        layers += _conv_block(f"enc{stage}a", cin, cout)
        layers += _conv_block(f"enc{stage}b", cout, cout)
        layers.append(LayerSpec("maxpool", f"enc_pool{stage}"))
        in_ch = cout
    layers += _conv_block("lat_a", 32, LATENT_CHANNELS)
    layers += _conv_block("lat_b", LATENT_CHANNELS, LATENT_CHANNELS)

    dec_plan = [(LATENT_CHANNELS, 32), (32, 256), (256, 128), (128, 32)]
    for stage, (cin, cout) in enumerate(dec_plan, start=1):
        layers.append(LayerSpec("convtranspose", f"dec_up{stage}", in_ch=cin, out_ch=cin))
        layers += _conv_block(f"dec{stage}a", cin, cout)
        layers += _conv_block(f"dec{stage}b", cout, cout)
    layers += _conv_block("dec_out", 32, 4)
    return Network(layers, ("map", 4, 128))


def _require_autoencoder(net: Network) -> None:
    if all(spec.name != ENCODER_END for spec in net.layers):
        raise DataError(
            f"network has no {ENCODER_END!r} stage; not a geometry autoencoder"
        )


def encoder_subnet(net: Network) -> Network:
    _require_autoencoder(net)
    return net.subnet(None, ENCODER_END)


def decoder_subnet(net: Network) -> Network:
    _require_autoencoder(net)
    return net.subnet(ENCODER_END, None)


def build_ffu() -> Network:
    """2x128 LF profile -> fused bottleneck -> 2x128 HF prediction."""
    layers: list[LayerSpec] = []
    enc_plan = [(2, 32), (32, 64), (64, 128), (128, 256)]
    for stage, (cin, cout) in enumerate(enc_plan, start=1):
        layers += _conv_block(f"e{stage}a", cin, cout)
        layers += _conv_block(f"e{stage}b", cout, cout)
        layers.append(LayerSpec("maxpool", f"pool{stage}"))
    layers.append(LayerSpec("flatten", "flat"))
    layers.append(LayerSpec("fuse_inject", "fuse", width=GEOM_FEATURES + 2))
    layers += [
        LayerSpec("dense", "fc1", in_w=FUSION_WIDTH, out_w=2048),
        LayerSpec("relu", "fc1_relu"),
        LayerSpec("dense", "fc2", in_w=2048, out_w=2048),
        LayerSpec("relu", "fc2_relu"),
        LayerSpec("reshape", "unflat", channels=256, length=8),
    ]
    # Deepest stage has no skip partner; the three shallower stages concat
    # the matching encoder activations.
    layers.append(LayerSpec("convtranspose", "up0", in_ch=256, out_ch=256))
    layers += _conv_block("d0a", 256, 256)
    layers += _conv_block("d0b", 256, 256)
    skip_plan = [
        ("up1", 256, "e3b_relu", 128 + 256, 128),
        ("up2", 128, "e2b_relu", 64 + 128, 64),
        ("up3", 64, "e1b_relu", 32 + 64, 32),
    ]
    for up, cin, source, cat, cout in skip_plan:
        layers.append(LayerSpec("convtranspose", up, in_ch=cin, out_ch=cin))
        layers.append(LayerSpec("concat_skip", up + "_cat", source=source))
        layers += _conv_block(up + "a", cat, cout)
        layers += _conv_block(up + "b", cout, cout)
    layers += _conv_block("head", 32, 2)
    return Network(layers, ("map", 2, 128))


# ---------------------------------------------------------------------------
# Losses (each returns (scalar, dL/dyhat))


def omega_weights(r: np.ndarray) -> np.ndarray:
    if np.any(r <= 0.0) or np.any(r > 1.0):
        raise DataError("radius row must be normalized to (0, 1] for the weighted loss")
    return (3.0 - r) ** 7 + 1.0


def weighted_l1_loss(y: np.ndarray, yhat: np.ndarray):
    """mean(omega * |y - yhat|) with omega = (3 - r)^7 + 1 from the target's
    radius row; one station weight multiplies all four rows."""
    if y.shape != yhat.shape:
        raise DataError(f"loss shapes differ: {y.shape} vs {yhat.shape}")
    w = omega_weights(y[3])[None, ...]
    diff = yhat - y
    loss = float(np.mean(w * np.abs(diff)))
    grad = w * np.sign(diff) / diff.size
    return loss, grad


def mse_loss(y: np.ndarray, yhat: np.ndarray):
    if y.shape != yhat.shape:
        raise DataError(f"loss shapes differ: {y.shape} vs {yhat.shape}")
    diff = yhat - y
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def gaussian_nll_loss(y: np.ndarray, yhat: np.ndarray, s: float):
    """Homoscedastic Gaussian NLL with one global log-variance s.

    loss = mean[(y - yhat)^2 / (2 e^s) + s/2]; returns (loss, dL/dyhat, dL/ds).
    """
    if y.shape != yhat.shape:
        raise DataError(f"loss shapes differ: {y.shape} vs {yhat.shape}")
    inv_var = math.exp(-s)
    diff = yhat - y
    sq = float(np.mean(diff * diff))
    loss = 0.5 * (sq * inv_var + s)
    grad = diff * inv_var / diff.size
    ds = 0.5 * (1.0 - sq * inv_var)
    return loss, grad, ds


# ---------------------------------------------------------------------------
# Inference helpers


def _require_unit_range(x: np.ndarray) -> None:
    if x.min() < 0.0 or x.max() > 1.0:
        raise DataError("network input must be normalized to [0, 1]")


def encode_geometry(ae: Network, ng: NormalizedGeometry) -> GeometricFeatures:
    _require_unit_range(ng.samples)
    latent, _ = engine.forward(encoder_subnet(ae), ng.samples)
    f = GeometricFeatures(latent.ravel().copy())
    f.validate()
    return f


def encode_batch(ae: Network, samples: np.ndarray) -> np.ndarray:
    """(N, 4, 128) normalized geometries -> (N, 48) features."""
    _require_unit_range(samples)
    latent, _ = engine.forward(encoder_subnet(ae), samples.transpose(1, 2, 0))
    return latent.reshape(GEOM_FEATURES, -1).T.copy()


def decode_features(ae: Network, f: GeometricFeatures) -> np.ndarray:
    f.validate()
    latent = f.values.reshape(LATENT_CHANNELS, LATENT_LENGTH)
    out, _ = engine.forward(decoder_subnet(ae), latent)
    return out


def normalize_profile(prof: HemoProfile) -> np.ndarray:
    return np.stack([prof.U / U_REF, prof.P / prof.bc.p_in])


def fusion_aux(f: GeometricFeatures, bc: BoundaryConditions) -> np.ndarray:
    f.validate()
    return np.concatenate([f.values, normalized_bc(bc.Q, bc.p_in)])


def profile_from_net_output(
    y: np.ndarray, lf: HemoProfile, bc: BoundaryConditions
) -> HemoProfile:
    """Denormalize the net's (2,128) output into a high-fidelity profile.

    The pressure channel is shifted so P[0] = p_in exactly, then clamped to
    [0, 1.05 p_in]. Both fidelities obey continuity (A U = Q), so the emitted
    velocity is the continuity value carried by the LF profile rather than the
    raw network channel; the raw channels stay available to callers that want
    them for diagnostics.
    """
    P = y[1] * bc.p_in
    P = P + (bc.p_in - P[0])
    P = np.clip(P, 0.0, 1.05 * bc.p_in)
    P[0] = bc.p_in
    prof = HemoProfile(U=lf.U.copy(), P=P, fidelity="high", bc=bc)
    prof.validate()
    return prof


def ffu_predict(
    net: Network,
    lf: HemoProfile,
    f: GeometricFeatures,
    bc: BoundaryConditions,
    return_raw: bool = False,
):
    lf.validate()
    if lf.fidelity != "low":
        raise DataError(f"ffu_predict expects a low-fidelity input, got {lf.fidelity!r}")
    x = normalize_profile(lf)
    aux = fusion_aux(f, bc)
    y, _ = engine.forward(net, x, aux=aux)
    prof = profile_from_net_output(y, lf, bc)
    return (prof, y) if return_raw else prof


# ---------------------------------------------------------------------------
# Training loops


def _split_indices(n: int, split, seed: int):
    rng = np.random.default_rng(derive_seed(seed, "split"))
    order = rng.permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int):
    rng = np.random.default_rng(derive_seed(seed, "epoch", epoch))
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _checkpoint_paths(ckpt_dir: str):
    return (
        os.path.join(ckpt_dir, "weights.bin"),
        os.path.join(ckpt_dir, "best.bin"),
        os.path.join(ckpt_dir, "optimizer.bin"),
        os.path.join(ckpt_dir, "progress.json"),
    )


def _save_checkpoint(ckpt_dir, net, extra_params, opt_state, progress):
    os.makedirs(ckpt_dir, exist_ok=True)
    w_path, b_path, o_path, p_path = _checkpoint_paths(ckpt_dir)
    engine.save_weights(w_path, net)
    opt_map = {"t": np.array([float(opt_state.get("t", 0))])}
    for key, (m, v) in opt_state.get("m", {}).items():
        opt_map[f"m:{key}"] = m
        opt_map[f"v:{key}"] = v
    for name, entry in extra_params.items():
        for key, arr in entry.items():
            opt_map[f"x:{name}.{key}"] = arr
    engine.save_array_map(o_path, opt_map)
    if progress.get("best_weights") is not None:
        engine.save_array_map(b_path, progress["best_weights"])
    meta = {k: v for k, v in progress.items() if k != "best_weights"}
    with open(p_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)


def _load_checkpoint(ckpt_dir, net, extra_params):
    w_path, b_path, o_path, p_path = _checkpoint_paths(ckpt_dir)
    if not os.path.exists(p_path):
        return None
    engine.load_weights(w_path, net)
    opt_map = engine.load_array_map(o_path)
    state = {"t": int(opt_map["t"][0]), "m": {}}
    for key, arr in opt_map.items():
        if key.startswith("m:"):
            state["m"].setdefault(key[2:], [None, None])[0] = arr
        elif key.startswith("v:"):
            state["m"].setdefault(key[2:], [None, None])[1] = arr
        elif key.startswith("x:"):
            name, pkey = key[2:].split(".", 1)
            extra_params[name][pkey][...] = arr
    with open(p_path) as fh:
        progress = json.load(fh)
    if os.path.exists(b_path):
        progress["best_weights"] = engine.load_array_map(b_path)
    else:
        progress["best_weights"] = None
    return state, progress


def _weights_snapshot(net: Network, extra_params) -> dict[str, np.ndarray]:
    snap = {}
    for name, entry in net.params.items():
        for key, arr in entry.items():
            snap[f"{name}.{key}"] = arr.copy()
    for name, entry in extra_params.items():
        for key, arr in entry.items():
            snap[f"extra:{name}.{key}"] = arr.copy()
    return snap


def _restore_snapshot(net: Network, extra_params, snap) -> None:
    for name, entry in net.params.items():
        for key in entry:
            entry[key][...] = snap[f"{name}.{key}"]
    for name, entry in extra_params.items():
        for key in entry:
            entry[key][...] = snap[f"extra:{name}.{key}"]


def _run_training(
    net: Network,
    arrays: dict[str, np.ndarray],
    cfg: TrainingConfig,
    batch_loss,
    eval_loss,
    extra_params: dict,
):
    """Shared Adam loop with early stopping and optional checkpointing.

    ``batch_loss(idx) -> (loss, grads, extra_grads)`` must run forward+backward
    for one batch; ``eval_loss(idx) -> float`` evaluates without gradients.
    Per-epoch shuffles are derived from (seed, epoch), so a resumed run
    replays the identical batch sequence and reproduces an uninterrupted run
    bit-for-bit.
    """
    n = arrays["n"]
    idx_train, idx_val, idx_test = _split_indices(n, cfg.split, cfg.seed)
    if len(idx_train) == 0:
        raise DataError("training split is empty")
    monitor_val = len(idx_val) > 0

    state = {}
    history: list[dict] = []
    best = math.inf
    best_weights = None
    start_epoch = 0
    stale = 0

    if cfg.checkpoint_dir:
        restored = _load_checkpoint(cfg.checkpoint_dir, net, extra_params)
        if restored is not None:
            state, progress = restored
            history = progress["history"]
            best = progress["best"]
            stale = progress["stale"]
            start_epoch = progress["epoch"] + 1
            best_weights = progress["best_weights"]

    # Built after any checkpoint restore: loading weights rebinds the
    # per-layer dicts inside net.params, and the optimizer must share them.
    params = dict(net.params)
    for name, entry in extra_params.items():
        params[name] = entry

    for epoch in range(start_epoch, cfg.epochs):
        train_losses = []
        lr_epoch = cfg.lr_at(epoch)
        for batch in _epoch_batches(len(idx_train), cfg.batch_size, cfg.seed, epoch):
            loss, grads, extra_grads = batch_loss(idx_train[batch])
            for name, entry in extra_grads.items():
                grads[name] = entry
            engine.adam_step(params, grads, state, lr=lr_epoch)
            if "nll" in extra_params:
                np.maximum(extra_params["nll"]["s"], S_FLOOR, out=extra_params["nll"]["s"])
            train_losses.append(loss)
        train_loss = float(np.mean(train_losses))
        val_loss = float(eval_loss(idx_val)) if monitor_val else train_loss
        history.append({"epoch": epoch, "train": train_loss, "val": val_loss})

        if val_loss < best - 1e-12:
            best = val_loss
            stale = 0
            best_weights = _weights_snapshot(net, extra_params)
        else:
            stale += 1

        if cfg.checkpoint_dir:
            _save_checkpoint(
                cfg.checkpoint_dir,
                net,
                extra_params,
                state,
                {
                    "epoch": epoch,
                    "history": history,
                    "best": best,
                    "stale": stale,
                    "best_weights": best_weights,
                },
            )
        if stale > cfg.patience:
            break

    if best_weights is not None:
        _restore_snapshot(net, extra_params, best_weights)
    if cfg.loss_ceiling is not None and best > cfg.loss_ceiling:
        raise TrainingDiverged(
            f"best monitored loss {best:.6g} above ceiling {cfg.loss_ceiling:.6g}",
            history=history,
        )
    return history, (idx_train, idx_val, idx_test)


def train_autoencoder(dataset: np.ndarray, cfg: TrainingConfig):
    """Train on (N, 4, 128) normalized geometries; returns (net, history, splits)."""
    cfg.validate()
    dataset = np.asarray(dataset, dtype=float)
    if dataset.ndim != 3 or dataset.shape[1:] != (4, 128):
        raise DataError(f"dataset shape {dataset.shape}, want (N, 4, 128)")
    if dataset.shape[0] == 0:
        raise DataError("empty dataset")
    _require_unit_range(dataset)
    if cfg.loss == "gaussian_nll":
        raise DataError("gaussian_nll is a fusion-net loss; use weighted_l1 or mse here")
    loss_fn = weighted_l1_loss if cfg.loss == "weighted_l1" else mse_loss

    net = build_autoencoder()
    net.init_params(derive_seed(cfg.seed, "ae-init"))

    def batch_loss(idx):
        x = dataset[idx].transpose(1, 2, 0)
        y, cache = engine.forward(net, x)
        loss, dy = loss_fn(x, y)
        grads, _, _ = engine.backward(net, cache, dy)
        return loss, grads, {}

    def eval_loss(idx):
        if len(idx) == 0:
            return math.inf
        total = 0.0
        for start in range(0, len(idx), 256):
            chunk = idx[start : start + 256]
            x = dataset[chunk].transpose(1, 2, 0)
            y, _ = engine.forward(net, x)
            total += loss_fn(x, y)[0] * len(chunk)
        return total / len(idx)

    history, splits = _run_training(
        net, {"n": dataset.shape[0]}, cfg, batch_loss, eval_loss, {}
    )
    return net, history, splits


@dataclasses.dataclass
class FfuDataset:
    """Aligned training arrays: LF input, HF target, features, boundary values."""

    X: np.ndarray  # (N, 2, 128) normalized LF profiles
    Y: np.ndarray  # (N, 2, 128) normalized HF profiles
    F: np.ndarray  # (N, 48) geometric features
    B: np.ndarray  # (N, 2) normalized boundary conditions

    def validate(self) -> None:
        n = self.X.shape[0]
        if self.X.shape != (n, 2, 128) or self.Y.shape != (n, 2, 128):
            raise DataError(f"profile arrays misshaped: {self.X.shape}, {self.Y.shape}")
        if self.F.shape != (n, GEOM_FEATURES) or self.B.shape != (n, 2):
            raise DataError(f"fusion arrays misshaped: {self.F.shape}, {self.B.shape}")
        for name in ("X", "Y", "F", "B"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite values in {name}")


def train_ffu(pairs: FfuDataset, cfg: TrainingConfig):
    """Train the fusion net; returns (net, s, history, splits).

    With the gaussian_nll loss a single global log-variance s is optimized
    jointly with the weights (homoscedastic noise); exp(s) is the aleatoric
    variance, floored at 1e-12.
    """
    cfg.validate()
    pairs.validate()
    if pairs.X.shape[0] == 0:
        raise DataError("empty dataset")
    if cfg.loss == "weighted_l1":
        raise DataError("weighted_l1 is an autoencoder loss; use mse or gaussian_nll here")

    net = build_ffu()
    net.init_params(derive_seed(cfg.seed, "ffu-init"))
    use_nll = cfg.loss == "gaussian_nll"
    extra = {"nll": {"s": np.array([cfg.s_init])}} if use_nll else {}

    def batch_loss(idx):
        x = pairs.X[idx].transpose(1, 2, 0)
        y = pairs.Y[idx].transpose(1, 2, 0)
        aux = np.concatenate([pairs.F[idx], pairs.B[idx]], axis=1).T
        yhat, cache = engine.forward(net, x, aux=aux)
        if use_nll:
            s = float(extra["nll"]["s"][0])
            loss, dy, ds = gaussian_nll_loss(y, yhat, s)
            grads, _, _ = engine.backward(net, cache, dy)
            return loss, grads, {"nll": {"s": np.array([ds])}}
        loss, dy = mse_loss(y, yhat)
        grads, _, _ = engine.backward(net, cache, dy)
        return loss, grads, {}

    def eval_loss(idx):
        if len(idx) == 0:
            return math.inf
        total = 0.0
        for start in range(0, len(idx), 256):
            chunk = idx[start : start + 256]
            x = pairs.X[chunk].transpose(1, 2, 0)
            y = pairs.Y[chunk].transpose(1, 2, 0)
            aux = np.concatenate([pairs.F[chunk], pairs.B[chunk]], axis=1).T
            yhat, _ = engine.forward(net, x, aux=aux)
            if use_nll:
                total += gaussian_nll_loss(y, yhat, float(extra["nll"]["s"][0]))[0] * len(chunk)
            else:
                total += mse_loss(y, yhat)[0] * len(chunk)
        return total / len(idx)

    history, splits = _run_training(
        net, {"n": pairs.X.shape[0]}, cfg, batch_loss, eval_loss, extra
    )
    s = float(extra["nll"]["s"][0]) if use_nll else None
    return net, s, history, splits


# ---------------------------------------------------------------------------
# Model bundles


def _arch_dicts(net: Network) -> list[dict]:
    return [dataclasses.asdict(spec) for spec in net.layers]


def _arch_hash(arch: list[dict], in_shape) -> str:
    canon = json.dumps([list(in_shape), arch], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_model_bundle(
    bundle_dir, kind: str, net: Network, cfg: TrainingConfig | None, extra: dict | None = None
) -> None:
    """Write weights plus a manifest that pins architecture and constants."""
    os.makedirs(bundle_dir, exist_ok=True)
    arch = _arch_dicts(net)
    training = dataclasses.asdict(cfg) if cfg else None
    if training is not None:
        # runtime plumbing, not model identity; keeping it would embed a path
        training.pop("checkpoint_dir", None)
    manifest = {
        "format": "ffrkit-bundle v1",
        "kind": kind,
        "in_shape": list(net.in_shape),
        "arch": arch,
        "arch_hash": _arch_hash(arch, net.in_shape),
        "norm": {
            "u_ref": U_REF,
            "p_in_ref": 13065.6,
            "q_range": [4.0e-7, 1.4e-6],
        },
        "training": training,
        "extra": extra or {},
    }
    with open(os.path.join(bundle_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    engine.save_weights(os.path.join(bundle_dir, "weights.bin"), net)


def load_model_bundle(bundle_dir):
    """Returns (net, manifest); validates the stored architecture hash."""
    path = os.path.join(bundle_dir, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable bundle manifest: {exc}") from exc
    if manifest.get("format") != "ffrkit-bundle v1":
        raise DataError(f"{path}: not a model bundle")
    arch = manifest["arch"]
    if _arch_hash(arch, manifest["in_shape"]) != manifest["arch_hash"]:
        raise DataError(f"{path}: architecture hash mismatch (manifest edited?)")
    layers = [LayerSpec(**d) for d in arch]
    net = Network(layers, tuple(manifest["in_shape"]))
    engine.load_weights(os.path.join(bundle_dir, "weights.bin"), net)
    return net, manifest
