"""Deep-ensemble uncertainty: train M fusion nets, decompose the variance.

Epistemic variance is the per-station population variance of the member FFR
predictions; aleatoric variance is the average of the members' learned
homoscedastic noise exp(s); the total is their sum by construction, so the
decomposition identity holds exactly.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from . import engine, models
from .errors import DataError
from .models import FfuDataset, GeometricFeatures, TrainingConfig
from .physics import BoundaryConditions, HemoProfile

DEFAULT_MEMBERS = 5


@dataclasses.dataclass
class Ensemble:
    members: list[engine.Network]
    s_values: list[float]  # learned log-variances, one per member
    base_seed: int
    config: TrainingConfig

    def validate(self) -> None:
        if not self.members:
            raise DataError("ensemble has no members")
        if len(self.s_values) != len(self.members):
            raise DataError("one log-variance per member required")


@dataclasses.dataclass
class EnsemblePrediction:
    mean: HemoProfile
    sigma2_aleatoric: float
    sigma2_epistemic: np.ndarray  # (m,) in FFR (normalized-pressure) units
    sigma2_total: np.ndarray  # (m,)


def train_ensemble(
    pairs: FfuDataset, cfg: TrainingConfig, n_members: int = DEFAULT_MEMBERS
):
    """Train members independently with seeds base+0 .. base+M-1.

    Each member gets its own init and its own data shuffles; everything else
    (architecture, data, config) is shared. Histories are returned alongside.
    """
    if n_members < 1:
        raise DataError(f"need at least one member, got {n_members}")
    cfg.validate()
    if cfg.loss != "gaussian_nll":
        raise DataError("ensemble training requires the gaussian_nll loss")
    members, s_values, histories = [], [], []
    for k in range(n_members):
        member_cfg = dataclasses.replace(
            cfg,
            seed=cfg.seed + k,
            checkpoint_dir=(
                os.path.join(cfg.checkpoint_dir, f"member_{k}")
                if cfg.checkpoint_dir
                else None
            ),
        )
        net, s, history, _ = models.train_ffu(pairs, member_cfg)
        members.append(net)
        s_values.append(s)
        histories.append(history)
    ens = Ensemble(members, s_values, base_seed=cfg.seed, config=cfg)
    ens.validate()
    return ens, histories


def member_outputs(
    ens: Ensemble, x: np.ndarray, aux: np.ndarray, dtype=np.float32
) -> np.ndarray:
    """Raw normalized (2, 128, B) outputs of every member, stacked (M, 2, 128, B)."""
    outs = [engine.predict_forward(net, x, aux=aux, dtype=dtype) for net in ens.members]
    return np.stack([np.asarray(o, dtype=float) for o in outs])


def _variance_decomposition(stack_p: np.ndarray, s_values) -> tuple:
    """(members, m, ...) FFR-channel predictions -> (mean, aleatoric, epistemic)."""
    if all(np.array_equal(stack_p[0], p) for p in stack_p[1:]):
        # Identical members carry no model spread; make the zero exact rather
        # than leaving last-ulp noise from the mean subtraction.
        mean = stack_p[0].copy()
        epistemic = np.zeros(mean.shape)
    else:
        mean = stack_p.mean(axis=0)
        dev = stack_p - mean
        epistemic = np.mean(dev * dev, axis=0)
    aleatoric = float(np.mean([np.exp(s) for s in s_values]))
    return mean, aleatoric, epistemic


def predict_with_uncertainty(
    ens: Ensemble,
    lf: HemoProfile,
    f: GeometricFeatures,
    bc: BoundaryConditions,
    dtype=np.float64,
) -> EnsemblePrediction:
    ens.validate()
    lf.validate()
    x = models.normalize_profile(lf)
    aux = models.fusion_aux(f, bc)
    stack = member_outputs(ens, x, aux, dtype=dtype)  # (M, 2, 128)
    mean_norm, aleatoric, epistemic = _variance_decomposition(
        stack[:, 1, :], ens.s_values
    )
    mean_channels = np.stack([stack[:, 0, :].mean(axis=0), mean_norm])
    mean_prof = models.profile_from_net_output(mean_channels, lf, bc)
    total = aleatoric + epistemic
    return EnsemblePrediction(
        mean=mean_prof,
        sigma2_aleatoric=aleatoric,
        sigma2_epistemic=epistemic,
        sigma2_total=total,
    )


def predict_batch(
    ens: Ensemble,
    X: np.ndarray,
    F: np.ndarray,
    B: np.ndarray,
    dtype=np.float32,
):
    """Batched ensemble inference on normalized arrays.

    X: (N, 2, 128) LF profiles; F: (N, 48); B: (N, 2). Returns
    (mean (N, 2, 128), aleatoric scalar, epistemic (N, 128), total (N, 128)),
    all in normalized units. Uncertainties are computed in 64-bit from the
    member outputs, so total = aleatoric + epistemic holds exactly.
    """
    ens.validate()
    n = X.shape[0]
    if F.shape[0] != n or B.shape[0] != n:
        raise DataError("misaligned batch arrays")
    x = X.transpose(1, 2, 0)
    aux = np.concatenate([F, B], axis=1).T
    stack = member_outputs(ens, x, aux, dtype=dtype)  # (M, 2, 128, N)
    mean_p, aleatoric, epistemic = _variance_decomposition(stack[:, 1], ens.s_values)
    mean = np.stack([stack[:, 0].mean(axis=0), mean_p])  # (2, 128, N)
    total = aleatoric + epistemic
    return (
        mean.transpose(2, 0, 1),
        aleatoric,
        epistemic.T,
        total.T,
    )


# ---------------------------------------------------------------------------
# Serialization


def save_ensemble(ens_dir, ens: Ensemble) -> None:
    ens.validate()
    os.makedirs(ens_dir, exist_ok=True)
    names = [f"member_{k}" for k in range(len(ens.members))]
    meta = {
        "format": "ffrkit-ensemble v1",
        "members": names,
        "n_members": len(names),
        "base_seed": ens.base_seed,
    }
    with open(os.path.join(ens_dir, "ensemble.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
    for name, net, s in zip(names, ens.members, ens.s_values):
        models.save_model_bundle(
            os.path.join(ens_dir, name),
            "ffu",
            net,
            ens.config,
            extra={"nll_s": s},
        )


def load_ensemble(ens_dir) -> Ensemble:
    path = os.path.join(ens_dir, "ensemble.json")
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable ensemble manifest: {exc}") from exc
    if meta.get("format") != "ffrkit-ensemble v1":
        raise DataError(f"{path}: not an ensemble directory")
    members, s_values = [], []
    cfg = None
    for name in meta["members"]:
        net, manifest = models.load_model_bundle(os.path.join(ens_dir, name))
        if manifest["kind"] != "ffu":
            raise DataError(f"{ens_dir}/{name}: expected an ffu bundle")
        members.append(net)
        s_values.append(float(manifest["extra"]["nll_s"]))
        if cfg is None and manifest.get("training"):
            t = dict(manifest["training"])
            t["split"] = tuple(t["split"])
            cfg = TrainingConfig(**t)
    ens = Ensemble(members, s_values, base_seed=meta["base_seed"], config=cfg or TrainingConfig())
    ens.validate()
    return ens
