"""End-to-end orchestration: generate, train, predict, evaluate, export.

A run lives in one output directory with fixed file names, so every stage can
find its inputs without extra plumbing, and a rerun from the same config and
seed reproduces every file byte for byte. Wall-clock timings are the one
exception; they go to separate ``*_timing.json`` sidecars so the deterministic
outputs stay comparable.

Stage seeds are derived from the single run seed by name (``gen``/``train-ae``
/``train-ffu``), and per-vessel jitter seeds from the stage seed by index, so
any stage can be re-run in isolation.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
import time

import numpy as np

from . import attention as attention_mod
from . import datafiles, geom, models, physics, uq
from .errors import DataError, NumericError
from .seeds import derive_seed

__all__ = [
    "RunConfig",
    "EvalReport",
    "parse_run_config",
    "default_run_config",
    "cmd_gen_vessels",
    "cmd_gen_hemo",
    "cmd_train_ae",
    "cmd_train_ffu",
    "cmd_predict",
    "cmd_attention",
    "cmd_eval",
    "cmd_export_plots",
    "run_pipeline",
]

N_HIST_BINS = 10


# ---------------------------------------------------------------------------
# Configuration


@dataclasses.dataclass
class GenConfig:
    n_vessels: int = 5000
    m: int = 128
    skew: bool = True
    binary: bool = False
    templates: str | None = None  # path to a template file; builtin when None


@dataclasses.dataclass
class HemoConfig:
    oracle: str = "builtin"  # "builtin" | "external-dir"
    external_dir: str | None = None


@dataclasses.dataclass
class StageTraining:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    patience: int = 10
    loss: str = "weighted_l1"
    split: tuple = (0.8, 0.1, 0.1)
    loss_ceiling: float | None = None
    s_init: float = -6.0


@dataclasses.dataclass
class FfuStage(StageTraining):
    loss: str = "gaussian_nll"
    split: tuple = models.FFU_SPLIT
    members: int = uq.DEFAULT_MEMBERS
    n_pairs: int = 2000


@dataclasses.dataclass
class EvalConfig:
    n_test: int = 200
    n_test_raw: int = 600  # raw draws for the test set before validity filtering
    n_plots: int = 5


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    gen: GenConfig = dataclasses.field(default_factory=GenConfig)
    hemo: HemoConfig = dataclasses.field(default_factory=HemoConfig)
    train_ae: StageTraining = dataclasses.field(default_factory=StageTraining)
    train_ffu: FfuStage = dataclasses.field(default_factory=FfuStage)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)

    def validate(self) -> None:
        if self.gen.n_vessels < 1:
            raise DataError(f"n_vessels must be >= 1, got {self.gen.n_vessels}")
        if self.gen.m < 16:
            raise DataError(f"m must be >= 16, got {self.gen.m}")
        if self.hemo.oracle not in ("builtin", "external-dir"):
            raise DataError(f"unknown oracle {self.hemo.oracle!r}")
        if self.hemo.oracle == "external-dir" and not self.hemo.external_dir:
            raise DataError("oracle external-dir requires external_dir")
        if self.train_ffu.members < 1:
            raise DataError("ensemble needs at least one member")
        if self.train_ffu.n_pairs < 1 or self.eval.n_test < 1:
            raise DataError("pair and test counts must be >= 1")


def default_run_config() -> RunConfig:
    return RunConfig()


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise DataError(f"expected on/off, got {raw!r}")


def _parse_split(raw: str) -> tuple:
    parts = [float(p) for p in raw.replace(",", " ").split()]
    if len(parts) != 3:
        raise DataError(f"split needs three fractions, got {raw!r}")
    return tuple(parts)


def _opt_float(raw: str) -> float | None:
    raw = raw.strip()
    return None if raw == "" else float(raw)


# section -> key -> (target attribute, converter)
_SCHEMA = {
    "run": {"seed": ("seed", int)},
    "gen": {
        "n_vessels": ("n_vessels", int),
        "m": ("m", int),
        "skew": ("skew", _parse_bool),
        "binary": ("binary", _parse_bool),
        "templates": ("templates", str),
    },
    "hemo": {
        "oracle": ("oracle", str),
        "external_dir": ("external_dir", str),
    },
    "train-ae": {
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "lr": ("lr", float),
        "lr_schedule": ("lr_schedule", str),
        "patience": ("patience", int),
        "loss": ("loss", str),
        "split": ("split", _parse_split),
        "loss_ceiling": ("loss_ceiling", _opt_float),
    },
    "train-ffu": {
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "lr": ("lr", float),
        "lr_schedule": ("lr_schedule", str),
        "patience": ("patience", int),
        "split": ("split", _parse_split),
        "loss_ceiling": ("loss_ceiling", _opt_float),
        "s_init": ("s_init", float),
        "members": ("members", int),
        "n_pairs": ("n_pairs", int),
    },
    "eval": {
        "n_test": ("n_test", int),
        "n_test_raw": ("n_test_raw", int),
        "n_plots": ("n_plots", int),
    },
}

_SECTION_TARGET = {
    "run": None,
    "gen": "gen",
    "hemo": "hemo",
    "train-ae": "train_ae",
    "train-ffu": "train_ffu",
    "eval": "eval",
}


def parse_run_config(path) -> RunConfig:
    """Read an INI-style run config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise DataError(f"{path}: malformed config: {exc}") from exc

    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise DataError(f"{path}: unknown config section [{section}]")
        known = _SCHEMA[section]
        target = cfg if _SECTION_TARGET[section] is None else getattr(
            cfg, _SECTION_TARGET[section]
        )
        for key, raw in parser.items(section):
            if key not in known:
                raise DataError(f"{path}: unknown key {key!r} in section [{section}]")
            attr, convert = known[key]
            try:
                setattr(target, attr, convert(raw))
            except ValueError as exc:
                raise DataError(
                    f"{path}: bad value {raw!r} for [{section}] {key}: {exc}"
                ) from exc
    cfg.validate()
    return cfg


def _training_config(stage: StageTraining, seed: int, checkpoint_dir) -> models.TrainingConfig:
    return models.TrainingConfig(
        epochs=stage.epochs,
        batch_size=stage.batch_size,
        lr=stage.lr,
        lr_schedule=stage.lr_schedule,
        seed=seed,
        split=stage.split,
        loss=stage.loss,
        patience=stage.patience,
        s_init=stage.s_init,
        loss_ceiling=stage.loss_ceiling,
        checkpoint_dir=checkpoint_dir,
    )


# ---------------------------------------------------------------------------
# File naming inside a run directory


def _p(out_dir, name: str) -> str:
    return os.path.join(out_dir, name)


def vessels_path(out_dir, tag: str) -> str:
    return _p(out_dir, f"{tag}_vessels.txt")


def hemo_path(out_dir, tag: str, fidelity: str) -> str:
    return _p(out_dir, f"{tag}_{fidelity}.txt")


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# Generation


def _load_templates(cfg: RunConfig) -> list[geom.CenterlineTemplate]:
    if cfg.gen.templates is None:
        return geom.builtin_templates()
    return geom.read_templates(cfg.gen.templates)


def cmd_gen_vessels(cfg: RunConfig, out_dir, tag: str = "train", seed: int | None = None) -> str:
    """Sample designs, build vessels, write the dataset; returns its path."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    if seed is None:
        seed = derive_seed(cfg.seed, "gen", 0 if tag == "train" else 1)
    n = cfg.gen.n_vessels if tag == "train" else cfg.eval.n_test_raw
    skew = geom.DEFAULT_SKEW if cfg.gen.skew else geom.UNIFORM_SKEW
    templates = _load_templates(cfg)
    designs = geom.sample_designs(n, skew=skew, seed=seed, n_templates=len(templates))
    vessels = []
    for i, dv in enumerate(designs):
        g = geom.generate_vessel(
            dv, templates[dv.template_id], seed=derive_seed(seed, "vessel", i), m=cfg.gen.m
        )
        vessels.append(g)
    path = vessels_path(out_dir, tag)
    datafiles.write_vessels(path, vessels, binary=cfg.gen.binary)
    _write_json(
        _p(out_dir, f"{tag}_vessels.json"),
        {
            "format": "ffrkit-gen v1",
            "file": os.path.basename(path),
            "n": n,
            "m": cfg.gen.m,
            "seed": seed,
            "skew": "on" if cfg.gen.skew else "off",
            "templates": cfg.gen.templates or "builtin",
        },
    )
    return path


def _hf_for_vessel(cfg: RunConfig, g: geom.VesselGeometry, bc, vessel_id: int):
    if cfg.hemo.oracle == "builtin":
        return physics.solve_hf_oracle(g, bc)
    path = os.path.join(cfg.hemo.external_dir, f"hf_{vessel_id:05d}.txt")
    if not os.path.exists(path):
        raise DataError(f"external oracle file missing: {path}")
    return physics.ingest_hf_profile(path, g)


def admissible(hf: physics.HemoProfile) -> bool:
    """Keep vessels whose pressure stays in [0, p_in]: FFR in [0, 1].

    Outside that range the target is not representable (the predictor is
    nonnegative and anchored to the inlet), and FFR loses meaning clinically.
    """
    return float(hf.P.min()) >= 0.0 and float(hf.P.max()) <= hf.bc.p_in


def drop_histogram(drops: np.ndarray, p_in: float) -> np.ndarray:
    """Decile counts of pressure drops over the admissible range [0, p_in]."""
    counts, _ = np.histogram(drops, bins=N_HIST_BINS, range=(0.0, p_in))
    return counts


def cmd_gen_hemo(cfg: RunConfig, out_dir, tag: str = "train") -> dict:
    """Solve LF and HF per vessel, keep admissible pairs, write datasets.

    Per-vessel failures (solver errors, missing external files, inadmissible
    pressures) are recorded in the manifest and the run continues.
    """
    cfg.validate()
    vessels = datafiles.read_vessels(vessels_path(out_dir, tag))
    lf_records, hf_records, drops, valid_ids, failures = [], [], [], [], []
    for i, g in enumerate(vessels):
        bc = physics.BoundaryConditions(Q=g.meta.Q)
        try:
            lf = physics.solve_lf(g, bc)
            hf = _hf_for_vessel(cfg, g, bc, i)
        except (DataError, NumericError) as exc:
            failures.append({"vessel": i, "reason": str(exc)})
            continue
        if not admissible(hf):
            failures.append({"vessel": i, "reason": "pressure outside [0, p_in]"})
            continue
        lf_records.append(
            datafiles.HemoRecord(i, bc.Q, bc.p_in, "low", lf.U, lf.P, bc.mu, bc.rho)
        )
        hf_records.append(
            datafiles.HemoRecord(i, bc.Q, bc.p_in, hf.fidelity, hf.U, hf.P, bc.mu, bc.rho)
        )
        drops.append(bc.p_in - hf.P[-1])
        valid_ids.append(i)
    if not lf_records:
        raise DataError(f"no admissible vessels in {vessels_path(out_dir, tag)}")

    datafiles.write_hemo(hemo_path(out_dir, tag, "lf"), lf_records, binary=cfg.gen.binary)
    datafiles.write_hemo(hemo_path(out_dir, tag, "hf"), hf_records, binary=cfg.gen.binary)

    p_in = lf_records[0].p_in
    drops = np.asarray(drops)
    with open(_p(out_dir, f"{tag}_drops.txt"), "w") as fh:
        fh.write(f"ffrkit-drops v1 count={drops.size} p_in={p_in!r}\n")
        for d in drops:
            fh.write(repr(float(d)) + "\n")
    counts = drop_histogram(drops, p_in)
    manifest = {
        "format": "ffrkit-hemo-manifest v1",
        "oracle": cfg.hemo.oracle,
        "n_input": len(vessels),
        "n_valid": len(valid_ids),
        "valid": valid_ids,
        "failures": failures,
        "histogram": {
            "range": [0.0, p_in],
            "bins": N_HIST_BINS,
            "counts": [int(c) for c in counts],
        },
    }
    _write_json(_p(out_dir, f"{tag}_hemo.json"), manifest)
    return manifest


# ---------------------------------------------------------------------------
# Training


def _normalized_stack(vessels: list[geom.VesselGeometry]) -> np.ndarray:
    return np.stack([geom.normalize_geometry(g).samples for g in vessels])


def _write_curves(path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(f"ffrkit-curves v1 count={len(history)}\n")
        for row in history:
            fh.write(
                f"{row['epoch']} {datafiles.fmt_floats([row['train'], row['val']])}\n"
            )


def cmd_train_ae(cfg: RunConfig, out_dir) -> tuple:
    """Train the geometry autoencoder on the train vessels; save its bundle."""
    cfg.validate()
    vessels = datafiles.read_vessels(vessels_path(out_dir, "train"))
    dataset = _normalized_stack(vessels)
    ae_dir = _p(out_dir, "ae")
    tcfg = _training_config(
        cfg.train_ae, derive_seed(cfg.seed, "train-ae"), _p(ae_dir, "checkpoint")
    )
    net, history, _ = models.train_autoencoder(dataset, tcfg)
    models.save_model_bundle(ae_dir, "ae", net, tcfg)
    _write_curves(_p(ae_dir, "curves.txt"), history)
    return net, history


def _ffu_pairs(
    cfg: RunConfig, out_dir, tag: str, ae: models.Network, limit: int | None
) -> tuple[models.FfuDataset, list[int]]:
    vessels = datafiles.read_vessels(vessels_path(out_dir, tag))
    lf_records = datafiles.read_hemo(hemo_path(out_dir, tag, "lf"))
    hf_records = datafiles.read_hemo(hemo_path(out_dir, tag, "hf"))
    if len(lf_records) != len(hf_records):
        raise DataError(f"{tag}: LF and HF record counts differ")
    if limit is not None:
        lf_records = lf_records[:limit]
        hf_records = hf_records[:limit]
    X, Y, B, ids = [], [], [], []
    kept_vessels = []
    for lf_rec, hf_rec in zip(lf_records, hf_records):
        if lf_rec.vessel_id != hf_rec.vessel_id:
            raise DataError(f"{tag}: LF/HF records misaligned at vessel {lf_rec.vessel_id}")
        g = vessels[lf_rec.vessel_id]
        bc = physics.BoundaryConditions(lf_rec.Q, lf_rec.p_in, lf_rec.mu, lf_rec.rho)
        lf = physics.HemoProfile(U=lf_rec.U, P=lf_rec.P, fidelity="low", bc=bc)
        hf = physics.HemoProfile(U=hf_rec.U, P=hf_rec.P, fidelity=hf_rec.fidelity, bc=bc)
        X.append(models.normalize_profile(lf))
        Y.append(models.normalize_profile(hf))
        B.append(datafiles.normalized_bc(bc.Q, bc.p_in))
        ids.append(lf_rec.vessel_id)
        kept_vessels.append(g)
    F = models.encode_batch(ae, _normalized_stack(kept_vessels))
    pairs = models.FfuDataset(
        X=np.asarray(X), Y=np.asarray(Y), F=F, B=np.asarray(B)
    )
    pairs.validate()
    return pairs, ids


def cmd_train_ffu(cfg: RunConfig, out_dir) -> tuple:
    """Train the fusion-net deep ensemble against the paired hemodynamics."""
    cfg.validate()
    ae, _ = models.load_model_bundle(_p(out_dir, "ae"))
    pairs, ids = _ffu_pairs(cfg, out_dir, "train", ae, cfg.train_ffu.n_pairs)
    ffu_dir = _p(out_dir, "ffu")
    tcfg = _training_config(
        cfg.train_ffu, derive_seed(cfg.seed, "train-ffu"), _p(ffu_dir, "checkpoint")
    )
    ens, histories = uq.train_ensemble(pairs, tcfg, n_members=cfg.train_ffu.members)
    uq.save_ensemble(ffu_dir, ens)
    for k, history in enumerate(histories):
        _write_curves(_p(ffu_dir, f"curves_{k}.txt"), history)
    _write_json(
        _p(ffu_dir, "pairs.json"),
        {"format": "ffrkit-pairs v1", "n_pairs": len(ids), "vessel_ids": ids},
    )
    return ens, histories


# ---------------------------------------------------------------------------
# Inference


def _load_bundles(out_dir) -> tuple:
    ae, _ = models.load_model_bundle(_p(out_dir, "ae"))
    ens = uq.load_ensemble(_p(out_dir, "ffu"))
    return ae, ens


def _staged(stage: str, fn):
    try:
        return fn()
    except Exception as exc:
        if isinstance(exc, DataError):
            raise DataError(f"[{stage}] {exc}") from exc
        if isinstance(exc, NumericError):
            raise NumericError(f"[{stage}] {exc}") from exc
        raise


def predict_vessel(
    ae: models.Network, ens: uq.Ensemble, g: geom.VesselGeometry, bc
) -> uq.EnsemblePrediction:
    """LF solve -> encode -> fusion ensemble -> uncertainty, one vessel."""
    lf = _staged("lf-solve", lambda: physics.solve_lf(g, bc))
    ng = _staged("normalize", lambda: geom.normalize_geometry(g))
    f = _staged("encode", lambda: models.encode_geometry(ae, ng))
    return _staged("fusion", lambda: uq.predict_with_uncertainty(ens, lf, f, bc))


def cmd_predict(
    cfg: RunConfig,
    out_dir,
    index: int,
    tag: str = "test",
    vessel_file=None,
    Q: float | None = None,
) -> uq.EnsemblePrediction:
    """Predict one vessel from a dataset file using the saved bundles.

    Writes ``predict_{index}.txt`` (station rows with the +-2 sigma FFR band)
    and a wall-clock sidecar ``predict_{index}_timing.json``.
    """
    cfg.validate()
    path = vessel_file or vessels_path(out_dir, tag)
    vessels = datafiles.read_vessels(path)
    if not 0 <= index < len(vessels):
        raise DataError(f"vessel index {index} outside dataset of {len(vessels)}")
    g = vessels[index]
    bc = physics.BoundaryConditions(Q=g.meta.Q if Q is None else Q)
    ae, ens = _load_bundles(out_dir)

    t0 = time.perf_counter()
    pred = predict_vessel(ae, ens, g, bc)
    seconds = time.perf_counter() - t0

    ffr_mean = pred.mean.P / bc.p_in
    band = 2.0 * np.sqrt(pred.sigma2_total)
    rows = np.column_stack(
        [
            np.arange(g.m),
            g.arc_length(),
            pred.mean.U,
            pred.mean.P,
            ffr_mean,
            ffr_mean - band,
            ffr_mean + band,
        ]
    )
    out_path = _p(out_dir, f"predict_{index}.txt")
    with open(out_path, "w") as fh:
        fh.write(f"ffrkit-predict v1 m={g.m} vessel={index}\n")
        for row in rows:
            fh.write(datafiles.fmt_floats(row) + "\n")
    _write_json(
        _p(out_dir, f"predict_{index}_timing.json"),
        {"seconds": seconds, "vessel": index},
    )
    return pred


def cmd_attention(
    cfg: RunConfig, out_dir, index: int, tag: str = "test", vessel_file=None
) -> attention_mod.AttentionMap:
    """Attention map for one vessel, projected and exported per station."""
    cfg.validate()
    path = vessel_file or vessels_path(out_dir, tag)
    vessels = datafiles.read_vessels(path)
    if not 0 <= index < len(vessels):
        raise DataError(f"vessel index {index} outside dataset of {len(vessels)}")
    g = vessels[index]
    ae, _ = models.load_model_bundle(_p(out_dir, "ae"))
    ng = geom.normalize_geometry(g)
    amap = attention_mod.attention_map(ae, ng)
    rows = attention_mod.project_attention(amap, g)
    attention_mod.write_attention(
        _p(out_dir, f"attention_{index}.txt"), rows, amap.source_layer
    )
    return amap


# ---------------------------------------------------------------------------
# Evaluation


def anchored_ffr(norm_p: np.ndarray, p_in: float) -> np.ndarray:
    """Batch (N, m) normalized pressure -> FFR, same ops as a single predict."""
    P = norm_p * p_in
    P = P + (p_in - P[:, :1])
    P = np.clip(P, 0.0, 1.05 * p_in)
    P[:, 0] = p_in
    return P / p_in


@dataclasses.dataclass
class EvalReport:
    """Per-vessel rows plus aggregates that are exactly their means."""

    vessel_ids: list[int]
    ffr_mse_model: np.ndarray  # per-vessel, model vs HF
    ffr_mse_lf: np.ndarray  # per-vessel, LF vs HF
    vel_mse_model: np.ndarray
    vel_mse_lf: np.ndarray
    aleatoric: np.ndarray  # per-vessel station-mean variance
    epistemic: np.ndarray
    total: np.ndarray
    coverage: np.ndarray  # per-vessel fraction of stations inside +-2 sigma
    drop_hist: np.ndarray  # decile counts over [0, p_in]
    seconds_per_vessel: float
    seconds_total: float

    @property
    def n_vessels(self) -> int:
        return len(self.vessel_ids)

    def aggregate(self, field: str) -> float:
        return float(np.mean(getattr(self, field)))

    def validate(self) -> None:
        n = self.n_vessels
        if n == 0:
            raise DataError("evaluation over an empty test set")
        for field in (
            "ffr_mse_model",
            "ffr_mse_lf",
            "vel_mse_model",
            "vel_mse_lf",
            "aleatoric",
            "epistemic",
            "total",
            "coverage",
        ):
            if getattr(self, field).shape != (n,):
                raise DataError(f"eval field {field} misaligned")
        if int(self.drop_hist.sum()) != n:
            raise DataError("histogram bins must sum to the sample count")


_EVAL_FIELDS = (
    "ffr_mse_model",
    "ffr_mse_lf",
    "vel_mse_model",
    "vel_mse_lf",
    "aleatoric",
    "epistemic",
    "total",
    "coverage",
)


def evaluate_pairs(
    ae: models.Network,
    ens: uq.Ensemble,
    vessels: list[geom.VesselGeometry],
    lf_records: list[datafiles.HemoRecord],
    hf_records: list[datafiles.HemoRecord],
) -> EvalReport:
    """Batched model-vs-oracle metrics on aligned LF/HF record lists."""
    if not lf_records:
        raise DataError("evaluation over an empty test set")
    if len(lf_records) != len(hf_records):
        raise DataError("LF and HF record counts differ")
    n = len(lf_records)
    p_in = lf_records[0].p_in

    X = np.empty((n, 2, lf_records[0].U.size))
    B = np.empty((n, 2))
    kept = []
    ids = []
    U_lf = np.empty((n, lf_records[0].U.size))
    P_hf = np.empty_like(U_lf)
    U_hf = np.empty_like(U_lf)
    for j, (lf_rec, hf_rec) in enumerate(zip(lf_records, hf_records)):
        if lf_rec.vessel_id != hf_rec.vessel_id:
            raise DataError(f"LF/HF records misaligned at vessel {lf_rec.vessel_id}")
        bc = physics.BoundaryConditions(lf_rec.Q, lf_rec.p_in, lf_rec.mu, lf_rec.rho)
        lf = physics.HemoProfile(U=lf_rec.U, P=lf_rec.P, fidelity="low", bc=bc)
        X[j] = models.normalize_profile(lf)
        B[j] = datafiles.normalized_bc(bc.Q, bc.p_in)
        kept.append(vessels[lf_rec.vessel_id])
        ids.append(lf_rec.vessel_id)
        U_lf[j] = lf_rec.U
        P_hf[j] = hf_rec.P
        U_hf[j] = hf_rec.U

    t0 = time.perf_counter()
    F = models.encode_batch(ae, _normalized_stack(kept))
    mean, aleatoric, epistemic, total = uq.predict_batch(ens, X, F, B)
    seconds_total = time.perf_counter() - t0

    ffr_pred = anchored_ffr(mean[:, 1, :], p_in)
    ffr_hf = P_hf / p_in
    ffr_lf = X[:, 1, :]  # normalized LF pressure is exactly P_lf / p_in

    ffr_mse_model = np.mean((ffr_pred - ffr_hf) ** 2, axis=1)
    ffr_mse_lf = np.mean((ffr_lf - ffr_hf) ** 2, axis=1)
    # Both fidelities and the prediction share the continuity velocity U = Q/A,
    # so these columns measure exactly that agreement.
    vel_mse_model = np.mean((U_lf - U_hf) ** 2, axis=1)
    vel_mse_lf = np.mean((U_lf - U_hf) ** 2, axis=1)

    band = 2.0 * np.sqrt(total)
    coverage = np.mean(np.abs(ffr_hf - ffr_pred) <= band, axis=1)

    drops = p_in - P_hf[:, -1]
    report = EvalReport(
        vessel_ids=ids,
        ffr_mse_model=ffr_mse_model,
        ffr_mse_lf=ffr_mse_lf,
        vel_mse_model=vel_mse_model,
        vel_mse_lf=vel_mse_lf,
        aleatoric=np.full(n, aleatoric),
        epistemic=np.mean(epistemic, axis=1),
        total=np.mean(total, axis=1),
        coverage=coverage,
        drop_hist=drop_histogram(drops, p_in),
        seconds_per_vessel=seconds_total / n,
        seconds_total=seconds_total,
    )
    report.validate()
    return report


def write_eval_report(out_dir, report: EvalReport, seed: int) -> None:
    """eval.json + eval.txt + per-vessel detail; timing in its own sidecar."""
    payload = {
        "format": "ffrkit-eval v1",
        "seed": seed,
        "n_vessels": report.n_vessels,
        "aggregates": {f: report.aggregate(f) for f in _EVAL_FIELDS},
        "histogram": {
            "bins": N_HIST_BINS,
            "counts": [int(c) for c in report.drop_hist],
        },
    }
    _write_json(_p(out_dir, "eval.json"), payload)
    _write_json(
        _p(out_dir, "eval_timing.json"),
        {
            "seconds_per_vessel": report.seconds_per_vessel,
            "seconds_total": report.seconds_total,
            "vessels_per_second": (
                1.0 / report.seconds_per_vessel if report.seconds_per_vessel > 0 else None
            ),
        },
    )
    with open(_p(out_dir, "eval_detail.txt"), "w") as fh:
        fh.write(f"ffrkit-eval-detail v1 count={report.n_vessels}\n")
        for j, vid in enumerate(report.vessel_ids):
            row = [getattr(report, f)[j] for f in _EVAL_FIELDS]
            fh.write(f"{vid} " + datafiles.fmt_floats(row) + "\n")
    with open(_p(out_dir, "eval.txt"), "w") as fh:
        fh.write("evaluation summary\n")
        fh.write(f"  vessels: {report.n_vessels}\n")
        for f in _EVAL_FIELDS:
            fh.write(f"  {f}: {report.aggregate(f):.6e}\n")
        ratio = report.aggregate("ffr_mse_model") / max(
            report.aggregate("ffr_mse_lf"), 1e-300
        )
        fh.write(f"  ffr_mse ratio (model/LF): {ratio:.4f}\n")
        fh.write(
            "  drop histogram counts: "
            + " ".join(str(int(c)) for c in report.drop_hist)
            + "\n"
        )
        fh.write("  timing: see eval_timing.json\n")


def cmd_eval(cfg: RunConfig, out_dir, tag: str = "test") -> EvalReport:
    """Evaluate the saved bundles on the held-out pairs; write the report."""
    cfg.validate()
    ae, ens = _load_bundles(out_dir)
    vessels = datafiles.read_vessels(vessels_path(out_dir, tag))
    lf_records = datafiles.read_hemo(hemo_path(out_dir, tag, "lf"))[: cfg.eval.n_test]
    hf_records = datafiles.read_hemo(hemo_path(out_dir, tag, "hf"))[: cfg.eval.n_test]
    report = evaluate_pairs(ae, ens, vessels, lf_records, hf_records)
    write_eval_report(out_dir, report, cfg.seed)
    return report


# ---------------------------------------------------------------------------
# Plot-data export


def cmd_export_plots(cfg: RunConfig, out_dir, tag: str = "test") -> list[str]:
    """Aligned per-vessel columns for external plotting tools.

    Columns: arc length, LF FFR, HF FFR, predicted FFR, band lo, band hi,
    scaled attention. One file per exported vessel.
    """
    cfg.validate()
    ae, ens = _load_bundles(out_dir)
    vessels = datafiles.read_vessels(vessels_path(out_dir, tag))
    lf_records = datafiles.read_hemo(hemo_path(out_dir, tag, "lf"))
    hf_records = datafiles.read_hemo(hemo_path(out_dir, tag, "hf"))
    plots_dir = _p(out_dir, "plots")
    os.makedirs(plots_dir, exist_ok=True)
    paths = []
    for lf_rec, hf_rec in list(zip(lf_records, hf_records))[: cfg.eval.n_plots]:
        vid = lf_rec.vessel_id
        g = vessels[vid]
        bc = physics.BoundaryConditions(lf_rec.Q, lf_rec.p_in, lf_rec.mu, lf_rec.rho)
        pred = predict_vessel(ae, ens, g, bc)
        ffr_pred = pred.mean.P / bc.p_in
        band = 2.0 * np.sqrt(pred.sigma2_total)
        ng = geom.normalize_geometry(g)
        amap = attention_mod.attention_map(ae, ng)
        rows = np.column_stack(
            [
                g.arc_length(),
                lf_rec.P / bc.p_in,
                hf_rec.P / bc.p_in,
                ffr_pred,
                ffr_pred - band,
                ffr_pred + band,
                amap.scaled,
            ]
        )
        path = os.path.join(plots_dir, f"vessel_{vid:05d}.txt")
        with open(path, "w") as fh:
            fh.write(
                f"ffrkit-plot v1 m={g.m} vessel={vid} "
                "columns=arc,ffr_lf,ffr_hf,ffr_pred,band_lo,band_hi,attention\n"
            )
            for row in rows:
                fh.write(datafiles.fmt_floats(row) + "\n")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Full chain


def run_pipeline(cfg: RunConfig, out_dir) -> EvalReport:
    """gen -> hemo -> train-ae -> train-ffu -> eval -> plots, one seed."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    cmd_gen_vessels(cfg, out_dir, tag="train")
    cmd_gen_hemo(cfg, out_dir, tag="train")
    cmd_gen_vessels(cfg, out_dir, tag="test")
    cmd_gen_hemo(cfg, out_dir, tag="test")
    cmd_train_ae(cfg, out_dir)
    cmd_train_ffu(cfg, out_dir)
    report = cmd_eval(cfg, out_dir)
    cmd_export_plots(cfg, out_dir)
    return report
