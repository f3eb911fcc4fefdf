"""Ensemble uncertainty: decomposition identities, training, serialization."""

import numpy as np
import pytest

from ffrkit import models, physics, uq
from ffrkit.errors import DataError


def fresh_member(seed: int):
    net = models.build_ffu()
    net.init_params(seed)
    return net


def make_ensemble(seeds=(0, 1, 2), s_values=(-9.0, -9.5, -10.0)):
    members = [fresh_member(s) for s in seeds]
    return uq.Ensemble(
        members, list(s_values), base_seed=seeds[0], config=models.TrainingConfig()
    )


def batch_arrays(n=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (n, 2, 128))
    F = rng.normal(size=(n, models.GEOM_FEATURES))
    B = rng.uniform(0.0, 1.0, (n, 2))
    return X, F, B


def micro_ffu_dataset(n=10, seed=1):
    rng = np.random.default_rng(seed)
    return models.FfuDataset(
        X=rng.uniform(0.0, 1.0, (n, 2, 128)),
        Y=rng.uniform(0.0, 1.0, (n, 2, 128)),
        F=rng.normal(size=(n, models.GEOM_FEATURES)),
        B=rng.uniform(0.0, 1.0, (n, 2)),
    )


# ---------------------------------------------------------------------------
# Decomposition identities


def test_total_variance_is_exact_sum_of_parts():
    ens = make_ensemble()
    X, F, B = batch_arrays()
    mean, aleatoric, epistemic, total = uq.predict_batch(ens, X, F, B)
    assert np.array_equal(total, aleatoric + epistemic)
    assert np.all(epistemic >= 0.0)
    assert np.any(epistemic > 0.0)  # distinct members must disagree somewhere
    assert mean.shape == X.shape


def test_identical_members_have_exactly_zero_epistemic():
    net = fresh_member(7)
    ens = uq.Ensemble([net, net, net], [-8.0, -8.0, -8.0], 7, models.TrainingConfig())
    X, F, B = batch_arrays()
    _, aleatoric, epistemic, total = uq.predict_batch(ens, X, F, B)
    assert np.all(epistemic == 0.0)
    assert np.array_equal(total, np.full_like(total, aleatoric))


def test_aleatoric_is_mean_of_learned_variances():
    ens = make_ensemble(s_values=(-2.0, -4.0, -6.0))
    X, F, B = batch_arrays()
    _, aleatoric, _, _ = uq.predict_batch(ens, X, F, B)
    assert aleatoric == float(np.mean([np.exp(-2.0), np.exp(-4.0), np.exp(-6.0)]))


def test_single_profile_path_matches_batched_path(tube):
    bc = physics.BoundaryConditions(Q=1.0e-6)
    lf = physics.solve_lf(tube, bc)
    f = models.GeometricFeatures(np.linspace(-1.0, 1.0, models.GEOM_FEATURES))
    ens = make_ensemble()

    pred = uq.predict_with_uncertainty(ens, lf, f, bc)

    X = models.normalize_profile(lf)[None]
    F = f.values[None]
    B = models.fusion_aux(f, bc)[None, -2:]
    mean, aleatoric, epistemic, total = uq.predict_batch(
        ens, X, F, B, dtype=np.float64
    )
    assert pred.sigma2_aleatoric == aleatoric
    assert np.array_equal(pred.sigma2_epistemic, epistemic[0])
    assert np.array_equal(pred.sigma2_total, total[0])
    rebuilt = models.profile_from_net_output(mean[0], lf, bc)
    assert np.array_equal(pred.mean.P, rebuilt.P)
    assert np.array_equal(pred.mean.U, lf.U)


def test_misaligned_batch_arrays_rejected():
    ens = make_ensemble(seeds=(0,), s_values=(-8.0,))
    X, F, B = batch_arrays(n=3)
    with pytest.raises(DataError):
        uq.predict_batch(ens, X, F[:2], B)


def test_ensemble_validation():
    with pytest.raises(DataError):
        uq.Ensemble([], [], 0, models.TrainingConfig()).validate()
    with pytest.raises(DataError):
        uq.Ensemble([fresh_member(0)], [-1.0, -2.0], 0, models.TrainingConfig()).validate()


# ---------------------------------------------------------------------------
# Training


def test_micro_ensemble_members_differ():
    cfg = models.TrainingConfig(
        epochs=2, batch_size=4, lr=1e-3, seed=11, loss="gaussian_nll",
        split=models.FFU_SPLIT,
    )
    ens, histories = uq.train_ensemble(micro_ffu_dataset(), cfg, n_members=2)
    assert len(ens.members) == 2 and len(histories) == 2
    assert all(len(h) == 2 for h in histories)
    assert all(s >= models.S_FLOOR for s in ens.s_values)
    X, F, B = batch_arrays()
    _, _, epistemic, _ = uq.predict_batch(ens, X, F, B)
    assert np.any(epistemic > 0.0)  # different seeds -> different members


def test_train_ensemble_rejects_bad_setup():
    cfg = models.TrainingConfig(epochs=1, loss="gaussian_nll", split=(0.95, 0.05, 0.0))
    with pytest.raises(DataError):
        uq.train_ensemble(micro_ffu_dataset(), cfg, n_members=0)
    bad = models.TrainingConfig(epochs=1, loss="mse", split=(0.95, 0.05, 0.0))
    with pytest.raises(DataError):
        uq.train_ensemble(micro_ffu_dataset(), bad, n_members=1)


# ---------------------------------------------------------------------------
# Serialization


def test_ensemble_round_trip_preserves_predictions(tmp_path):
    ens = make_ensemble(seeds=(3, 4), s_values=(-7.0, -7.5))
    X, F, B = batch_arrays()
    before = uq.predict_batch(ens, X, F, B)

    uq.save_ensemble(tmp_path / "ens", ens)
    back = uq.load_ensemble(tmp_path / "ens")
    assert back.s_values == ens.s_values
    assert back.base_seed == ens.base_seed
    after = uq.predict_batch(back, X, F, B)

    assert np.array_equal(before[0], after[0])
    assert before[1] == after[1]
    assert np.array_equal(before[2], after[2])
    assert np.array_equal(before[3], after[3])


def test_load_rejects_missing_or_foreign_directory(tmp_path):
    with pytest.raises(DataError):
        uq.load_ensemble(tmp_path / "nowhere")
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "ensemble.json").write_text('{"format": "something else"}')
    with pytest.raises(DataError):
        uq.load_ensemble(bad)
