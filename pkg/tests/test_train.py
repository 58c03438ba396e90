import os

import numpy as np
import pytest
import torch
import ujson

import vamce.train
from conftest import random_power
from vamce.config import TrainingConfig
from vamce.dataset import CleanFrameSet
from vamce.errors import TrainingDivergedError
from vamce.models import load_model
from vamce.train import train_vae


def _config(**kwargs):
    base = dict(latent_dim=4, hidden_dim=16, batch_size=16, max_epochs=30, patience=3, seed=0)
    base.update(kwargs)
    return TrainingConfig(**base)


def _structured_frames(n, n_freqs=33, seed=0):
    """Log-spectra drawn from a rank-3 model, so there is something to learn."""
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((3, n_freqs))
    codes = rng.standard_normal((n, 3))
    return CleanFrameSet(torch.from_numpy(np.exp(codes @ basis) * rng.gamma(1.0, 1.0, (n, n_freqs))))


def test_too_few_frames():
    with pytest.raises(ValueError, match="at least 10"):
        train_vae(_config(), CleanFrameSet(random_power((9, 33))))


def test_training_is_deterministic():
    frames = _structured_frames(80)
    vae_a, log_a = train_vae(_config(max_epochs=4), frames)
    vae_b, log_b = train_vae(_config(max_epochs=4), frames)
    assert log_a.train_loss == log_b.train_loss
    assert log_a.val_loss == log_b.val_loss
    for a, b in zip(vae_a.parameters(), vae_b.parameters()):
        assert torch.equal(a, b)


def test_early_stopping_returns_best_epoch(tmp_path):
    frames = _structured_frames(120, seed=1)
    checkpoints = str(tmp_path / "checkpoints")
    vae, log = train_vae(_config(max_epochs=40, patience=2, lr=3e-2, checkpoint_dir=checkpoints), frames)

    assert len(log.val_loss) == log.stopped_epoch + 1
    assert log.best_epoch == int(np.argmin(log.val_loss))
    assert log.best_val_loss == min(log.val_loss)
    assert log.stopped_epoch - log.best_epoch <= 2
    if log.stopped_epoch < 39:
        assert log.stopped_epoch - log.best_epoch == 2
    assert log.n_train_frames + log.n_val_frames == 120
    assert log.n_val_frames == 24

    saved = sorted(os.listdir(checkpoints))
    assert saved[-1] == f"checkpoint-{log.best_epoch:04d}.json"
    best = load_model(os.path.join(checkpoints, saved[-1]))
    for a, b in zip(best.parameters(), vae.parameters()):
        assert torch.equal(a, b)


def test_divergence_reports_last_good_model(monkeypatch):
    frames = _structured_frames(40)

    def nan_gradient(vae, batch, n_samples, stream):
        return float("nan"), {}

    monkeypatch.setattr(vamce.train, "elbo_gradient", nan_gradient)
    with pytest.raises(TrainingDivergedError) as info:
        train_vae(_config(), frames)
    last_good = info.value.last_good
    assert last_good is not None
    assert all(torch.isfinite(p).all() for p in last_good.parameters())
    assert info.value.diagnostics["epoch"] == 0


def test_training_log_save(tmp_path):
    _, log = train_vae(_config(max_epochs=2), _structured_frames(30))
    path = str(tmp_path / "log.json")
    log.save(path, _config(max_epochs=2))
    with open(path) as f:
        data = ujson.load(f)
    assert data["config"]["max_epochs"] == 2
    assert len(data["train_loss"]) == len(data["val_loss"]) == log.stopped_epoch + 1


@pytest.mark.slow
def test_training_reduces_loss_on_larger_set():
    frames = _structured_frames(1000, seed=5)
    _, log = train_vae(_config(latent_dim=8, hidden_dim=64, batch_size=128, max_epochs=5, patience=5), frames)
    assert len(log.train_loss) == 5
    assert log.train_loss[-1] < log.train_loss[0]
    assert log.val_loss[-1] < log.val_loss[0]
