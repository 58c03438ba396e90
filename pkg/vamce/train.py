import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import torch
from tqdm import tqdm

from vamce.config import TrainingConfig
from vamce.dataset import CleanFrameSet
from vamce.errors import NumericalError, TrainingDivergedError
from vamce.loss import elbo_estimate, elbo_gradient
from vamce.models import SpeechVAE, save_model
from vamce.numerics import NS_TRAIN, RngStream
from vamce.optimizer import AdamState, adam_step
from vamce.utils.json_stuff import save_as_json

MIN_TRAINING_FRAMES = 10

# stream ids inside the training namespace
_SPLIT_STREAM, _SHUFFLE_STREAM, _NOISE_STREAM, _VAL_NOISE_STREAM = 0, 1, 2, 3


@dataclass
class TrainingLog:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_epoch: int = -1
    n_train_frames: int = 0
    n_val_frames: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str, config: Optional[TrainingConfig] = None):
        data = self.to_dict()
        if config is not None:
            data["config"] = config.model_dump()
        save_as_json(data, path)


def train_vae(
    config: TrainingConfig,
    corpus: CleanFrameSet,
    verbose: bool = False,
) -> Tuple[SpeechVAE, TrainingLog]:
    """
    Fit the speech VAE on clean power frames by minimizing the Monte-Carlo negative ELBO.

    Minibatches are reshuffled every epoch; training stops `config.patience` epochs
    after the last validation improvement (or at `max_epochs`) and the parameters of
    the best validation epoch are returned.
    """
    if len(corpus) < MIN_TRAINING_FRAMES:
        raise ValueError(f"Need at least {MIN_TRAINING_FRAMES} training frames, got {len(corpus)}")

    train_set, val_set = corpus.split(config.validation_fraction, RngStream(config.seed, _SPLIT_STREAM, NS_TRAIN))
    shuffle_stream = RngStream(config.seed, _SHUFFLE_STREAM, NS_TRAIN)
    noise_stream = RngStream(config.seed, _NOISE_STREAM, NS_TRAIN)
    # one fixed set of validation draws, so epochs are compared on the same noise
    val_noise = torch.from_numpy(
        RngStream(config.seed, _VAL_NOISE_STREAM, NS_TRAIN).normal((config.n_samples, len(val_set), config.latent_dim))
    )

    vae = SpeechVAE(corpus.n_freqs, config.latent_dim, config.hidden_dim).glorot_init_(config.seed)
    names = [name for name, _ in vae.named_parameters()]
    adam = AdamState(vae.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.adam_eps)

    log = TrainingLog(n_train_frames=len(train_set), n_val_frames=len(val_set))
    best_state = vae.clone().state_dict()
    epochs_since_best = 0

    if config.checkpoint_dir:
        os.makedirs(config.checkpoint_dir, exist_ok=True)

    if verbose:
        print(f"# Trainer : speech VAE F = {corpus.n_freqs}, L = {config.latent_dim}, H = {config.hidden_dim}")
        print(f"--- Num training frames = {len(train_set)}")
        print(f"--- Num validation frames = {len(val_set)}")
        print(f"--- Num batches each epoch = {math.ceil(len(train_set) / config.batch_size)}")
        print(f"--- Max epochs = {config.max_epochs}, patience = {config.patience}\n", flush=True)

    start_time = time.time()
    progress_bar = tqdm(range(config.max_epochs), position=0, leave=True, disable=not verbose)
    for epoch in progress_bar:
        epoch_loss, n_seen = 0.0, 0
        for batch in train_set.batches(config.batch_size, shuffle_stream):
            loss, grads = elbo_gradient(vae, batch, config.n_samples, noise_stream)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    "Training loss became non-finite",
                    last_good=_restored(vae, best_state),
                    diagnostics={"epoch": epoch, "step": adam.step_count},
                )
            try:
                adam_step(adam, [grads[name] for name in names])
            except NumericalError as e:
                raise TrainingDivergedError(
                    str(e), last_good=_restored(vae, best_state), diagnostics={"epoch": epoch, **e.diagnostics}
                )
            epoch_loss += loss * len(batch)
            n_seen += len(batch)

        val_loss, _ = elbo_estimate(vae, val_set.frames, config.n_samples, noise=val_noise)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(
                "Validation loss became non-finite",
                last_good=_restored(vae, best_state),
                diagnostics={"epoch": epoch},
            )
        log.train_loss.append(epoch_loss / n_seen)
        log.val_loss.append(val_loss)
        progress_bar.set_description(f"train {log.train_loss[-1]:.3f} | val {val_loss:.3f}")

        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_state = vae.clone().state_dict()
            epochs_since_best = 0
            if config.checkpoint_dir:
                save_model(vae, os.path.join(config.checkpoint_dir, f"checkpoint-{epoch:04d}.json"))
        else:
            epochs_since_best += 1

        log.stopped_epoch = epoch
        if epochs_since_best >= config.patience:
            if verbose:
                print(f"\nEarly stopping at epoch {epoch}, best validation loss {log.best_val_loss:.4f} at epoch {log.best_epoch}")
            break

    log.seconds = time.time() - start_time
    vae.load_state_dict(best_state)
    if verbose:
        print(f"# Trainer : done in {log.seconds:.1f}s, {log.stopped_epoch + 1} epochs", flush=True)
    return vae, log


def _restored(vae: SpeechVAE, state: dict) -> SpeechVAE:
    good = vae.clone()
    good.load_state_dict(state)
    return good
