from typing import List, Literal, Optional
import json

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _JsonConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    @classmethod
    def from_json(cls, file_path: str):
        with open(file_path, 'r') as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError(f"{file_path}: expected a flat JSON object, got {type(data).__name__}")
        return cls(**data)

    def save_as_json(self, file_path: str) -> None:
        with open(file_path, 'w') as f:
            json.dump(self.model_dump(), f, indent=4)


class StftConfig(_JsonConfig):
    sample_rate: int = Field(16000, gt=0)
    win_ms: float = Field(64.0, gt=0)       # 64 ms sine window -> 1024 samples / F = 513 at 16 kHz
    overlap: float = Field(0.75, ge=0.0, lt=1.0)

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.win_length * (1.0 - self.overlap)))

    @property
    def n_freqs(self) -> int:
        return self.win_length // 2 + 1

    @model_validator(mode="after")
    def _check_frames(self):
        if self.win_length % 2 != 0:
            raise ValueError(f"window length must be even, got {self.win_length} samples")
        if self.hop < 1:
            raise ValueError(f"overlap {self.overlap} leaves a hop of {self.hop} samples")
        return self


class TrainingConfig(_JsonConfig):
    latent_dim: int = Field(16, ge=1)
    hidden_dim: int = Field(128, ge=1)       # layer widths are a knob, not fixed by the model
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-7, gt=0)
    batch_size: int = Field(128, ge=1)
    max_epochs: int = Field(500, ge=1)
    patience: int = Field(10, ge=1)
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    n_samples: int = Field(1, ge=1)          # R_train, Monte Carlo samples per frame and step
    seed: int = Field(0, ge=0)
    checkpoint_dir: Optional[str] = None


class EnhancerConfig(_JsonConfig):
    mh_iters: int = Field(40, ge=1)
    burn_in: int = Field(30, ge=0)
    rec_mh_iters: int = Field(100, ge=1)
    rec_burn_in: int = Field(75, ge=0)
    proposal_var: float = Field(0.01, gt=0)  # eps^2, variance of the random-walk proposal
    n_noise_components: int = Field(10, ge=1)
    tol: float = Field(1e-4, gt=0)
    max_iters: int = Field(200, ge=1)
    seed: int = Field(0, ge=0)
    freeze_gains: bool = False
    unscale_output: bool = False             # divide the estimate by sqrt(g) per frame
    chunk_size: int = Field(64, ge=1)        # frames per parallel work item, never depends on thread count
    n_threads: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _check_burn_in(self):
        if self.burn_in >= self.mh_iters:
            raise ValueError(f"burn_in ({self.burn_in}) must be < mh_iters ({self.mh_iters})")
        if self.rec_burn_in >= self.rec_mh_iters:
            raise ValueError(f"rec_burn_in ({self.rec_burn_in}) must be < rec_mh_iters ({self.rec_mh_iters})")
        return self


class BaselineConfig(_JsonConfig):
    n_speech_components: int = Field(64, ge=1)
    n_noise_components: int = Field(10, ge=1)
    max_iters: int = Field(500, ge=1)
    tol: float = Field(1e-4, gt=0)
    seed: int = Field(0, ge=0)
    update_exponent: float = Field(0.5, gt=0, le=1)   # 0.5 = MM updates (monotone), 1.0 = heuristic


class CorpusConfig(_JsonConfig):
    n_clean: int = Field(20, ge=1)
    n_mixtures: int = Field(20, ge=0)
    snr_db: float = 0.0
    seed: int = Field(0, ge=0)
    sample_rate: int = Field(16000, gt=0)
    min_duration: float = Field(1.0, gt=0)
    max_duration: float = Field(2.0, gt=0)

    @model_validator(mode="after")
    def _check_durations(self):
        if self.min_duration > self.max_duration:
            raise ValueError(f"min_duration {self.min_duration} > max_duration {self.max_duration}")
        return self


class RunConfig(_JsonConfig):
    """
    Flat union of every command line knob. Keys mirror the flag names
    (`--latent-dim` -> `latent_dim`), so a JSON config file is just a dict of flags.
    """
    command: Optional[Literal[
        "make-corpus", "train-vae", "train-dict", "enhance", "enhance-nmf", "evaluate", "gain-robustness"
    ]] = None

    # paths
    corpus: Optional[str] = None
    model: Optional[str] = None
    dict_path: Optional[str] = None
    input: Optional[str] = None
    output: Optional[str] = None
    out_dir: Optional[str] = None
    enhanced_dir: Optional[str] = None
    reference: Optional[str] = None
    dump_trace: Optional[str] = None
    full_trace: bool = False
    checkpoint_dir: Optional[str] = None
    method: str = "mcem"
    plot: bool = False

    seed: int = Field(0, ge=0)

    # front-end
    win_ms: float = 64.0
    overlap: float = 0.75
    sample_rate: int = 16000

    # corpus
    n_clean: int = Field(20, ge=1)
    n_mixtures: int = Field(20, ge=0)
    snr_db: float = 0.0

    # speech model training
    latent_dim: int = Field(16, ge=1)
    hidden: int = Field(128, ge=1)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(128, ge=1)
    max_epochs: int = Field(500, ge=1)
    patience: int = Field(10, ge=1)
    validation_fraction: float = Field(0.2, gt=0, lt=1)

    # enhancement
    kb: int = Field(10, ge=1)
    eps2: float = Field(0.01, gt=0)
    mh_iters: int = Field(40, ge=1)
    burn_in: int = Field(30, ge=0)
    rec_mh_iters: int = Field(100, ge=1)
    rec_burn_in: int = Field(75, ge=0)
    tol: float = Field(1e-4, gt=0)
    max_iters: int = Field(200, ge=1)
    freeze_gains: bool = False
    unscale_output: bool = False

    # baseline
    rank: int = Field(64, ge=1)
    nmf_max_iters: int = Field(500, ge=1)

    # gain robustness
    scalings_db: List[float] = [-12.0, -6.0, 0.0, 6.0, 12.0, 18.0]

    def stft(self) -> StftConfig:
        return StftConfig(sample_rate=self.sample_rate, win_ms=self.win_ms, overlap=self.overlap)

    def training(self) -> TrainingConfig:
        return TrainingConfig(
            latent_dim=self.latent_dim,
            hidden_dim=self.hidden,
            lr=self.lr,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            validation_fraction=self.validation_fraction,
            seed=self.seed,
            checkpoint_dir=self.checkpoint_dir,
        )

    def enhancer(self) -> EnhancerConfig:
        return EnhancerConfig(
            mh_iters=self.mh_iters,
            burn_in=self.burn_in,
            rec_mh_iters=self.rec_mh_iters,
            rec_burn_in=self.rec_burn_in,
            proposal_var=self.eps2,
            n_noise_components=self.kb,
            tol=self.tol,
            max_iters=self.max_iters,
            seed=self.seed,
            freeze_gains=self.freeze_gains,
            unscale_output=self.unscale_output,
        )

    def baseline(self) -> BaselineConfig:
        return BaselineConfig(
            n_speech_components=self.rank,
            n_noise_components=self.kb,
            max_iters=self.nmf_max_iters,
            tol=self.tol,
            seed=self.seed,
        )

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(
            n_clean=self.n_clean,
            n_mixtures=self.n_mixtures,
            snr_db=self.snr_db,
            seed=self.seed,
            sample_rate=self.sample_rate,
        )
