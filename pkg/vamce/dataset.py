import os
from dataclasses import dataclass
from typing import Iterator, List, Tuple

import numpy as np
import pandas as pd
import torch

from vamce.audio import Waveform, read_wav, stft
from vamce.config import StftConfig
from vamce.numerics import DTYPE, RngStream
from vamce.utils.io import read_csv

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ["id", "split", "clean_path", "noise_path", "mixture_path", "snr_db"]


@dataclass
class CleanFrameSet:
    """N_tr independent clean-speech power frames, stored row-wise as an (N_tr, F) tensor."""
    frames: torch.Tensor

    def __post_init__(self):
        frames = torch.as_tensor(self.frames, dtype=DTYPE)
        if frames.dim() != 2:
            raise ValueError(f"CleanFrameSet expects an (N, F) array, got shape {tuple(frames.shape)}")
        if not torch.isfinite(frames).all():
            raise ValueError("CleanFrameSet frames must be finite")
        if bool((frames < 0).any()):
            raise ValueError("CleanFrameSet frames must be >= 0")
        self.frames = frames

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def n_freqs(self) -> int:
        return self.frames.shape[1]

    def split(self, validation_fraction: float, stream: RngStream) -> Tuple["CleanFrameSet", "CleanFrameSet"]:
        """Random (train, validation) partition; the validation part holds round(fraction * N) frames, at least one."""
        n = len(self)
        n_val = min(max(1, int(round(validation_fraction * n))), n - 1)
        order = torch.from_numpy(stream.permutation(n))
        return CleanFrameSet(self.frames[order[n_val:]]), CleanFrameSet(self.frames[order[:n_val]])

    def batches(self, batch_size: int, stream: RngStream) -> Iterator[torch.Tensor]:
        order = torch.from_numpy(stream.permutation(len(self)))
        for start in range(0, len(self), batch_size):
            yield self.frames[order[start:start + batch_size]]


def frames_from_waveforms(waveforms: List[Waveform], stft_config: StftConfig) -> CleanFrameSet:
    frames = []
    for waveform in waveforms:
        if waveform.sample_rate != stft_config.sample_rate:
            raise ValueError(
                f"Waveform sampled at {waveform.sample_rate} Hz, front-end expects {stft_config.sample_rate} Hz"
            )
        spec = stft(waveform, stft_config.win_length, stft_config.hop)
        frames.append(spec.power().T)
    if not frames:
        raise ValueError("No clean signals to build a frame set from")
    return CleanFrameSet(torch.from_numpy(np.concatenate(frames, axis=0)))


def load_manifest(corpus_dir: str) -> pd.DataFrame:
    manifest = read_csv(os.path.join(corpus_dir, MANIFEST_NAME), required_columns=MANIFEST_COLUMNS)
    for col in ["clean_path", "noise_path", "mixture_path"]:
        manifest[col] = manifest[col].fillna("").astype(str)
    manifest["id"] = manifest["id"].astype(str)
    return manifest


def corpus_path(corpus_dir: str, relative_path: str) -> str:
    return os.path.join(corpus_dir, relative_path)


def load_clean_frames(corpus_dir: str, stft_config: StftConfig, split: str = "train") -> CleanFrameSet:
    manifest = load_manifest(corpus_dir)
    rows = manifest[manifest["split"] == split]
    if len(rows) == 0:
        raise ValueError(f"Corpus {corpus_dir} has no '{split}' entries")
    waveforms = [
        read_wav(corpus_path(corpus_dir, path), expected_rate=stft_config.sample_rate)
        for path in rows["clean_path"]
    ]
    frame_set = frames_from_waveforms(waveforms, stft_config)
    print(f"--- Loaded {len(frame_set)} clean frames (F = {frame_set.n_freqs}) from {len(rows)} '{split}' files")
    return frame_set


def mixture_entries(corpus_dir: str) -> pd.DataFrame:
    """Manifest rows that carry a noisy mixture, in manifest order."""
    manifest = load_manifest(corpus_dir)
    return manifest[(manifest["split"] == "test") & (manifest["mixture_path"] != "")].reset_index(drop=True)
