from dataclasses import dataclass
from typing import Optional

import torch

from vamce.audio import Spectrogram, Waveform, istft, stft
from vamce.config import BaselineConfig, EnhancerConfig, StftConfig
from vamce.mcem import McemResult, enhance_spectrogram
from vamce.models import SpeechVAE
from vamce.nmf import NmfResult, SpeechDictionary, enhance_nmf
from vamce.utils.io import write_csv

TRACE_COLUMNS = ["iter", "q_tilde", "mean_accept"]
FULL_TRACE_COLUMNS = ["iter", "q_tilde", "q_estep", "q_after_h", "q_after_w", "mean_accept", "mean_gain", "seconds"]


@dataclass
class Enhancement:
    waveform: Waveform
    spectrogram: Spectrogram
    mask: torch.Tensor
    mcem: Optional[McemResult] = None
    nmf: Optional[NmfResult] = None


def _analyse(mixture: Waveform, stft_config: StftConfig) -> Spectrogram:
    if mixture.sample_rate != stft_config.sample_rate:
        raise ValueError(f"Mixture sampled at {mixture.sample_rate} Hz, front-end expects {stft_config.sample_rate} Hz")
    return stft(mixture, stft_config.win_length, stft_config.hop)


def enhance_waveform(
    mixture: Waveform,
    vae: SpeechVAE,
    config: EnhancerConfig,
    stft_config: StftConfig,
    verbose: bool = False,
) -> Enhancement:
    spec = _analyse(mixture, stft_config)
    vae.check_n_freqs(spec.n_freqs, "mixture spectrogram")
    estimate, mask, result = enhance_spectrogram(spec.coefficients, vae, config, verbose=verbose)
    enhanced = spec.with_coefficients(estimate)
    return Enhancement(istft(enhanced), enhanced, mask, mcem=result)


def enhance_waveform_nmf(
    mixture: Waveform,
    dictionary: SpeechDictionary,
    config: BaselineConfig,
    stft_config: StftConfig,
    verbose: bool = False,
) -> Enhancement:
    spec = _analyse(mixture, stft_config)
    result = enhance_nmf(spec.coefficients, dictionary, config, verbose=verbose)
    enhanced = spec.with_coefficients(result.estimate)
    return Enhancement(istft(enhanced), enhanced, result.speech_mask, nmf=result)


def write_trace(result: McemResult, path: str, full: bool = False):
    """Per-iteration MCEM trace as CSV (iter, q_tilde, mean_accept), optionally with every column."""
    columns = FULL_TRACE_COLUMNS if full else TRACE_COLUMNS
    return write_csv(result.trace, path, columns)
