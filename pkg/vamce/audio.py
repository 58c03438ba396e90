"""
WAV I/O and the STFT front-end: sine analysis/synthesis window, one-sided
spectrum, zero padding at the end of the signal up to a whole number of frames.
"""

import math
import os
from dataclasses import dataclass, replace

import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import windows

from vamce.errors import FormatError, ShapeError

PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"Waveform expects mono 1-D samples, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"Invalid sample_rate: {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """F x N complex STFT coefficients plus what is needed to invert them."""
    coefficients: np.ndarray
    win_length: int
    hop: int
    sample_rate: int = 16000
    n_samples: int = 0      # length of the analysed signal before padding

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients, dtype=np.complex128)
        if coefficients.ndim != 2:
            raise ShapeError(f"Spectrogram expects an F x N grid, got shape {coefficients.shape}")
        if coefficients.shape[0] != self.win_length // 2 + 1:
            raise ShapeError(
                f"Spectrogram has {coefficients.shape[0]} bins, window of {self.win_length} implies {self.win_length // 2 + 1}"
            )
        if not np.all(np.isfinite(coefficients)):
            raise ValueError("Spectrogram coefficients must be finite")
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def n_freqs(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[1]

    def power(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2

    def with_coefficients(self, coefficients: np.ndarray) -> "Spectrogram":
        return replace(self, coefficients=coefficients)


def read_wav(path: str, expected_rate: int = None) -> Waveform:
    if not os.path.exists(path):
        raise FileNotFoundError(f"No such wav file: {path}")
    try:
        info = sf.info(path)
    except RuntimeError as e:
        raise FormatError(f"Could not parse wav file {path}: {e}")

    if info.format != "WAV" or info.subtype != "PCM_16":
        raise FormatError(f"{path}: unsupported format {info.format}/{info.subtype}, expected 16-bit PCM WAV")
    if info.channels != 1:
        raise FormatError(f"{path}: mono required, file has {info.channels} channels")
    if expected_rate is not None and info.samplerate != expected_rate:
        raise FormatError(f"{path}: sample rate {info.samplerate} Hz, expected {expected_rate} Hz")

    data, sample_rate = sf.read(path, dtype="int16", always_2d=False)
    return Waveform(data.astype(np.float64) / PCM16_SCALE, int(sample_rate))


def write_wav(path: str, waveform: Waveform):
    # symmetric quantization, read_wav(write_wav(x)) is within 2**-16 of x inside [-1, 1)
    quantized = np.clip(np.round(waveform.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    sf.write(path, quantized, waveform.sample_rate, subtype="PCM_16", format="WAV")


def sine_window(win_length: int) -> np.ndarray:
    """w[t] = sin(pi (t + 0.5) / T)"""
    return windows.cosine(win_length, sym=True)


def n_frames_for(n_samples: int, win_length: int, hop: int) -> int:
    overlap = win_length - hop
    return max(1, math.ceil((n_samples - overlap) / hop))


def stft(waveform: Waveform, win_length: int = 1024, hop: int = None) -> Spectrogram:
    if win_length < 2 or win_length % 2 != 0:
        raise ValueError(f"Invalid win_length: {win_length}, must be even")
    if hop is None:
        hop = win_length // 4
    if not 1 <= hop <= win_length:
        raise ValueError(f"Invalid hop: {hop} for window {win_length}")
    n_samples = len(waveform)
    if n_samples == 0:
        raise ShapeError("Cannot compute the STFT of an empty signal")

    n_frames = n_frames_for(n_samples, win_length, hop)
    padded_length = (n_frames - 1) * hop + win_length
    x = np.zeros(padded_length)
    x[:n_samples] = waveform.samples

    window = sine_window(win_length)
    frames = sliding_window_view(x, win_length)[::hop][:n_frames] * window
    coefficients = np.fft.rfft(frames, n=win_length, axis=1).T
    return Spectrogram(coefficients, win_length, hop, waveform.sample_rate, n_samples)


def istft(spec: Spectrogram) -> Waveform:
    win_length, hop = spec.win_length, spec.hop
    n_frames = spec.n_frames
    expected = n_frames_for(spec.n_samples, win_length, hop) if spec.n_samples else n_frames
    if expected != n_frames:
        raise ShapeError(
            f"Spectrogram metadata inconsistent: {spec.n_samples} samples imply {expected} frames, got {n_frames}"
        )

    window = sine_window(win_length)
    # irfft drops the imaginary part of the DC and Nyquist bins, i.e. enforces conjugate symmetry
    frames = np.fft.irfft(spec.coefficients.T, n=win_length, axis=1) * window

    output = np.zeros((n_frames - 1) * hop + win_length)
    for n in range(n_frames):
        output[n * hop:n * hop + win_length] += frames[n]

    # sine analysis + synthesis windows overlap-add to a constant for hop = T/4 (or T/2)
    cola = np.sum(window ** 2) / hop
    output /= cola

    n_out = spec.n_samples or len(output)
    return Waveform(output[:n_out], spec.sample_rate)
