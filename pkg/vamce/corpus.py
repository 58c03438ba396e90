"""
Synthetic speech / noise corpus for desk-scale experiments.

"Speech" is a sum of harmonics of a drifting pitch contour, shaped by moving
formant-like resonances and a syllabic amplitude envelope. "Noise" is stationary
colored noise: a random spectral tilt (pink-ish) and an optional band-pass.

Layout written by `make_corpus`:

    out_dir/clean/train_000.wav ...
    out_dir/clean/test_000.wav, out_dir/noise/test_000.wav, out_dir/mixture/test_000.wav ...
    out_dir/manifest.csv   (id, split, clean_path, noise_path, mixture_path, snr_db)
"""

import os
from typing import Tuple

import numpy as np
import pandas as pd
from scipy import signal
from tqdm import tqdm

from vamce.audio import Waveform, write_wav
from vamce.config import CorpusConfig
from vamce.dataset import MANIFEST_COLUMNS, MANIFEST_NAME
from vamce.numerics import NS_CORPUS, RngStream
from vamce.utils.io import write_csv

# stream id offsets inside the corpus namespace
_TRAIN_OFFSET = 0
_TEST_SPEECH_OFFSET = 100_000
_TEST_NOISE_OFFSET = 200_000

PEAK_LIMIT = 0.95


def _duration_samples(config: CorpusConfig, rng: np.random.Generator) -> int:
    duration = rng.uniform(config.min_duration, config.max_duration)
    return int(round(duration * config.sample_rate))


def synth_speech(n_samples: int, sample_rate: int, stream: RngStream) -> np.ndarray:
    rng = stream.generator
    t = np.arange(n_samples) / sample_rate

    # pitch: base value, slow vibrato-like modulation and a linear drift
    f0_base = rng.uniform(90.0, 250.0)
    f0 = f0_base * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi)))
    f0 *= 1.0 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-9)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    # syllables: formant targets and gains per syllable, interpolated over time
    syllable_rate = rng.uniform(3.0, 5.0)
    n_syllables = int(np.ceil(t[-1] * syllable_rate)) + 2
    knots = np.arange(n_syllables) / syllable_rate
    formants = np.stack([
        np.interp(t, knots, rng.uniform(lo, hi, n_syllables))
        for lo, hi in [(300.0, 900.0), (900.0, 2400.0), (2000.0, 3500.0)]
    ])                                                # 3 x T
    bandwidths = np.array([90.0, 140.0, 220.0])[:, None]

    syllable_phase = (t * syllable_rate) % 1.0
    envelope = 0.05 + 0.95 * np.sin(np.pi * syllable_phase) ** 2
    envelope *= np.interp(t, knots, rng.uniform(0.3, 1.0, n_syllables))

    n_harmonics = int(0.45 * sample_rate / f0_base)
    x = np.zeros(n_samples)
    for k in range(1, n_harmonics + 1):
        freq = k * f0
        resonance = np.exp(-0.5 * ((freq[None, :] - formants) / bandwidths) ** 2).sum(0)
        amplitude = (0.05 + resonance) / k
        amplitude[freq >= 0.48 * sample_rate] = 0.0
        x += amplitude * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    x *= envelope
    x += 1e-3 * np.std(x) * rng.standard_normal(n_samples)   # breath floor, no exactly silent bins
    return x


def synth_noise(n_samples: int, sample_rate: int, stream: RngStream) -> np.ndarray:
    rng = stream.generator
    white = rng.standard_normal(n_samples)

    # random spectral tilt |f|^(-alpha/2) applied in the frequency domain
    alpha = rng.uniform(0.5, 1.5)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    tilt = np.ones_like(freqs)
    tilt[1:] = (freqs[1:] / freqs[1]) ** (-alpha / 2.0)
    x = np.fft.irfft(spectrum * tilt, n=n_samples)

    if rng.uniform() < 0.5:
        low = rng.uniform(100.0, 1500.0)
        high = min(low * rng.uniform(2.0, 8.0), 0.45 * sample_rate)
        sos = signal.butter(4, [low, high], btype="band", fs=sample_rate, output="sos")
        x = signal.sosfilt(sos, x)
    return x


def mix_at_snr(
    speech: np.ndarray, noise: np.ndarray, snr_db: float, loudness: float = 1.0
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Scale the noise so that 10 log10(|s|^2 / |n|^2) == snr_db, then rescale all three
    signals together so that the largest peak is loudness * 0.95.
    """
    speech_energy = np.sum(speech ** 2)
    noise_energy = np.sum(noise ** 2)
    if speech_energy == 0 or noise_energy == 0:
        raise ValueError("Cannot mix an all-zero signal at a given SNR")
    noise = noise * np.sqrt(speech_energy / (noise_energy * 10.0 ** (snr_db / 10.0)))
    mixture = speech + noise
    peak = max(np.max(np.abs(mixture)), np.max(np.abs(speech)), np.max(np.abs(noise)))
    scale = loudness * PEAK_LIMIT / peak
    return speech * scale, noise * scale, mixture * scale


def _normalize(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # loudness varies across files: peak between 0.1 and 0.95
    return x / np.max(np.abs(x)) * rng.uniform(0.1, PEAK_LIMIT)


def make_corpus(out_dir: str, config: CorpusConfig, verbose: bool = False) -> pd.DataFrame:
    sr = config.sample_rate
    rows = []
    os.makedirs(out_dir, exist_ok=True)

    if verbose:
        print(f"# Corpus : {config.n_clean} clean training files, {config.n_mixtures} test mixtures at {config.snr_db} dB")

    for i in tqdm(range(config.n_clean), disable=not verbose, desc="clean"):
        stream = RngStream(config.seed, _TRAIN_OFFSET + i, NS_CORPUS)
        n_samples = _duration_samples(config, stream.generator)
        speech = _normalize(synth_speech(n_samples, sr, stream), stream.generator)
        clean_path = os.path.join("clean", f"train_{i:03d}.wav")
        write_wav(os.path.join(out_dir, clean_path), Waveform(speech, sr))
        rows.append({
            "id": f"train_{i:03d}", "split": "train", "clean_path": clean_path,
            "noise_path": "", "mixture_path": "", "snr_db": "",
        })

    for i in tqdm(range(config.n_mixtures), disable=not verbose, desc="mixtures"):
        speech_stream = RngStream(config.seed, _TEST_SPEECH_OFFSET + i, NS_CORPUS)
        noise_stream = RngStream(config.seed, _TEST_NOISE_OFFSET + i, NS_CORPUS)
        n_samples = _duration_samples(config, speech_stream.generator)
        speech = synth_speech(n_samples, sr, speech_stream)
        noise = synth_noise(n_samples, sr, noise_stream)

        speech, noise, mixture = mix_at_snr(
            speech, noise, config.snr_db, loudness=noise_stream.generator.uniform(0.3, 1.0)
        )
        item_id = f"test_{i:03d}"
        paths = {
            "clean_path": os.path.join("clean", f"{item_id}.wav"),
            "noise_path": os.path.join("noise", f"{item_id}.wav"),
            "mixture_path": os.path.join("mixture", f"{item_id}.wav"),
        }
        for key, samples in [("clean_path", speech), ("noise_path", noise), ("mixture_path", mixture)]:
            write_wav(os.path.join(out_dir, paths[key]), Waveform(samples, sr))
        rows.append({"id": item_id, "split": "test", **paths, "snr_db": config.snr_db})

    manifest = write_csv(rows, os.path.join(out_dir, MANIFEST_NAME), MANIFEST_COLUMNS)
    if verbose:
        print(f"---> Corpus written to {out_dir} ({len(rows)} manifest entries)", flush=True)
    return manifest
