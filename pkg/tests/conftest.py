import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from vamce.config import CorpusConfig, StftConfig
from vamce.corpus import make_corpus
from vamce.models import SpeechVAE
from vamce.numerics import RngStream


@pytest.fixture
def stream():
    return RngStream(1234, 0, 0)


@pytest.fixture
def tiny_vae():
    """F=33 (64-sample window), L=4, H=16."""
    return SpeechVAE(33, 4, 16).glorot_init_(7)


@pytest.fixture
def small_stft():
    # 4 ms at 16 kHz: 64-sample window, hop 16, F = 33
    return StftConfig(win_ms=4.0)


def random_power(shape, seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.gamma(2.0, 0.5, size=shape))


def random_complex(shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp("corpus"))
    config = CorpusConfig(n_clean=3, n_mixtures=2, snr_db=0.0, seed=3, min_duration=0.25, max_duration=0.5)
    make_corpus(out_dir, config)
    return out_dir
