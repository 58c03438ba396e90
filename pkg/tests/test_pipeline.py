"""Desk-scale regression run of both enhancers on the synthetic corpus (slow)."""

import numpy as np
import pytest

from vamce.audio import read_wav
from vamce.config import BaselineConfig, CorpusConfig, EnhancerConfig, StftConfig, TrainingConfig
from vamce.corpus import make_corpus
from vamce.dataset import corpus_path, load_clean_frames, mixture_entries
from vamce.evaluation import EvalItem, evaluate_batch, si_sdr
from vamce.inference import enhance_waveform, enhance_waveform_nmf
from vamce.nmf import train_dictionary
from vamce.train import train_vae


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    corpus_dir = str(tmp_path_factory.mktemp("desk"))
    make_corpus(corpus_dir, CorpusConfig(n_clean=20, n_mixtures=20, snr_db=0.0, seed=0))
    frames = load_clean_frames(corpus_dir, StftConfig())
    vae, _ = train_vae(TrainingConfig(latent_dim=8, hidden_dim=64, seed=0), frames)
    baseline = BaselineConfig(n_speech_components=8, seed=0)
    dictionary, _ = train_dictionary(frames.frames.T, 8, baseline)
    return corpus_dir, vae, dictionary, baseline


@pytest.mark.slow
def test_mcem_improves_and_keeps_up_with_the_baseline(desk):
    corpus_dir, vae, dictionary, baseline = desk
    stft_config, enhancer = StftConfig(), EnhancerConfig(seed=0)
    items = []
    for row in mixture_entries(corpus_dir).itertuples():
        reference = read_wav(corpus_path(corpus_dir, row.clean_path))
        mixture = read_wav(corpus_path(corpus_dir, row.mixture_path))
        items.append(EvalItem(row.id, "mcem", reference, enhance_waveform(mixture, vae, enhancer, stft_config).waveform, mixture))
        items.append(EvalItem(row.id, "isnmf", reference, enhance_waveform_nmf(mixture, dictionary, baseline, stft_config).waveform, mixture))
    medians = evaluate_batch(items).medians()
    assert medians["mcem"]["improvement_db"] > 0.0
    assert medians["mcem"]["improvement_db"] >= medians["isnmf"]["improvement_db"] - 1.0


@pytest.mark.slow
def test_free_gains_are_robust_to_input_level(desk):
    corpus_dir, vae, _, _ = desk
    row = next(mixture_entries(corpus_dir).itertuples())
    reference = read_wav(corpus_path(corpus_dir, row.clean_path))
    mixture = read_wav(corpus_path(corpus_dir, row.mixture_path))
    values = []
    for scaling_db in [-12.0, -6.0, 0.0, 6.0, 12.0, 18.0]:
        gain = 10.0 ** (scaling_db / 20.0)
        result = enhance_waveform(mixture.scaled(gain), vae, EnhancerConfig(seed=0), StftConfig())
        values.append(si_sdr(reference.scaled(gain), result.waveform))
    assert np.max(values) - np.min(values) <= 1.0
