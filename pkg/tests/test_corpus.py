import filecmp
import os

import numpy as np
import pytest

from vamce.audio import read_wav
from vamce.config import CorpusConfig
from vamce.corpus import make_corpus, mix_at_snr, synth_noise, synth_speech
from vamce.dataset import MANIFEST_COLUMNS, load_manifest, mixture_entries
from vamce.numerics import RngStream


def _energy_ratio_db(speech, noise):
    return 10.0 * np.log10(np.sum(speech ** 2) / np.sum(noise ** 2))


@pytest.mark.parametrize("snr_db", [-5.0, 0.0, 5.0, 10.0])
def test_mix_at_snr(snr_db):
    speech = synth_speech(8000, 16000, RngStream(0))
    noise = synth_noise(8000, 16000, RngStream(1))
    s, n, x = mix_at_snr(speech, noise, snr_db, loudness=0.5)
    assert np.isclose(_energy_ratio_db(s, n), snr_db, atol=1e-9)
    assert np.allclose(x, s + n)
    assert np.isclose(max(np.abs(s).max(), np.abs(n).max(), np.abs(x).max()), 0.5 * 0.95)


def test_mix_at_snr_rejects_silence():
    with pytest.raises(ValueError):
        mix_at_snr(np.zeros(10), np.ones(10), 0.0)


def test_synthesis_is_seeded():
    assert np.array_equal(synth_speech(4000, 16000, RngStream(5)), synth_speech(4000, 16000, RngStream(5)))
    assert not np.array_equal(synth_noise(4000, 16000, RngStream(5)), synth_noise(4000, 16000, RngStream(6)))


def test_corpus_layout_and_snr(small_corpus):
    manifest = load_manifest(small_corpus)
    assert list(manifest.columns) == MANIFEST_COLUMNS
    assert list(manifest["split"]) == ["train"] * 3 + ["test"] * 2

    mixtures = mixture_entries(small_corpus)
    assert list(mixtures["id"]) == ["test_000", "test_001"]
    for _, row in mixtures.iterrows():
        clean = read_wav(os.path.join(small_corpus, row["clean_path"])).samples
        noise = read_wav(os.path.join(small_corpus, row["noise_path"])).samples
        mixture = read_wav(os.path.join(small_corpus, row["mixture_path"])).samples
        assert len(clean) == len(noise) == len(mixture)
        assert 0.25 * 16000 <= len(clean) <= 0.5 * 16000
        assert abs(_energy_ratio_db(clean, noise) - 0.0) <= 0.1
        assert float(row["snr_db"]) == 0.0
        assert np.max(np.abs(mixture)) <= 0.95 + 2.0 ** -15


def test_corpus_is_reproducible(tmp_path):
    config = CorpusConfig(n_clean=2, n_mixtures=1, seed=7, min_duration=0.2, max_duration=0.3)
    make_corpus(str(tmp_path / "a"), config)
    make_corpus(str(tmp_path / "b"), config)
    for sub, name in [("clean", "train_000.wav"), ("clean", "train_001.wav"), ("clean", "test_000.wav"),
                      ("noise", "test_000.wav"), ("mixture", "test_000.wav"), (".", "manifest.csv")]:
        assert filecmp.cmp(str(tmp_path / "a" / sub / name), str(tmp_path / "b" / sub / name), shallow=False)


def test_corpus_without_mixtures(tmp_path):
    manifest = make_corpus(str(tmp_path), CorpusConfig(n_clean=1, n_mixtures=0, min_duration=0.2, max_duration=0.2))
    assert len(manifest) == 1
    assert len(mixture_entries(str(tmp_path))) == 0
