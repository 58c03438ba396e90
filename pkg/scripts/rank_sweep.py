"""
Compare both enhancers while sweeping the speech model size: L = K_s over a grid.
One CSV row per (method, rank) with the median SI-SDR improvement.

usage: python scripts/rank_sweep.py [work_dir]
"""

import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from vamce.audio import read_wav
from vamce.config import BaselineConfig, CorpusConfig, EnhancerConfig, StftConfig, TrainingConfig
from vamce.corpus import make_corpus
from vamce.dataset import corpus_path, load_clean_frames, mixture_entries
from vamce.evaluation import EvalItem, evaluate_batch
from vamce.inference import enhance_waveform, enhance_waveform_nmf
from vamce.nmf import train_dictionary
from vamce.train import train_vae
from vamce.utils.io import write_csv
from vamce.utils.utils import plot_curve

#######################################################################################

seed = 0
ranks = [8, 16, 32]        # full grid: [8, 16, 32, 64, 128]
hidden_dim = 64
work_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/rank_sweep"

stft_config = StftConfig()
corpus_config = CorpusConfig(n_clean=20, n_mixtures=10, snr_db=0.0, seed=seed)
enhancer_config = EnhancerConfig(seed=seed)

#######################################################################################

if __name__ == "__main__":
    corpus_dir = os.path.join(work_dir, "corpus")
    make_corpus(corpus_dir, corpus_config, verbose=True)
    frames = load_clean_frames(corpus_dir, stft_config)
    entries = mixture_entries(corpus_dir)
    signals = [
        (row.id, read_wav(corpus_path(corpus_dir, row.clean_path)), read_wav(corpus_path(corpus_dir, row.mixture_path)))
        for row in entries.itertuples()
    ]

    rows = []
    for rank in ranks:
        print(f"\n# Sweep : L = K_s = {rank}")
        vae, _ = train_vae(TrainingConfig(latent_dim=rank, hidden_dim=hidden_dim, seed=seed), frames)
        baseline_config = BaselineConfig(n_speech_components=rank, seed=seed)
        dictionary, _ = train_dictionary(frames.frames.T, rank, baseline_config)

        items = []
        for item_id, reference, mixture in signals:
            items.append(EvalItem(item_id, "mcem", reference, enhance_waveform(mixture, vae, enhancer_config, stft_config).waveform, mixture))
            items.append(EvalItem(item_id, "isnmf", reference, enhance_waveform_nmf(mixture, dictionary, baseline_config, stft_config).waveform, mixture))

        for method, stats in evaluate_batch(items).medians().items():
            rows.append({"method": method, "rank": rank, "median_improvement_db": stats["improvement_db"]})
            print(f"--- {method}: {stats['improvement_db']:.2f} dB")

    write_csv(rows, os.path.join(work_dir, "rank_sweep.csv"), ["method", "rank", "median_improvement_db"])
    plot_curve(
        {m: {r["rank"]: r["median_improvement_db"] for r in rows if r["method"] == m} for m in ["mcem", "isnmf"]},
        xlabel="L = K_s", ylabel="median SI-SDR improvement (dB)", title="Rank sweep",
        save_path=os.path.join(work_dir, "rank_sweep.png"),
    )
    print("Sweep done :)")
