"""
End-to-end desk experiment on the synthetic corpus:
corpus -> VAE (L=8, H=64) and IS-NMF dictionary (K_s=8) -> enhance every test mixture
with both methods -> SI-SDR medians.

usage: python scripts/desk_experiment.py [work_dir]
"""

import os
import sys
import time

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from vamce.audio import read_wav
from vamce.config import BaselineConfig, CorpusConfig, EnhancerConfig, StftConfig, TrainingConfig
from vamce.corpus import make_corpus
from vamce.dataset import corpus_path, load_clean_frames, mixture_entries
from vamce.evaluation import EvalItem, evaluate_batch, print_medians
from vamce.inference import enhance_waveform, enhance_waveform_nmf
from vamce.nmf import train_dictionary
from vamce.train import train_vae
from vamce.utils.json_stuff import save_as_json
from vamce.utils.utils import plot_loss

#######################################################################################

seed = 0
work_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/desk_experiment"

stft_config = StftConfig()
corpus_config = CorpusConfig(n_clean=20, n_mixtures=20, snr_db=0.0, seed=seed)
training_config = TrainingConfig(latent_dim=8, hidden_dim=64, seed=seed)
enhancer_config = EnhancerConfig(seed=seed)
baseline_config = BaselineConfig(n_speech_components=8, seed=seed)

#######################################################################################


def run_desk_experiment(work_dir: str) -> dict:
    timings = {}
    corpus_dir = os.path.join(work_dir, "corpus")

    t0 = time.time()
    make_corpus(corpus_dir, corpus_config, verbose=True)
    frames = load_clean_frames(corpus_dir, stft_config)
    timings["corpus"] = time.time() - t0

    t0 = time.time()
    vae, log = train_vae(training_config, frames, verbose=True)
    timings["train_vae"] = time.time() - t0
    plot_loss({"train_loss": log.train_loss, "val_loss": log.val_loss}, save_path=os.path.join(work_dir, "vae_losses.png"))

    t0 = time.time()
    dictionary, _ = train_dictionary(frames.frames.T, baseline_config.n_speech_components, baseline_config)
    timings["train_dict"] = time.time() - t0

    items = []
    t0 = time.time()
    for row in mixture_entries(corpus_dir).itertuples():
        reference = read_wav(corpus_path(corpus_dir, row.clean_path))
        mixture = read_wav(corpus_path(corpus_dir, row.mixture_path))
        mcem = enhance_waveform(mixture, vae, enhancer_config, stft_config)
        nmf = enhance_waveform_nmf(mixture, dictionary, baseline_config, stft_config)
        items.append(EvalItem(row.id, "mcem", reference, mcem.waveform, mixture))
        items.append(EvalItem(row.id, "isnmf", reference, nmf.waveform, mixture))
        print(f"--- {row.id}: {mcem.mcem.n_iters} EM iterations", flush=True)
    timings["enhance"] = time.time() - t0

    report = evaluate_batch(items)
    report.to_csv(os.path.join(work_dir, "report.csv"))
    print_medians(report)

    summary = {"medians": report.medians(), "seconds": timings, "best_epoch": log.best_epoch}
    save_as_json(summary, os.path.join(work_dir, "summary.json"))
    return summary


if __name__ == "__main__":
    os.makedirs(work_dir, exist_ok=True)
    summary = run_desk_experiment(work_dir)
    medians = summary["medians"]
    print("------------------------------------------")
    print(f"MCEM  median improvement: {medians['mcem']['improvement_db']:.2f} dB")
    print(f"IS-NMF median improvement: {medians['isnmf']['improvement_db']:.2f} dB")
    print(f"Total time: {sum(summary['seconds'].values()):.0f}s")
