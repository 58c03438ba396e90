"""
Command line surface:

    make-corpus | train-vae | train-dict | enhance | enhance-nmf | evaluate | gain-robustness

Every flag maps onto a `RunConfig` field. Values are merged as
RunConfig defaults < `--config file.json` < flags given on the command line.
"""

import argparse
import os
import sys
import time
from typing import Callable, Dict, List, Optional, Tuple

from vamce.audio import read_wav, write_wav
from vamce.config import RunConfig
from vamce.corpus import make_corpus
from vamce.dataset import corpus_path, load_clean_frames, mixture_entries
from vamce.errors import EXIT_OK, EXIT_USAGE, FormatError, ShapeError, exit_code_for
from vamce.evaluation import EvalItem, evaluate_batch, print_medians, si_sdr
from vamce.inference import enhance_waveform, enhance_waveform_nmf, write_trace
from vamce.models import load_model, save_model
from vamce.nmf import load_dictionary, save_dictionary, train_dictionary
from vamce.train import train_vae
from vamce.utils.io import write_csv
from vamce.utils.json_stuff import load_json
from vamce.utils.utils import plot_curve, plot_loss

GAIN_COLUMNS = ["scaling_db", "sdr_free_db", "sdr_frozen_db"]
DEFAULTS = {name: info.default for name, info in RunConfig.model_fields.items()}


def _add(parser: argparse.ArgumentParser, flag: str, dest: str, help: str, **kwargs):
    default = DEFAULTS.get(dest)
    if default is not None and kwargs.get("action") != "store_true":
        help = f"{help} (default: {default})"
    parser.add_argument(flag, dest=dest, default=argparse.SUPPRESS, help=help, **kwargs)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", dest="config", default=None, help="flat JSON file of flag values, overridden by explicit flags")
    _add(p, "--seed", "seed", "master seed", type=int)
    _add(p, "--sample-rate", "sample_rate", "sample rate in Hz", type=int)
    _add(p, "--win-ms", "win_ms", "STFT sine window length in ms", type=float)
    _add(p, "--overlap", "overlap", "STFT overlap fraction", type=float)


def _add_enhancer(p: argparse.ArgumentParser):
    _add(p, "--kb", "kb", "noise NMF rank K_b", type=int)
    _add(p, "--eps2", "eps2", "random-walk proposal variance", type=float)
    _add(p, "--mh-iters", "mh_iters", "MH iterations per E-step", type=int)
    _add(p, "--burn-in", "burn_in", "discarded MH iterations per E-step", type=int)
    _add(p, "--rec-mh-iters", "rec_mh_iters", "MH iterations for reconstruction", type=int)
    _add(p, "--rec-burn-in", "rec_burn_in", "discarded MH iterations for reconstruction", type=int)
    _add(p, "--tol", "tol", "relative Q~ change stopping tolerance", type=float)
    _add(p, "--max-iters", "max_iters", "maximum EM iterations", type=int)
    _add(p, "--unscale-output", "unscale_output", "divide the estimate by sqrt(g) per frame", action="store_true")


def _add_io(p: argparse.ArgumentParser):
    _add(p, "--in", "input", "noisy input wav")
    _add(p, "--out", "output", "enhanced output wav")
    _add(p, "--corpus", "corpus", "corpus directory, enhances every test mixture of its manifest")
    _add(p, "--out-dir", "out_dir", "output directory for corpus mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vamce", description="VAE + Monte-Carlo EM speech enhancement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="generate a synthetic speech / noise corpus")
    _add_common(p)
    _add(p, "--out-dir", "out_dir", "corpus output directory")
    _add(p, "--n-clean", "n_clean", "number of clean training files", type=int)
    _add(p, "--n-mixtures", "n_mixtures", "number of noisy test mixtures", type=int)
    _add(p, "--snr-db", "snr_db", "mixture SNR in dB", type=float)

    p = sub.add_parser("train-vae", help="train the speech VAE on the clean training files")
    _add_common(p)
    _add(p, "--corpus", "corpus", "corpus directory")
    _add(p, "--out", "output", "model file (JSON)")
    _add(p, "--latent-dim", "latent_dim", "latent dimension L", type=int)
    _add(p, "--hidden", "hidden", "hidden layer width", type=int)
    _add(p, "--lr", "lr", "Adam step size", type=float)
    _add(p, "--batch-size", "batch_size", "minibatch size", type=int)
    _add(p, "--max-epochs", "max_epochs", "maximum epochs", type=int)
    _add(p, "--patience", "patience", "early stopping patience in epochs", type=int)
    _add(p, "--validation-fraction", "validation_fraction", "fraction of frames held out", type=float)
    _add(p, "--checkpoint-dir", "checkpoint_dir", "write a model file at every validation improvement")
    _add(p, "--plot", "plot", "save a loss curve next to the model", action="store_true")

    p = sub.add_parser("train-dict", help="train the IS-NMF speech dictionary")
    _add_common(p)
    _add(p, "--corpus", "corpus", "corpus directory")
    _add(p, "--out", "output", "dictionary file (JSON)")
    _add(p, "--rank", "rank", "dictionary rank K_s", type=int)
    _add(p, "--nmf-max-iters", "nmf_max_iters", "maximum NMF iterations", type=int)
    _add(p, "--tol", "tol", "relative cost improvement stopping tolerance", type=float)

    p = sub.add_parser("enhance", help="enhance with the VAE speech model (MCEM)")
    _add_common(p)
    _add(p, "--model", "model", "trained VAE model file")
    _add_io(p)
    _add_enhancer(p)
    _add(p, "--freeze-gains", "freeze_gains", "pin the frame gains to 1", action="store_true")
    _add(p, "--dump-trace", "dump_trace", "per-iteration trace CSV (a directory in corpus mode)")
    _add(p, "--full-trace", "full_trace", "also write the sub-update Q~ values, mean gain and seconds per iteration", action="store_true")
    _add(p, "--plot", "plot", "save the Q~ trace plot next to the output", action="store_true")

    p = sub.add_parser("enhance-nmf", help="enhance with the IS-NMF baseline")
    _add_common(p)
    _add(p, "--dict", "dict_path", "trained speech dictionary file")
    _add_io(p)
    _add(p, "--kb", "kb", "noise NMF rank K_b", type=int)
    _add(p, "--nmf-max-iters", "nmf_max_iters", "maximum NMF iterations", type=int)
    _add(p, "--tol", "tol", "relative cost improvement stopping tolerance", type=float)

    p = sub.add_parser("evaluate", help="SI-SDR report of an enhanced corpus")
    _add_common(p)
    _add(p, "--corpus", "corpus", "corpus directory")
    _add(p, "--enhanced-dir", "enhanced_dir", "directory of enhanced <id>.wav files")
    _add(p, "--method", "method", "method name written to the report")
    _add(p, "--out", "output", "report CSV")

    p = sub.add_parser("gain-robustness", help="SI-SDR versus input scaling, gains free vs frozen")
    _add_common(p)
    _add(p, "--model", "model", "trained VAE model file")
    _add(p, "--in", "input", "noisy mixture wav")
    _add(p, "--reference", "reference", "clean reference wav")
    _add(p, "--out", "output", "result CSV")
    _add(p, "--scalings-db", "scalings_db", "input scalings in dB", type=float, nargs="+")
    _add_enhancer(p)
    _add(p, "--plot", "plot", "save the SDR vs scaling plot next to the CSV", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            loaded = load_json(args.config)
        except FormatError as e:
            # a broken config is a usage error, not an I/O one
            raise ValueError(str(e)) from None
        if not isinstance(loaded, dict):
            raise ValueError(f"{args.config}: expected a flat JSON object")
        values.update(loaded)
    values.update({k: v for k, v in vars(args).items() if k not in ("config", "command")})
    values["command"] = args.command
    return RunConfig(**values)


def _require(cfg: RunConfig, *fields: str):
    flag_names = {"input": "--in", "output": "--out", "dict_path": "--dict"}
    missing = [flag_names.get(f, f"--{f.replace('_', '-')}") for f in fields if getattr(cfg, f) in (None, "")]
    if missing:
        raise ValueError(f"{cfg.command}: missing required option(s) {', '.join(missing)}")


def _stem(path: str) -> str:
    return os.path.splitext(path)[0]


def _jobs(cfg: RunConfig) -> List[Tuple[str, str, str]]:
    """(id, input wav, output wav) for single-file or corpus mode."""
    if cfg.corpus:
        _require(cfg, "out_dir")
        entries = mixture_entries(cfg.corpus)
        if len(entries) == 0:
            raise ValueError(f"Corpus {cfg.corpus} has no test mixtures")
        return [
            (row.id, corpus_path(cfg.corpus, row.mixture_path), os.path.join(cfg.out_dir, f"{row.id}.wav"))
            for row in entries.itertuples()
        ]
    _require(cfg, "input", "output")
    return [(_stem(os.path.basename(cfg.input)), cfg.input, cfg.output)]


def cmd_make_corpus(cfg: RunConfig) -> int:
    _require(cfg, "out_dir")
    make_corpus(cfg.out_dir, cfg.corpus_config(), verbose=True)
    return EXIT_OK


def cmd_train_vae(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "output")
    frames = load_clean_frames(cfg.corpus, cfg.stft())
    training = cfg.training()
    vae, log = train_vae(training, frames, verbose=True)
    save_model(vae, cfg.output)
    log.save(f"{_stem(cfg.output)}_training_log.json", training)
    if cfg.plot:
        plot_loss({"train_loss": log.train_loss, "val_loss": log.val_loss}, save_path=f"{_stem(cfg.output)}_losses.png")
    print(f"---> Saved model to {cfg.output} (best epoch {log.best_epoch}, val loss {log.best_val_loss:.4f})")
    return EXIT_OK


def cmd_train_dict(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "output")
    frames = load_clean_frames(cfg.corpus, cfg.stft())
    baseline = cfg.baseline()
    dictionary, costs = train_dictionary(frames.frames.T, baseline.n_speech_components, baseline, verbose=True)
    save_dictionary(dictionary, cfg.output, meta={"seed": cfg.seed, "n_iters": len(costs), "final_cost": costs[-1]})
    print(f"---> Saved dictionary to {cfg.output}")
    return EXIT_OK


def cmd_enhance(cfg: RunConfig) -> int:
    _require(cfg, "model")
    stft_config = cfg.stft()
    enhancer = cfg.enhancer()
    vae = load_model(cfg.model)
    vae.check_n_freqs(stft_config.n_freqs, "the STFT front-end")
    jobs = _jobs(cfg)

    for item_id, in_path, out_path in jobs:
        start = time.time()
        mixture = read_wav(in_path, expected_rate=stft_config.sample_rate)
        result = enhance_waveform(mixture, vae, enhancer, stft_config, verbose=True)
        write_wav(out_path, result.waveform)
        if cfg.dump_trace:
            trace_path = os.path.join(cfg.dump_trace, f"{item_id}_trace.csv") if cfg.corpus else cfg.dump_trace
            write_trace(result.mcem, trace_path, full=cfg.full_trace)
        if cfg.plot:
            plot_loss({"q_tilde": result.mcem.q_tilde_trace}, save_path=f"{_stem(out_path)}_qtilde.png")
        print(f"---> {item_id}: wrote {out_path} in {time.time() - start:.1f}s", flush=True)
    return EXIT_OK


def cmd_enhance_nmf(cfg: RunConfig) -> int:
    _require(cfg, "dict_path")
    dictionary = load_dictionary(cfg.dict_path)
    stft_config = cfg.stft()
    if dictionary.n_freqs != stft_config.n_freqs:
        raise ShapeError(f"dictionary has F={dictionary.n_freqs} bins, the STFT front-end gives F={stft_config.n_freqs}")
    baseline = cfg.baseline()

    for item_id, in_path, out_path in _jobs(cfg):
        mixture = read_wav(in_path, expected_rate=stft_config.sample_rate)
        result = enhance_waveform_nmf(mixture, dictionary, baseline, stft_config, verbose=True)
        write_wav(out_path, result.waveform)
        print(f"---> {item_id}: wrote {out_path}", flush=True)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "enhanced_dir", "output")
    rate = cfg.sample_rate
    items = []
    for row in mixture_entries(cfg.corpus).itertuples():
        items.append(EvalItem(
            id=row.id,
            method=cfg.method,
            reference=read_wav(corpus_path(cfg.corpus, row.clean_path), expected_rate=rate),
            estimate=read_wav(os.path.join(cfg.enhanced_dir, f"{row.id}.wav"), expected_rate=rate),
            noisy=read_wav(corpus_path(cfg.corpus, row.mixture_path), expected_rate=rate),
        ))
    report = evaluate_batch(items)
    report.to_csv(cfg.output)
    print_medians(report)
    return EXIT_OK


def gain_robustness_rows(cfg: RunConfig, verbose: bool = False) -> List[dict]:
    vae = load_model(cfg.model)
    stft_config = cfg.stft()
    vae.check_n_freqs(stft_config.n_freqs, "the STFT front-end")
    mixture = read_wav(cfg.input, expected_rate=stft_config.sample_rate)
    reference = read_wav(cfg.reference, expected_rate=stft_config.sample_rate)
    free = cfg.enhancer().model_copy(update={"freeze_gains": False})
    frozen = cfg.enhancer().model_copy(update={"freeze_gains": True})

    rows = []
    for scaling_db in cfg.scalings_db:
        gain = 10.0 ** (scaling_db / 20.0)
        scaled = mixture.scaled(gain)
        scaled_reference = reference.scaled(gain)
        sdr = {}
        for name, enhancer in [("free", free), ("frozen", frozen)]:
            result = enhance_waveform(scaled, vae, enhancer, stft_config, verbose=False)
            sdr[name] = si_sdr(scaled_reference, result.waveform)
        rows.append({"scaling_db": scaling_db, "sdr_free_db": sdr["free"], "sdr_frozen_db": sdr["frozen"]})
        if verbose:
            print(f"--- scaling {scaling_db:+.1f} dB: free {sdr['free']:.2f} dB, frozen {sdr['frozen']:.2f} dB", flush=True)
    return rows


def cmd_gain_robustness(cfg: RunConfig) -> int:
    _require(cfg, "model", "input", "reference", "output")
    rows = gain_robustness_rows(cfg, verbose=True)
    write_csv(rows, cfg.output, GAIN_COLUMNS)
    if cfg.plot:
        plot_curve(
            {
                "gains free": {r["scaling_db"]: r["sdr_free_db"] for r in rows},
                "gains frozen": {r["scaling_db"]: r["sdr_frozen_db"] for r in rows},
            },
            xlabel="input scaling (dB)", ylabel="SI-SDR (dB)", title="Robustness to the input level",
            save_path=f"{_stem(cfg.output)}.png",
        )
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "make-corpus": cmd_make_corpus,
    "train-vae": cmd_train_vae,
    "train-dict": cmd_train_dict,
    "enhance": cmd_enhance,
    "enhance-nmf": cmd_enhance_nmf,
    "evaluate": cmd_evaluate,
    "gain-robustness": cmd_gain_robustness,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except Exception as e:
        print(f"vamce {args.command}: {type(e).__name__}: {e}", file=sys.stderr, flush=True)
        return exit_code_for(e)
