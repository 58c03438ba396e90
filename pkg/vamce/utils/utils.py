import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from scipy.signal import savgol_filter

THREADS_ENV_VAR = "VAMCE_THREADS"


def resolve_threads(n_threads: int = None) -> int:
    """
    Number of worker threads for frame-parallel work. An explicit value wins,
    otherwise VAMCE_THREADS is used; 0 means one thread per cpu.
    """
    if n_threads is None:
        raw = os.environ.get(THREADS_ENV_VAR, "0").strip() or "0"
        try:
            n_threads = int(raw)
        except ValueError:
            raise ValueError(f"Invalid {THREADS_ENV_VAR}={raw!r}, expected a non-negative integer")
    if n_threads < 0:
        raise ValueError(f"Invalid thread count: {n_threads}")
    if n_threads == 0:
        n_threads = os.cpu_count() or 1
    return n_threads


def plot_curve(value_dict, xlabel, ylabel, title, save_path, log_scale = False, y_lims = None):
    plt.figure()
    for key in value_dict.keys():
        values = value_dict[key]
        if isinstance(values, dict):
            plt.plot(list(values.keys()), list(values.values()), label=key, marker='o')
        else:
            plt.plot(range(len(values)), values, label=key)

    if log_scale:
        plt.yscale('log')
    plt.xlabel(xlabel)
    plt.ylabel(ylabel)
    if y_lims is not None:
        plt.ylim(y_lims[0], y_lims[1])
    plt.title(title)
    plt.legend()
    plt.savefig(save_path)
    plt.close()


def plot_loss(loss_dict, save_path='losses.png', window_length=11, polyorder=3):
    colormap = {'train_loss': 'blue', 'val_loss': 'green', 'q_tilde': 'purple'}

    plt.figure(figsize=(8, 5))
    for key, losses in loss_dict.items():
        losses = np.asarray(losses, dtype=float)
        if len(losses) == 0:
            continue
        plt.plot(losses, label=key, color=colormap.get(key, 'gray'), alpha=0.5)
        # smoothed curve only once there are enough points for the filter:
        if len(losses) > window_length:
            plt.plot(savgol_filter(losses, window_length, polyorder), label=f'Smoothed {key}',
                     color=colormap.get(key, 'gray'), linestyle='dashed')

    title = 'Loss values:'
    for key, losses in loss_dict.items():
        if len(losses):
            title += f' {key}: {losses[-1]:.3f}'
    plt.title(title)
    plt.xlabel('Iteration')
    plt.legend(loc='upper right')
    plt.savefig(save_path)
    plt.close()
