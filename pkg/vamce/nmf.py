"""
Semi-supervised Itakura-Saito NMF baseline.

A speech dictionary W_s is learned offline on clean power spectra; on a mixture
only the speech activations H_s and the noise factors (W_b, H_b) are estimated,
and the speech estimate is the Wiener-filtered mixture.

With `update_exponent = 0.5` the multiplicative updates are the majorize-minimize
ones (the same rule the MCEM noise updates use, with a single sample and no speech
model), which makes the IS cost non-increasing. `update_exponent = 1.0` gives the
classical heuristic updates.
"""

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from vamce.config import BaselineConfig
from vamce.errors import FormatError, NumericalError, ShapeError
from vamce.numerics import EPS_NMF, EPS_VAR, NS_DICT, NS_NMF_INIT, RngStream, as_tensor, elementwise, floor, matmul

DICT_SCHEMA = "vamce-dict-1"


@dataclass
class SpeechDictionary:
    W: torch.Tensor   # F x K_s, columns sum to one

    def __post_init__(self):
        self.W = floor(as_tensor(self.W), EPS_NMF)
        if self.W.dim() != 2:
            raise ShapeError(f"SpeechDictionary expects an F x K_s matrix, got shape {tuple(self.W.shape)}")

    @property
    def n_freqs(self) -> int:
        return self.W.shape[0]

    @property
    def rank(self) -> int:
        return self.W.shape[1]


def is_cost(power, model) -> float:
    """sum_fn d_IS(P_fn ; V_fn), both floored."""
    power = floor(as_tensor(power), EPS_VAR)
    model = floor(as_tensor(model), EPS_VAR)
    u = power / model - 1.0
    return float(torch.clamp_min(u - torch.log1p(u), 0.0).sum())


def _random_factors(power: torch.Tensor, rank: int, stream: RngStream) -> Tuple[torch.Tensor, torch.Tensor]:
    F, N = power.shape
    W = torch.from_numpy(1.0 - stream.uniform((F, rank)))
    H = torch.from_numpy(1.0 - stream.uniform((rank, N)))
    scale = math.sqrt(float(power.mean()) / float((W @ H).mean()))
    return W * scale, H * scale


def _update_activations(W, H, power, model, exponent: float) -> torch.Tensor:
    """H <- H . [W^T (P . V^-2) / W^T V^-1]^exponent"""
    ratio = elementwise("div", matmul(W.T, power * model ** -2), matmul(W.T, model ** -1))
    return floor(H * ratio ** exponent, EPS_NMF)


def _update_basis(W, H, power, model, exponent: float) -> torch.Tensor:
    """W <- W . [(P . V^-2) H^T / V^-1 H^T]^exponent"""
    ratio = elementwise("div", matmul(power * model ** -2, H.T), matmul(model ** -1, H.T))
    return floor(W * ratio ** exponent, EPS_NMF)


def _check_power(power) -> torch.Tensor:
    power = as_tensor(power)
    if power.dim() != 2:
        raise ShapeError(f"expected an F x N power spectrogram, got shape {tuple(power.shape)}")
    if not torch.isfinite(power).all() or bool((power < 0).any()):
        raise ValueError("power spectrogram must be finite and >= 0")
    return floor(power, EPS_VAR)


def _converged(previous: Optional[float], cost: float, tol: float) -> bool:
    return previous is not None and (previous - cost) < tol * abs(previous)


def train_dictionary(
    power,
    n_components: int,
    config: BaselineConfig,
    verbose: bool = False,
) -> Tuple[SpeechDictionary, List[float]]:
    """
    IS-NMF of clean training power spectra (F x N_tr). The columns of W_s are rescaled
    to unit sum after every iteration, with the scale moved into H so W_s H is unchanged.
    Returns the dictionary and the per-iteration IS cost.
    """
    power = _check_power(power)
    if n_components < 1:
        raise ValueError(f"Invalid dictionary rank: {n_components}")
    W, H = _random_factors(power, n_components, RngStream(config.seed, 0, NS_DICT))

    costs = []
    previous = None
    progress_bar = tqdm(range(config.max_iters), position=0, leave=True, disable=not verbose)
    for _ in progress_bar:
        H = _update_activations(W, H, power, matmul(W, H), config.update_exponent)
        W = _update_basis(W, H, power, matmul(W, H), config.update_exponent)

        norms = W.sum(0)
        W = floor(W / norms, EPS_NMF)
        H = floor(H * norms.unsqueeze(1), EPS_NMF)

        cost = is_cost(power, matmul(W, H))
        if not math.isfinite(cost):
            raise NumericalError("non-finite IS cost while training the speech dictionary", {"iter": len(costs)})
        costs.append(cost)
        progress_bar.set_description(f"IS cost {cost:.4e}")
        if _converged(previous, cost, config.tol):
            break
        previous = cost

    if verbose:
        print(f"# NMF : dictionary K_s = {n_components} trained in {len(costs)} iterations, cost = {costs[-1]:.4e}")
    return SpeechDictionary(W), costs


@dataclass
class NmfResult:
    estimate: np.ndarray          # F x N complex speech estimate
    speech_mask: torch.Tensor
    noise_mask: torch.Tensor
    H_s: torch.Tensor
    W_b: torch.Tensor
    H_b: torch.Tensor
    costs: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)


def enhance_nmf(X, dictionary: SpeechDictionary, config: BaselineConfig, verbose: bool = False) -> NmfResult:
    """
    Fit |X|^2 ~ W_s H_s + W_b H_b with W_s frozen, then Wiener-filter the mixture:
    s_hat = W_s H_s / (W_s H_s + W_b H_b) . X
    """
    X = np.asarray(X)
    power = _check_power(np.abs(X) ** 2)
    F, N = power.shape
    if dictionary.n_freqs != F:
        raise ShapeError(f"dictionary has F={dictionary.n_freqs} bins, mixture has F={F}")

    W_s = dictionary.W
    stream = RngStream(config.seed, 1, NS_NMF_INIT)
    H_s = torch.from_numpy(1.0 - stream.uniform((dictionary.rank, N)))
    H_s = H_s * float(power.mean()) / float(matmul(W_s, H_s).mean())
    W_b, H_b = _random_factors(power, config.n_noise_components, stream)
    H_s, W_b, H_b = floor(H_s, EPS_NMF), floor(W_b, EPS_NMF), floor(H_b, EPS_NMF)

    def model():
        return matmul(W_s, H_s) + matmul(W_b, H_b)

    costs, seconds = [], []
    previous = None
    progress_bar = tqdm(range(config.max_iters), position=0, leave=True, disable=not verbose)
    for _ in progress_bar:
        start = time.time()
        H_s = _update_activations(W_s, H_s, power, model(), config.update_exponent)
        # the noise factors see the other source as a fixed additive term
        W_b = _update_basis(W_b, H_b, power, model(), config.update_exponent)
        H_b = _update_activations(W_b, H_b, power, model(), config.update_exponent)

        cost = is_cost(power, model())
        if not math.isfinite(cost):
            raise NumericalError("non-finite IS cost while fitting the mixture", {"iter": len(costs)})
        costs.append(cost)
        seconds.append(time.time() - start)
        progress_bar.set_description(f"IS cost {cost:.4e}")
        if _converged(previous, cost, config.tol):
            break
        previous = cost

    speech_var = matmul(W_s, H_s)
    noise_var = matmul(W_b, H_b)
    total = speech_var + noise_var
    speech_mask = speech_var / total
    noise_mask = noise_var / total

    if verbose:
        print(f"# NMF : mixture fitted in {len(costs)} iterations, cost = {costs[-1]:.4e}", flush=True)
    return NmfResult(
        estimate=speech_mask.numpy() * X,
        speech_mask=speech_mask,
        noise_mask=noise_mask,
        H_s=H_s,
        W_b=W_b,
        H_b=H_b,
        costs=costs,
        seconds=seconds,
    )


def save_dictionary(dictionary: SpeechDictionary, path: str, meta: Optional[dict] = None):
    container = {
        "schema": DICT_SCHEMA,
        "dims": {"n_freqs": dictionary.n_freqs, "rank": dictionary.rank},
        "W": [float(v) for v in dictionary.W.reshape(-1).tolist()],
        "meta": meta or {},
    }
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as f:
        json.dump(container, f)


def load_dictionary(path: str) -> SpeechDictionary:
    if not os.path.exists(path):
        raise FileNotFoundError(f"No such dictionary file: {path}")
    try:
        with open(path) as f:
            container = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"Could not parse dictionary file {path}: {e}")

    if not isinstance(container, dict) or container.get("schema") != DICT_SCHEMA:
        found = container.get("schema") if isinstance(container, dict) else None
        raise FormatError(f"{path}: dictionary schema {found!r}, expected {DICT_SCHEMA!r}")
    try:
        F, K = int(container["dims"]["n_freqs"]), int(container["dims"]["rank"])
        data = np.asarray(container["W"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed dictionary container ({e})")
    if data.size != F * K:
        raise FormatError(f"{path}: {data.size} dictionary entries, expected {F} x {K}")
    return SpeechDictionary(torch.from_numpy(data.reshape(F, K)))
