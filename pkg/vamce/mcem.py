"""
Monte-Carlo EM speech enhancement with a pre-trained VAE speech model.

Mixture model, per time-frequency bin:

    x_fn | z_n ~ N_c(0, g_n sigma_f^2(z_n) + (W_b H_b)_fn)

E-step: a random-walk Metropolis-Hastings chain per frame samples z_n from its posterior.
M-step: one pass of majorize-minimize multiplicative updates of H_b, W_b and g on the
empirical objective Q~ built from the retained samples. Frames are independent given
the parameters, so chains run in fixed-size frame chunks on a thread pool.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from vamce.config import EnhancerConfig
from vamce.errors import NumericalError, ShapeError
from vamce.models import SpeechVAE
from vamce.numerics import (
    DTYPE,
    EPS_NMF,
    EPS_VAR,
    NS_CHAIN,
    NS_NMF_INIT,
    RngStream,
    as_tensor,
    check_finite,
    elementwise,
    floor,
    log_acceptance,
    matmul,
)
from vamce.utils.utils import resolve_threads

# (z of shape (B, L), frame slice) -> log-likelihood of each of the B frames
LogLikelihood = Callable[[torch.Tensor, slice], torch.Tensor]


@dataclass
class NoiseNmf:
    W: torch.Tensor   # F x K_b
    H: torch.Tensor   # K_b x N

    def __post_init__(self):
        self.W = floor(as_tensor(self.W), EPS_NMF)
        self.H = floor(as_tensor(self.H), EPS_NMF)
        if self.W.dim() != 2 or self.H.dim() != 2 or self.W.shape[1] != self.H.shape[0]:
            raise ShapeError(f"NoiseNmf: inconsistent factor shapes {tuple(self.W.shape)} x {tuple(self.H.shape)}")

    @property
    def n_components(self) -> int:
        return self.W.shape[1]

    def variance(self) -> torch.Tensor:
        return matmul(self.W, self.H)


@dataclass
class GainVector:
    g: torch.Tensor   # N

    def __post_init__(self):
        self.g = floor(as_tensor(self.g).reshape(-1), EPS_NMF)

    @classmethod
    def ones(cls, n_frames: int) -> "GainVector":
        return cls(torch.ones(n_frames, dtype=DTYPE))

    def __len__(self) -> int:
        return self.g.shape[0]


@dataclass
class LatentChains:
    """
    One Metropolis-Hastings chain per frame. `log_target` caches
    loglik + logprior of the current state under the parameters of the last E-step.
    """
    z: torch.Tensor                    # N x L current states
    streams: List[RngStream]           # stream n drives chain n
    proposal_var: float
    log_target: Optional[torch.Tensor] = None
    samples: Optional[torch.Tensor] = None       # R x N x L retained by the last run
    accept_rate: Optional[torch.Tensor] = None   # N, over the last run

    def __post_init__(self):
        if len(self.streams) != self.z.shape[0]:
            raise ValueError(f"{len(self.streams)} streams for {self.z.shape[0]} chains")
        if self.proposal_var <= 0:
            raise ValueError(f"Invalid proposal variance: {self.proposal_var}")

    @property
    def n_frames(self) -> int:
        return self.z.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.z.shape[1]


# ---------------------------------------------------------------- likelihood


def log_prior(z: torch.Tensor) -> torch.Tensor:
    """ln N(z; 0, I) up to its constant."""
    return -0.5 * (z ** 2).sum(-1)


def mixture_variance(speech_var: torch.Tensor, noise_var: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """g_n sigma^2_fn + (W_b H_b)_fn for speech variances of shape (..., F, N)."""
    return floor(g * speech_var + noise_var, EPS_VAR)


def mixture_loglik(power: torch.Tensor, speech_var: torch.Tensor, noise_var: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """
    Complex Gaussian log-likelihood of B frames, all arguments frame-major:
    power, speech_var, noise_var (B, F), g (B,). Returns (B,).
    """
    v = floor(g.unsqueeze(-1) * speech_var + noise_var, EPS_VAR)
    return -(torch.log(math.pi * v) + power / v).sum(-1)


def mixture_loglik_frame(x_n, z, vae: SpeechVAE, nmf: NoiseNmf, g_n: float, frame: int) -> float:
    """sum_f [-ln(pi v_f) - |x_f|^2 / v_f] for one frame of the mixture."""
    power = as_tensor(np.abs(np.asarray(x_n)) ** 2).reshape(1, -1)
    speech_var = vae.decode(as_tensor(z).reshape(1, -1))
    noise_var = nmf.variance()[:, frame].reshape(1, -1)
    value = float(mixture_loglik(power, speech_var, noise_var, as_tensor([g_n]))[0])
    if not math.isfinite(value):
        raise NumericalError("non-finite mixture log-likelihood", {"frame": frame})
    return value


class MixtureLikelihood:
    """p(x_n | z_n) for every frame under fixed (W_b, H_b, g)."""

    def __init__(self, power: torch.Tensor, vae: SpeechVAE, nmf: NoiseNmf, gains: GainVector):
        self.vae = vae
        self.power_t = power.T.contiguous()
        self.noise_var_t = nmf.variance().T.contiguous()
        self.g = gains.g

    def __call__(self, z: torch.Tensor, frames: slice) -> torch.Tensor:
        speech_var = self.vae.decode(z)
        return mixture_loglik(self.power_t[frames], speech_var, self.noise_var_t[frames], self.g[frames])


# ---------------------------------------------------------------- E-step


def init_chains(power: torch.Tensor, vae: SpeechVAE, config: EnhancerConfig) -> LatentChains:
    """Chains start at the encoder mean of the mixture power spectrum."""
    z0, _ = vae.encode(power.T)
    streams = [RngStream(config.seed, n, NS_CHAIN) for n in range(power.shape[1])]
    return LatentChains(z=z0.clone(), streams=streams, proposal_var=config.proposal_var)


def mh_step(
    chains: LatentChains,
    log_likelihood: LogLikelihood,
    frames: slice = slice(None),
    proposal_noise: Optional[torch.Tensor] = None,
    log_u: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    One random-walk Metropolis-Hastings step for the chains in `frames`:
    propose z' = z + sqrt(eps^2) * noise, accept if ln u < min(0, target(z') - target(z)).
    Standard normal noise and uniforms are drawn from each chain's stream unless given.
    Returns the boolean acceptance mask.
    """
    z = chains.z[frames]
    if chains.log_target is None:
        chains.log_target = torch.empty(chains.n_frames, dtype=DTYPE)
        chains.log_target[:] = log_likelihood(chains.z, slice(None)) + log_prior(chains.z)
    current = chains.log_target[frames]
    streams = chains.streams[frames]

    if proposal_noise is None:
        proposal_noise = torch.from_numpy(np.stack([s.normal(chains.latent_dim) for s in streams]))
    if log_u is None:
        with np.errstate(divide="ignore"):
            log_u = torch.from_numpy(np.log(np.array([s.uniform(None) for s in streams])))

    proposal = z + math.sqrt(chains.proposal_var) * proposal_noise
    proposed = log_likelihood(proposal, frames) + log_prior(proposal)
    accept = log_u < log_acceptance(proposed, current)

    chains.z[frames] = torch.where(accept.unsqueeze(-1), proposal, z)
    chains.log_target[frames] = torch.where(accept, proposed, current)
    return accept


def _chunks(n_frames: int, chunk_size: int) -> List[slice]:
    return [slice(start, min(start + chunk_size, n_frames)) for start in range(0, n_frames, chunk_size)]


def e_step(
    chains: LatentChains,
    log_likelihood: LogLikelihood,
    n_iters: int,
    burn_in: int,
    chunk_size: int = 64,
    n_threads: Optional[int] = None,
) -> torch.Tensor:
    """
    Run `n_iters` MH steps on every chain and keep the last R = n_iters - burn_in states.
    Returns the retained samples (R, N, L), also stored on `chains`.

    Each chunk pre-draws its noise from the per-frame streams and chunks never depend
    on the thread count, so the result is the same for any VAMCE_THREADS value.
    """
    if not 0 <= burn_in < n_iters:
        raise ValueError(f"burn_in must be in [0, n_iters), got burn_in={burn_in}, n_iters={n_iters}")
    N, L = chains.n_frames, chains.latent_dim
    R = n_iters - burn_in
    samples = torch.empty(R, N, L, dtype=DTYPE)
    accepted = torch.zeros(N, dtype=DTYPE)
    # cached target densities are refreshed for the current parameters
    chains.log_target = torch.empty(N, dtype=DTYPE)

    def run_chunk(frames: slice):
        streams = chains.streams[frames]
        noise = torch.from_numpy(np.stack([s.normal((n_iters, L)) for s in streams], axis=1))
        with np.errstate(divide="ignore"):
            log_u = torch.from_numpy(np.log(np.stack([s.uniform(n_iters) for s in streams], axis=1)))

        z = chains.z[frames]
        chains.log_target[frames] = log_likelihood(z, frames) + log_prior(z)
        n_accepted = torch.zeros(z.shape[0], dtype=DTYPE)
        for m in range(n_iters):
            n_accepted += mh_step(chains, log_likelihood, frames, noise[m], log_u[m])
            if m >= burn_in:
                samples[m - burn_in, frames] = chains.z[frames]
        accepted[frames] = n_accepted / n_iters

    chunks = _chunks(N, chunk_size)
    n_threads = min(resolve_threads(n_threads), len(chunks))
    if n_threads <= 1:
        for frames in chunks:
            run_chunk(frames)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run_chunk, chunks))

    chains.samples = samples
    chains.accept_rate = accepted
    return samples


def decode_samples(vae: SpeechVAE, samples: torch.Tensor) -> torch.Tensor:
    """sigma^2(z^(r)_n) for retained samples (R, N, L) -> (R, F, N)."""
    R, N, L = samples.shape
    return vae.decode(samples.reshape(R * N, L)).reshape(R, N, -1).permute(0, 2, 1).contiguous()


# ---------------------------------------------------------------- M-step


def _check_shapes(power: torch.Tensor, speech_var: torch.Tensor, nmf: NoiseNmf, gains: GainVector):
    F, N = power.shape
    if speech_var.dim() != 3 or tuple(speech_var.shape[1:]) != (F, N):
        raise ShapeError(f"speech variances of shape {tuple(speech_var.shape)} do not match mixture {F} x {N}")
    if nmf.W.shape[0] != F or nmf.H.shape[1] != N:
        raise ShapeError(f"noise factors {tuple(nmf.W.shape)} x {tuple(nmf.H.shape)} do not match mixture {F} x {N}")
    if len(gains) != N:
        raise ShapeError(f"{len(gains)} gains for {N} frames")


def q_tilde(power, speech_var: torch.Tensor, nmf: NoiseNmf, gains: GainVector) -> float:
    """-(1/R) sum_r sum_fn [ln v^(r)_fn + |x_fn|^2 / v^(r)_fn]"""
    power = as_tensor(power)
    _check_shapes(power, speech_var, nmf, gains)
    v = mixture_variance(speech_var, nmf.variance(), gains.g)
    value = float(-(torch.log(v) + power / v).sum() / speech_var.shape[0])
    if not math.isfinite(value):
        raise NumericalError("non-finite Q~", {"min_variance": float(v.min())})
    return value


def _inverse_moments(power, speech_var, nmf, gains) -> Tuple[torch.Tensor, torch.Tensor]:
    """(|X|^2 . sum_r V_x^-2, sum_r V_x^-1), with V_x built from the current parameters."""
    v = mixture_variance(speech_var, nmf.variance(), gains.g)
    return power * (v ** -2).sum(0), (v ** -1).sum(0)


def update_Hb(nmf: NoiseNmf, power, speech_var: torch.Tensor, gains: GainVector) -> NoiseNmf:
    power = as_tensor(power)
    _check_shapes(power, speech_var, nmf, gains)
    weighted, inverse = _inverse_moments(power, speech_var, nmf, gains)
    ratio = elementwise("div", matmul(nmf.W.T, weighted), matmul(nmf.W.T, inverse))
    return NoiseNmf(nmf.W, floor(nmf.H * torch.sqrt(ratio), EPS_NMF))


def update_Wb(nmf: NoiseNmf, power, speech_var: torch.Tensor, gains: GainVector) -> NoiseNmf:
    power = as_tensor(power)
    _check_shapes(power, speech_var, nmf, gains)
    weighted, inverse = _inverse_moments(power, speech_var, nmf, gains)
    ratio = elementwise("div", matmul(weighted, nmf.H.T), matmul(inverse, nmf.H.T))
    return NoiseNmf(floor(nmf.W * torch.sqrt(ratio), EPS_NMF), nmf.H)


def update_g(gains: GainVector, power, speech_var: torch.Tensor, nmf: NoiseNmf) -> GainVector:
    power = as_tensor(power)
    _check_shapes(power, speech_var, nmf, gains)
    v = mixture_variance(speech_var, nmf.variance(), gains.g)
    numerator = (power * (speech_var * v ** -2).sum(0)).sum(0)
    denominator = (speech_var * v ** -1).sum(0).sum(0)
    ratio = elementwise("div", numerator, denominator)
    return GainVector(floor(gains.g * torch.sqrt(ratio), EPS_NMF))


def verify_auxiliary(
    H: torch.Tensor,
    H_tilde: torch.Tensor,
    W: torch.Tensor,
    power,
    speech_var: torch.Tensor,
    gains: GainVector,
) -> Tuple[float, float]:
    """
    C(H) = -Q~ as a function of H_b alone, and the majorizer G(H, H~) that the
    H_b update minimizes in closed form:

        G = (1/R) sum_r sum_fn [ ln V~ + (WH - WH~) / V~
                                 + |x|^2 (g sigma^2 / V~^2 + sum_k w_fk h~_kn^2 / (h_kn V~^2)) ]

    with V~ = g sigma^2 + WH~. G(H, H) == C(H) and G(H, H~) >= C(H).
    """
    power = as_tensor(power)
    H, H_tilde, W = as_tensor(H), as_tensor(H_tilde), as_tensor(W)
    R = speech_var.shape[0]
    scaled_speech = gains.g * speech_var

    v = scaled_speech + matmul(W, H)
    cost = float((torch.log(v) + power / v).sum() / R)

    v_tilde = scaled_speech + matmul(W, H_tilde)
    spread = matmul(W, elementwise("div", H_tilde ** 2, H))
    bound = (
        torch.log(v_tilde)
        + (matmul(W, H) - matmul(W, H_tilde)) / v_tilde
        + power * (scaled_speech + spread) / v_tilde ** 2
    )
    return cost, float(bound.sum() / R)


# ---------------------------------------------------------------- EM driver


def init_noise_nmf(power: torch.Tensor, n_components: int, seed: int) -> NoiseNmf:
    """Uniform(0, 1] factors rescaled so that mean(W_b H_b) == mean(|X|^2)."""
    F, N = power.shape
    stream = RngStream(seed, 0, NS_NMF_INIT)
    W = torch.from_numpy(1.0 - stream.uniform((F, n_components)))
    H = torch.from_numpy(1.0 - stream.uniform((n_components, N)))
    scale = math.sqrt(float(power.mean()) / float((W @ H).mean()))
    return NoiseNmf(W * scale, H * scale)


@dataclass
class McemResult:
    nmf: NoiseNmf
    gains: GainVector
    chains: LatentChains
    trace: List[dict] = field(default_factory=list)
    converged: bool = False

    @property
    def n_iters(self) -> int:
        return len(self.trace)

    @property
    def q_tilde_trace(self) -> List[float]:
        return [row["q_tilde"] for row in self.trace]

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.trace)


def _power_of(X) -> torch.Tensor:
    X = np.asarray(X)
    if X.ndim != 2:
        raise ShapeError(f"expected an F x N mixture spectrogram, got shape {X.shape}")
    power = as_tensor(np.abs(X) ** 2)
    check_finite(power, "mixture power spectrogram")
    return floor(power, EPS_VAR)


def run_mcem(X, vae: SpeechVAE, config: EnhancerConfig, verbose: bool = False) -> McemResult:
    """
    Estimate (W_b, H_b, g) for one mixture spectrogram X (complex F x N).

    Each iteration runs one E-step followed by a single H_b -> W_b -> g update pass,
    each sub-update using the freshest parameters. Stops when the relative change of
    Q~ drops below `config.tol` or after `config.max_iters` iterations.
    """
    power = _power_of(X)
    F, N = power.shape
    vae.check_n_freqs(F, "mixture")

    nmf = init_noise_nmf(power, config.n_noise_components, config.seed)
    gains = GainVector.ones(N)
    chains = init_chains(power, vae, config)
    result = McemResult(nmf, gains, chains)

    if verbose:
        print(f"# MCEM : F = {F}, N = {N}, K_b = {config.n_noise_components}, L = {vae.latent_dim}")
        print(f"--- MH {config.mh_iters} iters ({config.burn_in} burn-in), eps^2 = {config.proposal_var}")
        print(f"--- freeze_gains = {config.freeze_gains}, threads = {resolve_threads(config.n_threads)}", flush=True)

    previous = None
    progress_bar = tqdm(range(config.max_iters), position=0, leave=True, disable=not verbose)
    for it in progress_bar:
        start = time.time()
        likelihood = MixtureLikelihood(power, vae, nmf, gains)
        samples = e_step(chains, likelihood, config.mh_iters, config.burn_in, config.chunk_size, config.n_threads)
        speech_var = decode_samples(vae, samples)

        q_estep = q_tilde(power, speech_var, nmf, gains)
        nmf = update_Hb(nmf, power, speech_var, gains)
        q_after_h = q_tilde(power, speech_var, nmf, gains)
        nmf = update_Wb(nmf, power, speech_var, gains)
        q_after_w = q_tilde(power, speech_var, nmf, gains)
        if not config.freeze_gains:
            gains = update_g(gains, power, speech_var, nmf)
        q = q_tilde(power, speech_var, nmf, gains)

        result.nmf, result.gains = nmf, gains
        result.trace.append({
            "iter": it,
            "q_tilde": q,
            "q_estep": q_estep,
            "q_after_h": q_after_h,
            "q_after_w": q_after_w,
            "mean_accept": float(chains.accept_rate.mean()),
            "mean_gain": float(gains.g.mean()),
            "seconds": time.time() - start,
        })
        progress_bar.set_description(f"Q~ {q:.4e} | accept {result.trace[-1]['mean_accept']:.2f}")

        if previous is not None and abs(q - previous) < config.tol * abs(previous):
            result.converged = True
            break
        previous = q

    if verbose:
        status = "converged" if result.converged else "reached max_iters"
        print(f"# MCEM : {status} after {result.n_iters} iterations, Q~ = {result.q_tilde_trace[-1]:.6e}", flush=True)
    return result


def wiener_gain(scaled_speech_var: torch.Tensor, noise_var: torch.Tensor) -> torch.Tensor:
    """Ratio g sigma^2 / (g sigma^2 + W_b H_b) in [0, 1]."""
    return scaled_speech_var / floor(scaled_speech_var + noise_var, EPS_VAR)


def reconstruct(
    X,
    vae: SpeechVAE,
    nmf: NoiseNmf,
    gains: GainVector,
    chains: LatentChains,
    config: EnhancerConfig,
) -> Tuple[np.ndarray, torch.Tensor]:
    """
    Posterior-mean soft mask from fresh MH samples (chains continue from their
    current states) and the masked mixture. The estimate is the gain-scaled
    speech sqrt(g) s unless `config.unscale_output` is set.
    """
    X = np.asarray(X)
    power = _power_of(X)
    vae.check_n_freqs(power.shape[0], "mixture")

    likelihood = MixtureLikelihood(power, vae, nmf, gains)
    samples = e_step(chains, likelihood, config.rec_mh_iters, config.rec_burn_in, config.chunk_size, config.n_threads)
    scaled_speech = gains.g * decode_samples(vae, samples)
    mask = torch.clamp(wiener_gain(scaled_speech, nmf.variance()).mean(0), 0.0, 1.0)

    estimate = mask.numpy() * X
    if config.unscale_output:
        estimate = estimate / np.sqrt(gains.g.numpy())[None, :]
    return estimate, mask


def enhance_spectrogram(X, vae: SpeechVAE, config: EnhancerConfig, verbose: bool = False) -> Tuple[np.ndarray, torch.Tensor, McemResult]:
    result = run_mcem(X, vae, config, verbose=verbose)
    estimate, mask = reconstruct(X, vae, result.nmf, result.gains, result.chains, config)
    return estimate, mask, result
