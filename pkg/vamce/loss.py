"""
Negative ELBO of the speech VAE and its gradient.

    loss = mean_b [ (1/R) sum_r sum_f d_IS(|s_fb|^2 ; sigma_f^2(z_rb)) - kl_term(mean_b, var_b) ]

with z_rb = mean_b + sqrt(var_b) * eps_rb. The backward pass below is written out
by hand and mirrors the clamps and floors of the forward pass exactly.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch

from vamce.models import SpeechVAE
from vamce.numerics import DTYPE, EPS_VAR, LOGVAR_CLAMP, RngStream, as_tensor, check_finite


def is_divergence(x, y) -> torch.Tensor:
    """Itakura-Saito divergence x/y - ln(x/y) - 1, elementwise, both arguments floored."""
    x = torch.clamp_min(as_tensor(x), EPS_VAR)
    y = torch.clamp_min(as_tensor(y), EPS_VAR)
    u = x / y - 1.0
    # u - log1p(u) keeps the result >= 0 close to x == y
    return torch.clamp_min(u - torch.log1p(u), 0.0)


def kl_term(mean: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """0.5 * sum_l (ln var - mean^2 - var), summed over the last axis."""
    mean, var = as_tensor(mean), as_tensor(var)
    if bool((var <= 0).any()):
        raise ValueError("kl_term: variances must be > 0")
    return 0.5 * (torch.log(var) - mean ** 2 - var).sum(-1)


@dataclass
class ElboCache:
    """Forward intermediates needed by the backward pass."""
    power: torch.Tensor          # (B, F), floored
    enc_hidden: torch.Tensor     # (B, H)
    mean: torch.Tensor           # (B, L)
    logvar: torch.Tensor         # (B, L), clamped
    logvar_active: torch.Tensor  # (B, L) bool, clamp not engaged
    eps: torch.Tensor            # (R, B, L)
    z: torch.Tensor              # (R, B, L)
    dec_hidden: torch.Tensor     # (R, B, H)
    sigma2: torch.Tensor         # (R, B, F), clamped and floored
    out_active: torch.Tensor     # (R, B, F) bool
    reconstruction: torch.Tensor  # (B,) mean IS divergence summed over F
    kl: torch.Tensor             # (B,)


def _as_batch(vae: SpeechVAE, power) -> torch.Tensor:
    power = as_tensor(power)
    if power.dim() == 1:
        power = power.unsqueeze(0)
    if power.dim() != 2:
        raise ValueError(f"expected a (B, F) batch of power frames, got shape {tuple(power.shape)}")
    vae.check_n_freqs(power.shape[1], "batch")
    check_finite(power, "training frames")
    if bool((power < 0).any()):
        raise ValueError("power frames must be >= 0")
    return torch.clamp_min(power, EPS_VAR)


def elbo_estimate(
    vae: SpeechVAE,
    power,
    n_samples: int = 1,
    stream: Optional[RngStream] = None,
    noise: Optional[torch.Tensor] = None,
) -> Tuple[float, ElboCache]:
    """
    Monte-Carlo negative ELBO per frame, averaged over the batch.
    The reparameterization noise is drawn from `stream` unless `noise` (R, B, L) is given.
    """
    power = _as_batch(vae, power)
    B = power.shape[0]
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if noise is None:
        if stream is None:
            raise ValueError("elbo_estimate needs either a random stream or explicit noise")
        noise = torch.from_numpy(stream.normal((n_samples, B, vae.latent_dim)))
    noise = as_tensor(noise)
    if tuple(noise.shape) != (n_samples, B, vae.latent_dim):
        raise ValueError(f"noise has shape {tuple(noise.shape)}, expected {(n_samples, B, vae.latent_dim)}")

    enc_hidden, mean, logvar_raw = vae.encoder_forward(power)
    logvar = torch.clamp(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    logvar_active = logvar_raw.abs() < LOGVAR_CLAMP
    var = torch.exp(logvar)

    z = mean + torch.exp(0.5 * logvar) * noise
    with torch.no_grad():
        dec_hidden, out_raw = vae.decoder_forward(z)
    out = torch.clamp(out_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    sigma2 = torch.exp(out)
    out_active = (out_raw.abs() < LOGVAR_CLAMP) & (sigma2 > EPS_VAR)
    sigma2 = torch.clamp_min(sigma2, EPS_VAR)

    reconstruction = is_divergence(power.unsqueeze(0), sigma2).sum(-1).mean(0)
    kl = kl_term(mean, var)
    loss = float((reconstruction - kl).mean())

    cache = ElboCache(
        power=power,
        enc_hidden=enc_hidden,
        mean=mean,
        logvar=logvar,
        logvar_active=logvar_active,
        eps=noise,
        z=z,
        dec_hidden=dec_hidden,
        sigma2=sigma2,
        out_active=out_active,
        reconstruction=reconstruction,
        kl=kl,
    )
    return loss, cache


def elbo_backward(vae: SpeechVAE, cache: ElboCache) -> Dict[str, torch.Tensor]:
    """Gradient of the loss of `elbo_estimate` w.r.t. every parameter, keyed like named_parameters()."""
    R, B, _ = cache.eps.shape
    var = torch.exp(cache.logvar)
    std = torch.exp(0.5 * cache.logvar)

    # d/d out of d_IS(P; exp(out)) = 1 - P / sigma^2
    g_out = (1.0 - cache.power.unsqueeze(0) / cache.sigma2) * cache.out_active / (R * B)

    W_out = vae.dec_logvar.weight
    grads = {
        "dec_logvar.weight": torch.einsum("rbf,rbh->fh", g_out, cache.dec_hidden),
        "dec_logvar.bias": g_out.sum((0, 1)),
    }

    g_dec_pre = (g_out @ W_out) * (1.0 - cache.dec_hidden ** 2)
    grads["dec_hidden.weight"] = torch.einsum("rbh,rbl->hl", g_dec_pre, cache.z)
    grads["dec_hidden.bias"] = g_dec_pre.sum((0, 1))

    g_z = g_dec_pre @ vae.dec_hidden.weight

    # -kl_term contributes mean / B and 0.5 (var - 1) / B
    g_mean = g_z.sum(0) + cache.mean / B
    g_logvar = (g_z * cache.eps * 0.5 * std).sum(0) + 0.5 * (var - 1.0) / B
    g_logvar = g_logvar * cache.logvar_active

    grads["enc_mean.weight"] = g_mean.T @ cache.enc_hidden
    grads["enc_mean.bias"] = g_mean.sum(0)
    grads["enc_logvar.weight"] = g_logvar.T @ cache.enc_hidden
    grads["enc_logvar.bias"] = g_logvar.sum(0)

    g_enc_hidden = g_mean @ vae.enc_mean.weight + g_logvar @ vae.enc_logvar.weight
    g_enc_pre = g_enc_hidden * (1.0 - cache.enc_hidden ** 2)
    grads["enc_hidden.weight"] = g_enc_pre.T @ cache.power
    grads["enc_hidden.bias"] = g_enc_pre.sum(0)

    return {name: grads[name].to(DTYPE) for name, _ in vae.named_parameters()}


def elbo_gradient(
    vae: SpeechVAE,
    power,
    n_samples: int = 1,
    stream: Optional[RngStream] = None,
    noise: Optional[torch.Tensor] = None,
) -> Tuple[float, Dict[str, torch.Tensor]]:
    loss, cache = elbo_estimate(vae, power, n_samples, stream, noise)
    return loss, elbo_backward(vae, cache)
