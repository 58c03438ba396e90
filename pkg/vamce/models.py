import copy
import json
import os
from typing import Dict, Tuple

import numpy as np
import torch
from torch import nn

from vamce.errors import FormatError, ShapeError
from vamce.numerics import DTYPE, EPS_VAR, LOGVAR_CLAMP, RngStream, check_finite

MODEL_SCHEMA = "vamce-vae-1"

ACTIVATIONS = {
    "enc_hidden": "tanh",
    "enc_mean": "identity",
    "enc_logvar": "identity",
    "dec_hidden": "tanh",
    "dec_logvar": "identity",
}


class SpeechVAE(nn.Module):
    """
    Fully connected VAE on power spectra.

    encoder: |s|^2 (F) -> tanh (H) -> {mean (L), log-variance (L)}
    decoder: z (L) -> tanh (H) -> log-variance (F)

    The network is never differentiated by autograd: `vamce.loss.elbo_gradient`
    backpropagates by hand and the optimizer consumes those gradients.
    """

    def __init__(self, n_freqs: int, latent_dim: int, hidden_dim: int = 128):
        super().__init__()
        if not 0 < latent_dim < n_freqs:
            raise ValueError(f"latent_dim must be in [1, n_freqs), got L={latent_dim}, F={n_freqs}")
        if hidden_dim < 1:
            raise ValueError(f"Invalid hidden_dim: {hidden_dim}")
        self.n_freqs = n_freqs
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim

        self.enc_hidden = nn.Linear(n_freqs, hidden_dim, dtype=DTYPE)
        self.enc_mean = nn.Linear(hidden_dim, latent_dim, dtype=DTYPE)
        self.enc_logvar = nn.Linear(hidden_dim, latent_dim, dtype=DTYPE)
        self.dec_hidden = nn.Linear(latent_dim, hidden_dim, dtype=DTYPE)
        self.dec_logvar = nn.Linear(hidden_dim, n_freqs, dtype=DTYPE)

    def layers(self) -> Dict[str, nn.Linear]:
        return {name: getattr(self, name) for name in ACTIVATIONS}

    def glorot_init_(self, seed: int):
        # Glorot-uniform weights, zero biases; does not touch the global torch rng
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for layer in self.layers().values():
                nn.init.xavier_uniform_(layer.weight)
                nn.init.zeros_(layer.bias)
        return self

    def zero_(self):
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def clone(self) -> "SpeechVAE":
        return copy.deepcopy(self)

    def check_n_freqs(self, n_freqs: int, what: str = "input"):
        if n_freqs != self.n_freqs:
            raise ShapeError(f"model expects F={self.n_freqs} frequency bins, {what} has F={n_freqs}")

    # ---- forward passes, also used by the hand-written backward pass ----

    @torch.no_grad()
    def encoder_forward(self, power: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """power (B, F) -> (hidden activations, mean, raw log-variance)"""
        hidden = torch.tanh(self.enc_hidden(power))
        return hidden, self.enc_mean(hidden), self.enc_logvar(hidden)

    @torch.no_grad()
    def decoder_forward(self, z: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """z (..., L) -> (hidden activations, raw log-variance)"""
        hidden = torch.tanh(self.dec_hidden(z))
        return hidden, self.dec_logvar(hidden)

    @torch.no_grad()
    def encode(self, power) -> Tuple[torch.Tensor, torch.Tensor]:
        """Mean and variance of q(z | |s|^2) for one frame (F,) or a batch (B, F)."""
        power = torch.as_tensor(power, dtype=DTYPE)
        single = power.dim() == 1
        if single:
            power = power.unsqueeze(0)
        self.check_n_freqs(power.shape[-1])
        check_finite(power, "encoder input")

        _, mean, logvar = self.encoder_forward(torch.clamp_min(power, EPS_VAR))
        var = torch.exp(torch.clamp(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP))
        if single:
            return mean[0], var[0]
        return mean, var

    @torch.no_grad()
    def decode(self, z) -> torch.Tensor:
        """sigma^2(z), clamped to [exp(-30), exp(30)], for z of shape (..., L)."""
        z = torch.as_tensor(z, dtype=DTYPE)
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"decoder expects latent vectors of size {self.latent_dim}, got {z.shape[-1]}")
        check_finite(z, "decoder input")
        _, logvar = self.decoder_forward(z)
        return torch.exp(torch.clamp(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP))


def reparam_sample(mean: torch.Tensor, var: torch.Tensor, stream: RngStream) -> torch.Tensor:
    """z = mean + sqrt(var) * eps with eps ~ N(0, I) drawn from `stream`."""
    mean = torch.as_tensor(mean, dtype=DTYPE)
    var = torch.as_tensor(var, dtype=DTYPE)
    if bool((var < 0).any()):
        raise ValueError("reparam_sample: variances must be >= 0")
    eps = torch.from_numpy(stream.normal(tuple(mean.shape)))
    return mean + torch.sqrt(var) * eps


def save_model(vae: SpeechVAE, path: str):
    """
    Versioned JSON container. Weights are written as row-major float lists; python's
    float repr round-trips exactly, so load_model(save_model(p)) == p bit for bit.
    """
    params = {}
    for name, tensor in vae.state_dict().items():
        params[name] = {
            "shape": list(tensor.shape),
            "data": [float(v) for v in tensor.detach().reshape(-1).tolist()],
        }
    container = {
        "schema": MODEL_SCHEMA,
        "dims": {"n_freqs": vae.n_freqs, "latent_dim": vae.latent_dim, "hidden_dim": vae.hidden_dim},
        "activations": ACTIVATIONS,
        "params": params,
    }
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as f:
        json.dump(container, f)


def load_model(path: str) -> SpeechVAE:
    if not os.path.exists(path):
        raise FileNotFoundError(f"No such model file: {path}")
    try:
        with open(path) as f:
            container = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"Could not parse model file {path}: {e}")

    if not isinstance(container, dict) or container.get("schema") != MODEL_SCHEMA:
        found = container.get("schema") if isinstance(container, dict) else None
        raise FormatError(f"{path}: model schema {found!r}, expected {MODEL_SCHEMA!r}")
    if container.get("activations") != ACTIVATIONS:
        raise FormatError(f"{path}: unsupported activations {container.get('activations')}")

    try:
        dims = container["dims"]
        vae = SpeechVAE(int(dims["n_freqs"]), int(dims["latent_dim"]), int(dims["hidden_dim"]))
        expected = vae.state_dict()
        state = {}
        for name, ref in expected.items():
            entry = container["params"][name]
            data = np.asarray(entry["data"], dtype=np.float64)
            if list(entry["shape"]) != list(ref.shape) or data.size != ref.numel():
                raise FormatError(
                    f"{path}: parameter {name} has shape {entry['shape']} / {data.size} values, expected {list(ref.shape)}"
                )
            state[name] = torch.from_numpy(data.reshape(tuple(ref.shape)))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: malformed model container ({e})")

    vae.load_state_dict(state)
    return vae
