import copy
from typing import Iterable, List, Sequence

import torch

from vamce.errors import NumericalError, ShapeError


class AdamState:
    """
    Adam over a fixed list of parameter tensors, driven by externally computed
    gradients (the VAE computes its gradients by hand, there is no autograd graph).
    """

    def __init__(
        self,
        params: Iterable[torch.Tensor],
        lr: float = 1e-3,
        betas: Sequence[float] = (0.9, 0.999),
        eps: float = 1e-7,
    ):
        if lr <= 0:
            raise ValueError(f"Invalid Adam step size: {lr}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ValueError(f"Invalid Adam decay rates: {betas}")
        self.params: List[torch.Tensor] = list(params)
        self.optimizer = torch.optim.Adam(self.params, lr=lr, betas=tuple(betas), eps=eps)

    @property
    def step_count(self) -> int:
        states = [self.optimizer.state[p] for p in self.params if p in self.optimizer.state]
        if not states:
            return 0
        return int(states[0]["step"])

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def copy(self) -> "AdamState":
        return copy.deepcopy(self)


def adam_step(state: AdamState, grads: Sequence[torch.Tensor]) -> List[torch.Tensor]:
    """One bias-corrected Adam update of `state.params` in place; returns the params."""
    if len(grads) != len(state.params):
        raise ShapeError(f"adam_step: got {len(grads)} gradients for {len(state.params)} parameters")
    for i, (p, g) in enumerate(zip(state.params, grads)):
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {i} has shape {tuple(g.shape)}, parameter has {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise NumericalError("adam_step: non-finite gradient", {"param_index": i, "step": state.step_count})
        p.grad = g.detach().to(p.dtype).clone()

    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    return state.params
