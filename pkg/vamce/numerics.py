"""
Dense float64 matrix helpers, counter-based random streams and a
finite-difference gradient checker shared by the rest of the package.

Matrices are plain 2-D `torch.float64` tensors; the helpers below only add the
shape / domain checks the algorithms rely on.
"""

from typing import Callable, Union

import numpy as np
import torch

from vamce.errors import DomainError, NumericalError, ShapeError

DTYPE = torch.float64

# Floors applied to power spectra / model variances and to NMF parameters.
EPS_VAR = 1e-10
EPS_NMF = 1e-10
LOGVAR_CLAMP = 30.0

# RngStream namespaces, so that e.g. chain n and training shuffle never share a stream.
NS_CHAIN = 1
NS_TRAIN = 2
NS_NMF_INIT = 3
NS_CORPUS = 4
NS_DICT = 5

ArrayLike = Union[torch.Tensor, np.ndarray, float, list]


def as_tensor(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def check_finite(x: torch.Tensor, what: str, **diagnostics) -> torch.Tensor:
    if not torch.isfinite(x).all():
        n_bad = int((~torch.isfinite(x)).sum())
        raise NumericalError(f"{what} has {n_bad} non-finite entries", diagnostics)
    return x


def floor(x: torch.Tensor, eps: float = EPS_VAR) -> torch.Tensor:
    return torch.clamp_min(x, eps)


_ELEMENTWISE_OPS = {
    "add": torch.add,
    "sub": torch.sub,
    "mul": torch.mul,
    "div": torch.div,
    "pow": torch.pow,
}


def elementwise(op: str, A: ArrayLike, B: ArrayLike) -> torch.Tensor:
    """
    C[i,j] = op(A[i,j], B[i,j]), B may also be a scalar.
    Division requires a strictly positive denominator everywhere.
    """
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"Invalid elementwise op: '{op}', expected one of {list(_ELEMENTWISE_OPS)}")
    A, B = as_tensor(A), as_tensor(B)
    if B.dim() != 0 and B.shape != A.shape:
        raise ShapeError(f"elementwise {op}: shape mismatch {tuple(A.shape)} vs {tuple(B.shape)}")
    if op == "div" and bool((B <= 0).any()):
        raise DomainError(f"elementwise div: {int((B <= 0).sum())} denominator entries <= 0")
    return _ELEMENTWISE_OPS[op](A, B)


def matmul(A: ArrayLike, B: ArrayLike) -> torch.Tensor:
    A, B = as_tensor(A), as_tensor(B)
    if A.dim() != 2 or B.dim() != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {A.dim()}-D and {B.dim()}-D")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul: A.cols={A.shape[1]} != B.rows={B.shape[0]}")
    return A @ B


def log_acceptance(log_target_new: torch.Tensor, log_target_old: torch.Tensor) -> torch.Tensor:
    """ln min(1, p_new / p_old), evaluated without leaving the log domain."""
    return torch.clamp_max(log_target_new - log_target_old, 0.0)


class RngStream:
    """
    Counter-based random stream (Philox) identified by (seed, namespace, stream_id).

    The same identifiers always replay the same sequence, independent of how many
    other streams exist or in which order they are consumed. One stream must not
    be shared between threads.
    """

    def __init__(self, seed: int, stream_id: int = 0, namespace: int = 0):
        if seed < 0 or stream_id < 0 or namespace < 0:
            raise ValueError(f"RngStream identifiers must be non-negative, got {(seed, namespace, stream_id)}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.namespace = int(namespace)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.namespace, self.stream_id))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, namespace={self.namespace}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_gaussian(stream: RngStream, n: int) -> torch.Tensor:
    if n < 1:
        raise ValueError(f"sample_gaussian: n must be >= 1, got {n}")
    return torch.from_numpy(stream.normal(n))


def finite_diff_grad(f: Callable[[torch.Tensor], float], x: ArrayLike, h: float = 1e-5) -> torch.Tensor:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of a flat x."""
    if h <= 0:
        raise ValueError(f"finite_diff_grad: step h must be > 0, got {h}")
    x = as_tensor(x).reshape(-1).clone()
    grad = torch.zeros_like(x)
    for i in range(x.numel()):
        orig = x[i].item()
        x[i] = orig + h
        f_plus = float(f(x))
        x[i] = orig - h
        f_minus = float(f(x))
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError("finite_diff_grad: non-finite function value", {"coordinate": i})
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad
