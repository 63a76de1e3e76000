"""Dense float64 arithmetic, stable softmax-family ops, and gradient checking.

All values are carried in C-contiguous numpy float64 arrays; every reduction
uses a fixed deterministic kernel, so identical inputs give bitwise-identical
outputs across runs. Random streams come from `seeded_rng` (numpy's PCG64).
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, DomainError

Tensor = np.ndarray

# Rows whose Euclidean norm falls at or below this are left unnormalized
# (divided by eps instead); guards zero rows.
DEFAULT_NORM_EPS = 1e-12

# 0 * log 0 := 0 in all entropy terms; target matrices are sparse.


def as_f64(x) -> Tensor:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def as_matrix(x, name: str = "input") -> Tensor:
    out = as_f64(x)
    if out.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {out.shape}")
    return out


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream: numpy Generator over the PCG64 bit stream.

    Same seed, same sequence of uniforms/normals/permutations, on every
    platform and run.
    """
    return np.random.default_rng(seed)


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent child streams derived from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with explicit shape checking.

    Summation order is the fixed kernel order of numpy's float64 matmul, so
    repeated calls on identical inputs are bitwise reproducible.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax via max-subtraction; each output row sums to 1."""
    logits = as_matrix(logits, "logits")
    if not np.isfinite(logits).all():
        raise DomainError("softmax input must be finite")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax via max-subtraction."""
    logits = as_matrix(logits, "logits")
    if not np.isfinite(logits).all():
        raise DomainError("log_softmax input must be finite")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_target_rows(targets: Tensor) -> None:
    if (targets < 0.0).any():
        raise ContractError("target rows must be nonnegative")
    sums = targets.sum(axis=1)
    worst = np.abs(sums - 1.0).max() if sums.size else 0.0
    if worst > 1e-9:
        raise ContractError(f"target rows must sum to 1 (worst deviation {worst:.3e})")


def soft_cross_entropy(logits: Tensor, targets: Tensor) -> tuple[float, Tensor]:
    """Mean soft-target cross-entropy and its gradient wrt the logits.

    Returns -(1/n) * sum_ij targets[i,j] * log_softmax(logits)[i,j] together
    with (softmax(logits) - targets) / n.
    """
    logits = as_matrix(logits, "logits")
    targets = as_matrix(targets, "targets")
    if logits.shape != targets.shape:
        raise DimensionError(f"logits {logits.shape} and targets {targets.shape} must match")
    _check_target_rows(targets)
    n = logits.shape[0]
    value = float(-(targets * log_softmax(logits)).sum() / n)
    grad = (softmax(logits) - targets) / n
    return value, grad


def _row_entropies(targets: Tensor) -> Tensor:
    # -sum_j t log t per row, with 0 log 0 = 0
    terms = np.zeros_like(targets)
    nz = targets > 0.0
    terms[nz] = targets[nz] * np.log(targets[nz])
    return -terms.sum(axis=1)


def kl_divergence_to_logits(logits: Tensor, targets: Tensor) -> tuple[float, Tensor]:
    """KL(targets || softmax(logits)) averaged over rows, with gradient wrt logits.

    Equals soft_cross_entropy minus the mean target entropy; the gradient is
    identical to soft_cross_entropy's because the entropy term is constant in
    the logits.
    """
    logits = as_matrix(logits, "logits")
    targets = as_matrix(targets, "targets")
    value, grad = soft_cross_entropy(logits, targets)
    return value - float(_row_entropies(targets).sum() / logits.shape[0]), grad


def l2_normalize_rows(x: Tensor, eps: float = DEFAULT_NORM_EPS) -> Tensor:
    """Divide each row by max(eps, its Euclidean norm)."""
    if eps <= 0.0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    x = as_matrix(x)
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / np.maximum(norms, eps)


def l2_normalize_rows_vjp(x: Tensor, grad_out: Tensor, eps: float = DEFAULT_NORM_EPS) -> Tensor:
    """Pull `grad_out` back through l2_normalize_rows at the point `x`."""
    if eps <= 0.0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    x = as_matrix(x)
    grad_out = as_matrix(grad_out, "grad_out")
    if grad_out.shape != x.shape:
        raise DimensionError(f"grad {grad_out.shape} does not match point {x.shape}")
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    guarded = np.maximum(norms, eps)
    y = x / guarded
    inner = (grad_out * y).sum(axis=1, keepdims=True)
    # active rows see the full normalization Jacobian; guarded rows are linear
    return np.where(norms > eps, (grad_out - inner * y) / guarded, grad_out / guarded)


@dataclass
class GradCheckReport:
    """Worst-case comparison of an analytic gradient against central differences."""

    max_relative_error: float
    worst_coordinate: tuple
    analytic_value: float
    numeric_value: float


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))


def finite_difference_check(
    f: Callable[[Tensor], tuple[float, Tensor]],
    point: Tensor,
    step: float = 1e-5,
) -> GradCheckReport:
    """Check f's analytic gradient against central differences at `point`.

    `f` maps an array to (scalar value, gradient array of the same shape).
    Every coordinate is probed with (f(x+h*e_i) - f(x-h*e_i)) / 2h.
    """
    if step <= 0.0:
        raise ConfigurationError(f"step must be positive, got {step}")
    point = as_f64(point)
    _, analytic = f(point)
    analytic = as_f64(analytic)
    if analytic.shape != point.shape:
        raise ContractError(
            f"analytic gradient shape {analytic.shape} does not match point {point.shape}"
        )
    report = GradCheckReport(-1.0, (), 0.0, 0.0)
    for idx in np.ndindex(point.shape):
        plus = point.copy()
        plus[idx] += step
        minus = point.copy()
        minus[idx] -= step
        f_plus, _ = f(plus)
        f_minus, _ = f(minus)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise DomainError(f"non-finite value at probe {idx}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        rel = relative_error(float(analytic[idx]), numeric)
        if rel > report.max_relative_error:
            report = GradCheckReport(rel, idx, float(analytic[idx]), numeric)
    return report
