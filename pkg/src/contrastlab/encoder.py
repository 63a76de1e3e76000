"""MLP encoder with a projection-style output layer and unit-norm embeddings.

Forward and backward passes are handwritten. `encode` keeps per-layer
intermediates in a ForwardTrace so `encoder_backward` can return exact
gradients of the normalized output, normalization Jacobian included.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    DivergedRunError,
    FormatError,
)
from .fileio import LineReader, float_line
from .numerics import (
    DEFAULT_NORM_EPS,
    Tensor,
    as_f64,
    as_matrix,
    l2_normalize_rows_vjp,
)

ENCODER_MAGIC = "contrastlab-encoder 1"


@dataclass
class EncoderParams:
    """Per-layer weights (out x in) and biases, with the size chain they follow."""

    layer_sizes: list[int]
    weights: list[Tensor]
    biases: list[Tensor]

    def __post_init__(self):
        sizes = list(self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigurationError(f"layer sizes must be >= 2 entries of >= 1, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ContractError("parameter block count does not match layer sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise DimensionError(
                    f"layer {l} blocks {w.shape}/{b.shape} do not chain {sizes[l]}->{sizes[l + 1]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ContractError(f"layer {l} parameters are not finite")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def allclose_to(self, other: "EncoderParams", rtol=0.0, atol=0.0) -> bool:
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


@dataclass
class EncoderGrads:
    """Gradient (or velocity) blocks shaped like EncoderParams."""

    weights: list[Tensor]
    biases: list[Tensor]


@dataclass
class ForwardTrace:
    """Intermediates retained by `encode` for the backward pass."""

    inputs: list[Tensor] = field(default_factory=list)  # activation feeding each layer
    pre_activations: list[Tensor] = field(default_factory=list)
    pre_norm: Tensor | None = None  # last affine output, before row normalization
    degenerate_rows: Tensor | None = None  # rows whose pre-norm norm <= eps


def init_encoder(layer_sizes, rng: np.random.Generator) -> EncoderParams:
    """Weights drawn N(0, 1/fan_in), biases zero."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"layer sizes must be >= 2 entries of >= 1, got {sizes}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, fan_in**-0.5, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(sizes, weights, biases)


def encode(params: EncoderParams, x: Tensor) -> tuple[Tensor, ForwardTrace]:
    """Affine layers with ReLU between them; output rows L2-normalized.

    Deterministic given (params, x). Rows whose final affine output has norm
    <= eps are divided by eps instead (zero rows stay zero) and flagged in
    the trace.
    """
    x = as_matrix(x)
    if x.shape[1] != params.input_dim:
        raise DimensionError(f"input width {x.shape[1]} != encoder input dim {params.input_dim}")
    trace = ForwardTrace()
    a = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        trace.inputs.append(a)
        z = a @ w.T + b
        trace.pre_activations.append(z)
        a = np.maximum(z, 0.0) if l < last else z
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
    v = a / np.maximum(norms, DEFAULT_NORM_EPS)
    trace.pre_norm = a
    trace.degenerate_rows = (norms <= DEFAULT_NORM_EPS).ravel()
    return v, trace


def encoder_backward(
    params: EncoderParams, trace: ForwardTrace, grad_v: Tensor
) -> tuple[EncoderGrads, Tensor]:
    """Exact gradients of the normalized output wrt all parameters and the input.

    `trace` must come from an `encode` call with the same params.
    """
    n_layers = len(params.weights)
    if len(trace.inputs) != n_layers or trace.pre_norm is None:
        raise ContractError("trace does not match encoder parameters")
    for l in range(n_layers):
        if (
            trace.inputs[l].shape[1] != params.layer_sizes[l]
            or trace.pre_activations[l].shape[1] != params.layer_sizes[l + 1]
        ):
            raise ContractError(f"trace layer {l} widths do not match encoder parameters")
    grad_v = as_matrix(grad_v, "grad_v")
    if grad_v.shape != trace.pre_norm.shape:
        raise ContractError(
            f"grad shape {grad_v.shape} does not match encoder output {trace.pre_norm.shape}"
        )
    grad_w: list = [None] * n_layers
    grad_b: list = [None] * n_layers
    upstream = None
    for l in reversed(range(n_layers)):
        if l == n_layers - 1:
            gz = l2_normalize_rows_vjp(trace.pre_norm, grad_v)
        else:
            gz = upstream * (trace.pre_activations[l] > 0.0)
        grad_w[l] = gz.T @ trace.inputs[l]
        grad_b[l] = gz.sum(axis=0)
        upstream = gz @ params.weights[l]
    return EncoderGrads(grad_w, grad_b), upstream


def zero_grads(params: EncoderParams) -> EncoderGrads:
    return EncoderGrads([np.zeros_like(w) for w in params.weights],
                        [np.zeros_like(b) for b in params.biases])


def add_scaled(into: EncoderGrads, other: EncoderGrads, scale: float) -> EncoderGrads:
    """into + scale * other, blockwise; returns a new container."""
    return EncoderGrads(
        [a + scale * b for a, b in zip(into.weights, other.weights)],
        [a + scale * b for a, b in zip(into.biases, other.biases)],
    )


def apply_sgd_step(
    params: EncoderParams,
    grads: EncoderGrads,
    lr: float,
    momentum_coeff: float,
    weight_decay: float,
    velocity: EncoderGrads,
) -> tuple[EncoderParams, EncoderGrads]:
    """One momentum-SGD step; weight decay enters through the velocity.

    velocity <- momentum_coeff * velocity + grad + weight_decay * param
    param    <- param - lr * velocity
    """
    if lr < 0.0:
        raise ConfigurationError(f"lr must be >= 0, got {lr}")
    if not 0.0 <= momentum_coeff < 1.0:
        raise ConfigurationError(f"momentum must be in [0, 1), got {momentum_coeff}")
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for p, g, v, out_p, out_v in (
        (params.weights, grads.weights, velocity.weights, new_w, vel_w),
        (params.biases, grads.biases, velocity.biases, new_b, vel_b),
    ):
        for pi, gi, vi in zip(p, g, v):
            if not np.isfinite(gi).all():
                raise DivergedRunError("non-finite gradient in SGD step")
            v2 = momentum_coeff * vi + gi + weight_decay * pi
            out_v.append(v2)
            out_p.append(pi - lr * v2)
    return EncoderParams(list(params.layer_sizes), new_w, new_b), EncoderGrads(vel_w, vel_b)


def flatten_params(params: EncoderParams) -> Tensor:
    """All parameter blocks as one flat vector (weights then bias per layer)."""
    blocks = []
    for w, b in zip(params.weights, params.biases):
        blocks.append(w.ravel())
        blocks.append(b.ravel())
    return np.concatenate(blocks)


def unflatten_params(layer_sizes, vec: Tensor) -> EncoderParams:
    """Inverse of flatten_params for the given size chain."""
    vec = as_f64(vec)
    sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(vec[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in).copy())
        pos += fan_out * fan_in
        biases.append(vec[pos : pos + fan_out].copy())
        pos += fan_out
    if pos != vec.size:
        raise DimensionError(f"vector length {vec.size} does not match layer sizes {sizes}")
    return EncoderParams(sizes, weights, biases)


def flatten_grads(grads: EncoderGrads) -> Tensor:
    blocks = []
    for w, b in zip(grads.weights, grads.biases):
        blocks.append(w.ravel())
        blocks.append(b.ravel())
    return np.concatenate(blocks)


def write_params_block(fh, params: EncoderParams) -> None:
    fh.write("layers " + " ".join(str(s) for s in params.layer_sizes) + "\n")
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        fh.write(f"W{l} {w.shape[0]} {w.shape[1]}\n")
        for row in w:
            fh.write(float_line(row) + "\n")
        fh.write(f"b{l} {b.shape[0]}\n")
        fh.write(float_line(b) + "\n")


def read_params_block(reader: LineReader) -> EncoderParams:
    parts = reader.fields("layer sizes")
    try:
        if len(parts) < 3 or parts[0] != "layers":
            raise ValueError
        sizes = [int(p) for p in parts[1:]]
    except ValueError:
        raise FormatError("malformed layer sizes header", reader.offset) from None
    weights, biases = [], []
    for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        head = reader.fields(f"W{l} header", 3)
        if head != [f"W{l}", str(fan_out), str(fan_in)]:
            raise FormatError(f"malformed W{l} header", reader.offset)
        weights.append(reader.matrix(fan_out, fan_in, f"W{l}"))
        head = reader.fields(f"b{l} header", 2)
        if head != [f"b{l}", str(fan_out)]:
            raise FormatError(f"malformed b{l} header", reader.offset)
        biases.append(reader.floats(fan_out, f"b{l}"))
    return EncoderParams(sizes, weights, biases)


def save_encoder(params: EncoderParams, path, seed: int = 0) -> None:
    """Write a bit-exact text checkpoint: magic, seed header, then parameters."""
    with open(path, "w") as fh:
        fh.write(ENCODER_MAGIC + "\n")
        fh.write(f"seed {int(seed)}\n")
        write_params_block(fh, params)
        fh.write("end\n")


def load_encoder(path) -> tuple[EncoderParams, int]:
    reader = LineReader(path)
    reader.expect(ENCODER_MAGIC, "magic line")
    seed = reader.int_after("seed", "seed line")
    params = read_params_block(reader)
    reader.expect("end", "trailer")
    return params, seed
