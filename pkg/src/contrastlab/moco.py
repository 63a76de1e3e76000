"""Momentum-contrast state: query/key encoder pair plus the FIFO key queue.

The key encoder is an exponential moving average of the query encoder and is
never backpropagated through; the queue is a ring buffer of past key
embeddings used as negatives.
"""

from dataclasses import dataclass

import numpy as np

from .encoder import (
    EncoderParams,
    encode,
    init_encoder,
    read_params_block,
    write_params_block,
)
from .errors import ConfigurationError, DimensionError, FormatError
from .fileio import LineReader, float_line
from .numerics import Tensor, as_matrix, l2_normalize_rows

MOCO_MAGIC = "contrastlab-moco 1"


@dataclass
class MoCoState:
    """Query encoder, EMA key encoder, and the key queue with its write pointer."""

    query: EncoderParams
    key: EncoderParams
    queue: Tensor  # (K, C), unit-norm rows once warm
    queue_ptr: int
    ema_momentum: float

    @property
    def queue_size(self) -> int:
        return self.queue.shape[0]


def init_moco(layer_sizes, queue_size: int, ema_momentum: float, rng: np.random.Generator) -> MoCoState:
    """Fresh state: key params copied bit-identically from the query params,
    queue filled with random unit vectors, pointer at 0."""
    if queue_size < 0:
        raise ConfigurationError(f"queue size must be >= 0, got {queue_size}")
    if not 0.0 <= ema_momentum <= 1.0:
        raise ConfigurationError(f"EMA momentum must be in [0, 1], got {ema_momentum}")
    query = init_encoder(layer_sizes, rng)
    embed_dim = query.output_dim
    queue = l2_normalize_rows(rng.normal(size=(queue_size, embed_dim))) if queue_size else \
        np.zeros((0, embed_dim))
    return MoCoState(query, query.copy(), queue, 0, ema_momentum)


def momentum_update(state: MoCoState) -> None:
    """key <- m * key + (1 - m) * query, elementwise, in place.

    Computed as key + (1 - m) * (query - key), which is the same quantity in
    exact arithmetic but keeps every updated value inside the closed interval
    between the old key value and the query value, and leaves the key params
    bit-identical when they already equal the query params. The endpoints
    m = 0 (copy) and m = 1 (frozen) are exact.
    """
    m = state.ema_momentum
    if m == 1.0:
        return
    for k, q in zip(state.key.weights + state.key.biases,
                    state.query.weights + state.query.biases):
        if m == 0.0:
            k[...] = q
        else:
            k += (1.0 - m) * (q - k)


def enqueue_dequeue(state: MoCoState, keys: Tensor) -> None:
    """Overwrite the oldest queue rows with `keys` and advance the pointer.

    The batch size must divide the queue size so a write never wraps.
    """
    keys = as_matrix(keys, "keys")
    b, k = keys.shape[0], state.queue_size
    if b < 1:
        raise ConfigurationError("cannot enqueue an empty key batch")
    if b > k:
        raise ConfigurationError(f"batch of {b} keys does not fit queue of size {k}")
    if k % b:
        raise ConfigurationError(f"queue size {k} must be a multiple of the batch size {b}")
    if keys.shape[1] != state.queue.shape[1]:
        raise DimensionError(
            f"key width {keys.shape[1]} != queue width {state.queue.shape[1]}"
        )
    ptr = state.queue_ptr
    state.queue[ptr : ptr + b] = keys
    state.queue_ptr = (ptr + b) % k


def key_forward_no_grad(state: MoCoState, x: Tensor) -> Tensor:
    """Encode with the key encoder, keeping no trace: nothing ever
    backpropagates into the key params."""
    v, _ = encode(state.key, x)
    return v


def save_moco(state: MoCoState, path, seed: int = 0) -> None:
    """Checkpoint the full state: both encoders, queue contents, and pointer."""
    with open(path, "w") as fh:
        fh.write(MOCO_MAGIC + "\n")
        fh.write(f"seed {int(seed)}\n")
        fh.write(f"ema_momentum {state.ema_momentum!r}\n")
        fh.write(f"queue_ptr {state.queue_ptr}\n")
        fh.write(f"queue {state.queue.shape[0]} {state.queue.shape[1]}\n")
        for row in state.queue:
            fh.write(float_line(row) + "\n")
        fh.write("query\n")
        write_params_block(fh, state.query)
        fh.write("key\n")
        write_params_block(fh, state.key)
        fh.write("end\n")


def load_moco(path) -> tuple[MoCoState, int]:
    reader = LineReader(path)
    reader.expect(MOCO_MAGIC, "magic line")
    seed = reader.int_after("seed", "seed line")
    ema = reader.float_after("ema_momentum", "ema line")
    ptr = reader.int_after("queue_ptr", "pointer line")
    head = reader.fields("queue header", 3)
    try:
        if head[0] != "queue":
            raise ValueError
        rows, cols = int(head[1]), int(head[2])
    except ValueError:
        raise FormatError("malformed queue header", reader.offset) from None
    queue = reader.matrix(rows, cols, "queue")
    reader.expect("query", "query marker")
    query = read_params_block(reader)
    reader.expect("key", "key marker")
    key = read_params_block(reader)
    reader.expect("end", "trailer")
    return MoCoState(query, key, queue, ptr, ema), seed
