"""Minibatch ADAM training, history logging and checkpoint files."""
import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import CLASS_NAMES
from .errors import (
    BadMagic,
    CheckpointError,
    EmptyPartition,
    EmptyTrainSet,
    InvalidConfig,
    MetadataMismatch,
    ShapeMismatch,
    TruncatedPayload,
    VersionUnsupported,
)
from .model import (
    ArchitectureSpec,
    ModelParams,
    build_architecture,
    forward_batch,
    init_params,
    loss_and_grads,
    param_count,
    params_from_flat,
)
from .preprocess import INPUT_SIZES, Samples, Variant
from .rng import STREAM_SCHEDULE, Xorshift64Star
from .tensor import softmax_cross_entropy_batch

log = logging.getLogger(__name__)

HISTORY_HEADER = ["iteration", "epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]
MAGIC = b"BTCNN"
FORMAT_VERSION = 1
EVAL_CHUNK = 256


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_iterations: int = 1600
    seed: int = 0
    variant: Variant = Variant.UNCROPPED
    input_size: int = 32
    eval_every: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iterations < 1:
            raise InvalidConfig(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.eval_every < 1:
            raise InvalidConfig(f"eval_every must be >= 1, got {self.eval_every}")
        if self.input_size not in INPUT_SIZES:
            raise InvalidConfig(f"input_size must be one of {INPUT_SIZES}, got {self.input_size}")
        self.variant = Variant(self.variant)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def _arrays(obj):
    return obj.arrays() if isinstance(obj, ModelParams) else list(obj)


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One in-place ADAM update of ``params`` (ModelParams or array list)."""
    ps, gs = _arrays(params), _arrays(grads)
    if len(ps) != len(gs) or len(ps) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(ps, gs, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


def iter_minibatches(n: int, batch_size: int, seed: int):
    """Endless ``(epoch, index array)`` stream; one fresh permutation per epoch."""
    if n < 1:
        raise EmptyTrainSet("no training samples")
    rng = Xorshift64Star(seed, STREAM_SCHEDULE)
    epoch = 0
    while True:
        epoch += 1
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield epoch, perm[start : start + batch_size]


def minibatch_schedule(ids, batch_size: int, seed: int, epochs: int = 1) -> list:
    """Explicit schedule: ``epochs`` lists of batches of ``ids``."""
    ids = list(ids)
    if not ids:
        raise EmptyTrainSet("no training samples")
    per_epoch = -(-len(ids) // batch_size)
    stream = iter_minibatches(len(ids), batch_size, seed)
    out = []
    for _ in range(epochs):
        out.append([[ids[k] for k in next(stream)[1]] for _ in range(per_epoch)])
    return out


def evaluate(params: ModelParams, data: Samples) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a sample set."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(data), EVAL_CHUNK):
        xb = data.x[start : start + EVAL_CHUNK]
        yb = data.y[start : start + EVAL_CHUNK]
        probs, cache = forward_batch(params, xb)
        _, losses, _ = softmax_cross_entropy_batch(cache.logits, yb)
        total_loss += float(losses.sum())
        correct += int((np.argmax(probs, axis=1) == yb).sum())
    return total_loss / len(data), correct / len(data)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for it, ep, tl, ta, vl, va in self.rows:
            w.writerow([it, ep, repr(tl), repr(ta), repr(vl), repr(va)])
        return buf.getvalue()


def train(config: TrainConfig, train_set: Samples, val_set: Samples, progress=None):
    """Run ``max_iterations`` ADAM steps; return ``(params, history)``.

    History rows are logged every ``eval_every`` iterations and at the last
    one. Training columns average the minibatches since the previous row,
    validation columns cover the whole validation set.
    """
    config.validate()
    if len(train_set) == 0:
        raise EmptyPartition("training partition is empty")
    if len(val_set) == 0:
        raise EmptyPartition("validation partition is empty")
    n = config.input_size
    for name, s in (("train", train_set), ("validation", val_set)):
        if s.x.shape[1:] != (1, n, n):
            raise ShapeMismatch(f"{name} samples {s.x.shape[1:]} do not match input size {n}")

    spec = build_architecture(n)
    params = init_params(spec, config.seed)
    state = AdamState.zeros_like(params.arrays())
    batches = iter_minibatches(len(train_set), config.batch_size, config.seed)
    history = TrainHistory()

    loss_sum = 0.0
    correct = 0
    seen = 0
    for it in range(1, config.max_iterations + 1):
        epoch, idx = next(batches)
        xb, yb = train_set.x[idx], train_set.y[idx]
        loss, probs, grads = loss_and_grads(params, xb, yb)
        adam_step(params, grads, state, config)
        loss_sum += loss * len(idx)
        correct += int((np.argmax(probs, axis=1) == yb).sum())
        seen += len(idx)
        if it % config.eval_every == 0 or it == config.max_iterations:
            val_loss, val_acc = evaluate(params, val_set)
            row = (it, epoch, loss_sum / seen, correct / seen, val_loss, val_acc)
            history.rows.append(row)
            log.debug("iter %d epoch %d loss %.4f acc %.3f val_loss %.4f val_acc %.3f", *row)
            if progress is not None:
                progress(row)
            loss_sum, correct, seen = 0.0, 0, 0
    return params, history


# --------------------------------------------------------------------------
# checkpoints
#
# layout: b"BTCNN" | version byte | u32 LE header length | UTF-8 JSON header
#         | float64 LE parameters in architecture order


@dataclass
class Checkpoint:
    metadata: dict
    payload: np.ndarray
    version: int = FORMAT_VERSION

    @property
    def spec(self) -> ArchitectureSpec:
        return build_architecture(int(self.metadata["input_size"]))

    def params(self, spec: ArchitectureSpec = None) -> ModelParams:
        own = self.spec
        if spec is not None and spec != own:
            raise MetadataMismatch(
                f"checkpoint is for input size {own.input_size}, requested {spec.input_size}"
            )
        return params_from_flat(own, self.payload)


def checkpoint_metadata(spec: ArchitectureSpec, variant, seed: int) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "input_size": spec.input_size,
        "variant": str(Variant(variant)),
        "class_names": list(CLASS_NAMES),
        "layer_spec": spec.to_json(),
        "split_seed": int(seed),
    }


def encode_checkpoint(params: ModelParams, metadata: dict) -> bytes:
    header = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = params.flat().astype("<f8").tobytes()
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(header)) + header + payload


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagic("not a checkpoint file (BadMagic)")
    pos = len(MAGIC)
    if len(buf) < pos + 5:
        raise TruncatedPayload("checkpoint header truncated")
    version = buf[pos]
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"checkpoint version {version} is not supported")
    (hlen,) = struct.unpack_from("<I", buf, pos + 1)
    pos += 5
    if len(buf) < pos + hlen:
        raise TruncatedPayload("checkpoint header truncated")
    try:
        metadata = json.loads(buf[pos : pos + hlen].decode("utf-8"))
        spec = build_architecture(int(metadata["input_size"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    pos += hlen
    want = 8 * param_count(spec)
    have = len(buf) - pos
    if have < want:
        raise TruncatedPayload(f"payload has {have} bytes, expected {want}")
    if have > want:
        raise CheckpointError(f"payload has {have - want} trailing bytes")
    payload = np.frombuffer(buf, dtype="<f8", offset=pos).astype(np.float64)
    return Checkpoint(metadata, payload, version)


def save_checkpoint(path, params: ModelParams, metadata: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params, metadata))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
