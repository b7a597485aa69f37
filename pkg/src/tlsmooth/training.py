"""Optimiser, training loop and checkpoint files.

Training operates on whole stays: a batch is a set of stays padded to
the longest stay in the batch, with padded steps masked out. The loss
is the mean over every unmasked step in the batch (stays are pooled,
long stays weigh more) plus the model's l1 embedding penalty.

Each epoch reshuffles the stay order with a generator seeded once from
the config, so a given (initial parameters, data, config) triple
reproduces the exact same history, bit for bit. Early stopping watches
the validation loss (without the l1 penalty): training stops after
``patience`` consecutive epochs without strict improvement, and the
parameters returned are the ones from the best epoch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericFailureError
from .ioutil import atomic_write_bytes
from .model import ModelSpec, ParamStore, forward_batch, gradient_batch
from .objectives import Objective

CHECKPOINT_MAGIC = b"TLSM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not float(self.learning_rate) > 0:
            raise InvalidInputError("learning_rate must be positive")
        for name in ("batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be at least 1")


@dataclass
class Adam:
    """Adam with bias correction, updating a flat parameter vector in place."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _m: np.ndarray | None = field(default=None, repr=False)
    _v: np.ndarray | None = field(default=None, repr=False)
    _t: int = field(default=0, repr=False)

    def step(self, theta: np.ndarray, grad: np.ndarray):
        if self._m is None:
            self._m = np.zeros_like(theta)
            self._v = np.zeros_like(theta)
        self._t += 1
        self._m += (1.0 - self.beta1) * (grad - self._m)
        self._v += (1.0 - self.beta2) * (grad * grad - self._v)
        m_hat = self._m / (1.0 - self.beta1 ** self._t)
        v_hat = self._v / (1.0 - self.beta2 ** self._t)
        theta -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class StayData:
    """One stay prepared for training: features, targets and mask."""

    features: np.ndarray   # (T, D)
    targets: np.ndarray    # (T,) or (T, H)
    mask: np.ndarray       # (T,) bool

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.targets, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if f.ndim != 2 or t.shape[0] != f.shape[0] or m.shape != (f.shape[0],):
            raise InvalidInputError("stay arrays must agree on the step count")
        if t.ndim not in (1, 2):
            raise InvalidInputError("targets must be (T,) or (T, H)")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "mask", m)

    @property
    def n_steps(self) -> int:
        return self.features.shape[0]


def pad_batch(stays):
    """Stack stays end-padded to the longest one; pads are masked out."""
    stays = list(stays)
    if not stays:
        raise InvalidInputError("cannot build an empty batch")
    t_max = max(s.n_steps for s in stays)
    b = len(stays)
    d = stays[0].features.shape[1]
    multi = stays[0].targets.ndim == 2
    feats = np.zeros((b, t_max, d))
    if multi:
        targets = np.zeros((b, t_max, stays[0].targets.shape[1]))
    else:
        targets = np.zeros((b, t_max))
    mask = np.zeros((b, t_max), dtype=bool)
    for i, s in enumerate(stays):
        t = s.n_steps
        feats[i, :t] = s.features
        targets[i, :t] = s.targets
        mask[i, :t] = s.mask
    return feats, targets, mask


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    params: ParamStore
    history: list
    best_epoch: int
    best_val_loss: float
    stopped_early: bool


def _chunks(order: np.ndarray, size: int):
    for start in range(0, order.shape[0], size):
        yield order[start:start + size]


def pooled_loss(params: ParamStore, stays, objective: Objective,
                batch_size: int = 64) -> float:
    """Mean objective over every unmasked step of ``stays`` (no l1 term)."""
    total, count = 0.0, 0
    for idx in _chunks(np.arange(len(stays)), batch_size):
        feats, targets, mask = pad_batch([stays[i] for i in idx])
        probs, _ = forward_batch(feats, params)
        n = int(mask.sum())
        if n == 0:
            continue
        if objective.multi_horizon:
            flat = (probs.reshape(-1, probs.shape[2]),
                    targets.reshape(-1, targets.shape[2]), mask.reshape(-1))
        else:
            flat = (probs.reshape(-1), targets.reshape(-1), mask.reshape(-1))
        total += objective.loss(*flat) * n
        count += n
    if count == 0:
        raise InvalidInputError("no unmasked steps; loss undefined")
    return total / count


def train(params: ParamStore, train_stays, val_stays, objective: Objective,
          config: TrainConfig) -> TrainResult:
    """Fit a copy of ``params``; returns the best-validation-loss state.

    Raises :class:`NumericFailureError` as soon as a batch loss turns
    non-finite (divergence), with the epoch and batch in the message.
    """
    train_stays, val_stays = list(train_stays), list(val_stays)
    if not train_stays or not val_stays:
        raise InvalidInputError("need non-empty train and validation sets")
    if sum(int(s.mask.sum()) for s in train_stays) == 0:
        raise InvalidInputError("training set has no unmasked steps")
    if sum(int(s.mask.sum()) for s in val_stays) == 0:
        raise InvalidInputError("validation set has no unmasked steps")

    params = params.copy()
    adam = Adam(learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    order = np.arange(len(train_stays))

    best_val = np.inf
    best_params = params.copy()
    best_epoch = -1
    since_best = 0
    history: list = []
    stopped_early = False

    for epoch in range(config.max_epochs):
        rng.shuffle(order)
        total, count = 0.0, 0
        for b_idx, idx in enumerate(_chunks(order, config.batch_size)):
            feats, targets, mask = pad_batch([train_stays[i] for i in idx])
            loss, grad = gradient_batch(feats, targets, mask, params, objective)
            if not np.isfinite(loss):
                raise NumericFailureError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch {b_idx}"
                )
            adam.step(params.theta, grad)
            n = int(mask.sum())
            total += loss * n
            count += n
        train_loss = total / max(count, 1)

        val_loss = pooled_loss(params, val_stays, objective,
                               batch_size=config.batch_size)
        history.append(EpochRecord(epoch=epoch, train_loss=float(train_loss),
                                   val_loss=float(val_loss)))
        if val_loss < best_val:
            best_val = float(val_loss)
            best_params = params.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                stopped_early = True
                break

    return TrainResult(params=best_params, history=history,
                       best_epoch=best_epoch, best_val_loss=best_val,
                       stopped_early=stopped_early)


def save_checkpoint(path, params: ParamStore, meta: dict | None = None):
    """Binary checkpoint: magic, JSON header, little-endian float64 payload."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model": params.spec.to_dict(),
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = (CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head
            + params.theta.astype("<f8").tobytes())
    atomic_write_bytes(path, blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (params, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path}: not a model checkpoint")
    (head_len,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: corrupt checkpoint header") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidInputError(
            f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
        )
    spec = ModelSpec.from_dict(header["model"])
    theta = np.frombuffer(blob[8 + head_len:], dtype="<f8").astype(np.float64)
    params = ParamStore(spec=spec, theta=theta)
    return params, header.get("meta", {})
