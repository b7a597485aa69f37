"""A small recurrent early-warning model with hand-written gradients.

Architecture, applied per timestep to a stay's feature matrix:

    x_t = f_t @ W_embed                      linear embedding (l1-penalised)
    z_t = sigmoid(x_t W_xz + h_{t-1} W_hz + b_z)      update gate
    r_t = sigmoid(x_t W_xr + h_{t-1} W_hr + b_r)      reset gate
    n_t = tanh(x_t W_xn + r_t * (h_{t-1} W_hn) + b_n) candidate state
    h_t = (1 - z_t) * n_t + z_t * h_{t-1}

followed by one of two readouts of h_t:

* single head: y_t = sigmoid(h_t . w_out + b_out)
* multi-horizon head: the first horizon uses the base logit above, and
  each later horizon adds a softplus increment,

      l_t^1 = h_t . w_out + b_out
      l_t^k = l_t^1 + sum_{j=2..k} softplus(h_t . u_j + c_j)
      y_t^k = sigmoid(l_t^k)

  so predictions are non-decreasing in the horizon by construction and
  a one-horizon head is structurally the single head.

Training utilities (optimiser, loop, checkpoints) live in
:mod:`tlsmooth.training`; losses in :mod:`tlsmooth.objectives`.

Everything is float64 numpy. The backward pass is ordinary
backpropagation through time over whole stays; batches stack stays
padded at the end, and padded steps are masked so they contribute
nothing to either the loss or the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericFailureError
from .objectives import Objective

__all__ = [
    "ModelSpec",
    "ParamStore",
    "ForwardTrace",
    "forward",
    "forward_batch",
    "gradient",
    "gradient_batch",
]


@dataclass(frozen=True)
class ModelSpec:
    """Shapes and regularisation of the model."""

    input_dim: int
    embed_dim: int
    hidden_dim: int
    horizon_count: int = 1
    l1_embed: float = 0.0

    def __post_init__(self):
        for name in ("input_dim", "embed_dim", "hidden_dim", "horizon_count"):
            v = int(getattr(self, name))
            if v < 1:
                raise InvalidInputError(f"{name} must be a positive integer")
            object.__setattr__(self, name, v)
        if not float(self.l1_embed) >= 0.0:
            raise InvalidInputError("l1_embed must be >= 0")
        object.__setattr__(self, "l1_embed", float(self.l1_embed))

    @property
    def multi_horizon(self) -> bool:
        return self.horizon_count > 1

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "horizon_count": self.horizon_count,
            "l1_embed": self.l1_embed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def _block_shapes(spec: ModelSpec) -> dict:
    d, e, n = spec.input_dim, spec.embed_dim, spec.hidden_dim
    shapes = {
        "embed": (d, e),
        "w_x": (e, 3 * n),
        "w_h": (n, 3 * n),
        "b_g": (3 * n,),
        "w_out": (n,),
        "b_out": (1,),
    }
    if spec.multi_horizon:
        shapes["w_inc"] = (spec.horizon_count - 1, n)
        shapes["b_inc"] = (spec.horizon_count - 1,)
    return shapes


# fan-in used for the uniform init bound of each block
def _fan_in(spec: ModelSpec, name: str) -> int:
    return {
        "embed": spec.input_dim,
        "w_x": spec.embed_dim,
    }.get(name, spec.hidden_dim)


@dataclass
class ParamStore:
    """All parameters as one flat float64 vector plus named views.

    The named blocks are numpy views into ``theta``: writing through a
    view mutates the flat vector and vice versa, which is what the
    optimiser relies on.
    """

    spec: ModelSpec
    theta: np.ndarray
    _slices: dict = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 1:
            raise InvalidInputError("theta must be a flat vector")
        slices, off = {}, 0
        for name, shape in _block_shapes(self.spec).items():
            size = int(np.prod(shape))
            slices[name] = (slice(off, off + size), shape)
            off += size
        if theta.shape[0] != off:
            raise InvalidInputError(
                f"theta has {theta.shape[0]} entries; spec needs {off}"
            )
        if not np.isfinite(theta).all():
            raise InvalidInputError("parameters must be finite")
        self.theta = theta
        self._slices = slices

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    def names(self):
        return tuple(self._slices)

    def block(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.theta[sl].reshape(shape)

    def __getattr__(self, name):
        slices = self.__dict__.get("_slices")
        if slices and name in slices:
            return self.block(name)
        raise AttributeError(name)

    def copy(self) -> "ParamStore":
        return ParamStore(spec=self.spec, theta=self.theta.copy())

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParamStore":
        size = sum(int(np.prod(s)) for s in _block_shapes(spec).values())
        return cls(spec=spec, theta=np.zeros(size))

    @classmethod
    def init(cls, spec: ModelSpec, seed: int) -> "ParamStore":
        """Seeded uniform init, bound 1/sqrt(fan_in) per block."""
        rng = np.random.default_rng(seed)
        store = cls.zeros(spec)
        for name in store.names():
            bound = 1.0 / np.sqrt(_fan_in(spec, name))
            block = store.block(name)
            block[...] = rng.uniform(-bound, bound, size=block.shape)
        return store


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class ForwardTrace:
    """Intermediate activations cached by the forward pass.

    Shapes are (B, T, ...). Replaying a trace through the backward pass
    reproduces the gradient of exactly the forward outputs stored here.
    """

    embedded: np.ndarray      # (B, T, E)
    z: np.ndarray             # (B, T, N) update gate
    r: np.ndarray             # (B, T, N) reset gate
    n: np.ndarray             # (B, T, N) candidate state
    h: np.ndarray             # (B, T, N) hidden state after each step
    gh_n: np.ndarray          # (B, T, N) candidate part of h_{t-1} @ w_h
    probs: np.ndarray         # (B, T) or (B, T, H)
    base_logit: np.ndarray | None = None   # (B, T), multi head only
    inc_pre: np.ndarray | None = None      # (B, T, H-1), multi head only


def _check_features(feats, spec: ModelSpec, batched: bool) -> np.ndarray:
    arr = np.asarray(feats, dtype=np.float64)
    want = 3 if batched else 2
    if arr.ndim != want:
        raise InvalidInputError(
            f"features must be a {want}-d array; got shape {arr.shape}"
        )
    if arr.shape[-1] != spec.input_dim:
        raise InvalidInputError(
            f"features have {arr.shape[-1]} channels; the model expects "
            f"{spec.input_dim}"
        )
    if arr.shape[-2] == 0:
        raise InvalidInputError("need at least one timestep")
    if not np.isfinite(arr).all():
        raise InvalidInputError("features must be finite")
    return arr


def forward_batch(feats, params: ParamStore):
    """Run the recurrence over a batch of equally padded stays.

    Args:
        feats: (B, T, D) float array. Stays shorter than T are padded at
            the end; the caller masks those steps out of the loss.
        params: parameter store.

    Returns:
        (probs, trace) where probs is (B, T) for the single head or
        (B, T, H) for the multi-horizon head.
    """
    spec = params.spec
    feats = _check_features(feats, spec, batched=True)
    b, t_len, _ = feats.shape
    n = spec.hidden_dim

    x = feats @ params.embed                       # (B, T, E)
    ax = x @ params.w_x + params.b_g               # (B, T, 3N)
    w_h = params.w_h

    z_all = np.empty((b, t_len, n))
    r_all = np.empty((b, t_len, n))
    n_all = np.empty((b, t_len, n))
    h_all = np.empty((b, t_len, n))
    gh_n_all = np.empty((b, t_len, n))

    h = np.zeros((b, n))
    for t in range(t_len):
        gh = h @ w_h                               # (B, 3N)
        a = ax[:, t, :]
        z = _sigmoid(a[:, :n] + gh[:, :n])
        r = _sigmoid(a[:, n:2 * n] + gh[:, n:2 * n])
        gh_n = gh[:, 2 * n:]
        cand = np.tanh(a[:, 2 * n:] + r * gh_n)
        h = (1.0 - z) * cand + z * h
        z_all[:, t], r_all[:, t], n_all[:, t] = z, r, cand
        h_all[:, t], gh_n_all[:, t] = h, gh_n

    base = h_all @ params.w_out + params.b_out[0]  # (B, T)
    if spec.multi_horizon:
        inc_pre = np.einsum("btn,kn->btk", h_all, params.w_inc) + params.b_inc
        logits = base[:, :, None] + np.concatenate(
            [np.zeros((b, t_len, 1)), np.cumsum(_softplus(inc_pre), axis=2)],
            axis=2,
        )
        probs = _sigmoid(logits)
        trace = ForwardTrace(
            embedded=x, z=z_all, r=r_all, n=n_all, h=h_all, gh_n=gh_n_all,
            probs=probs, base_logit=base, inc_pre=inc_pre,
        )
    else:
        probs = _sigmoid(base)
        trace = ForwardTrace(
            embedded=x, z=z_all, r=r_all, n=n_all, h=h_all, gh_n=gh_n_all,
            probs=probs,
        )
    if not np.isfinite(probs).all():
        raise NumericFailureError("forward pass produced non-finite outputs")
    return probs, trace


def forward(feats, params: ParamStore) -> np.ndarray:
    """Predictions for a single stay: (T,) or (T, H) probabilities."""
    feats = _check_features(feats, params.spec, batched=False)
    probs, _ = forward_batch(feats[None, :, :], params)
    return probs[0]


def _head_backward(d_probs, trace: ForwardTrace, params: ParamStore, grads: dict):
    """Gradient of the readout; returns dL/dh (B, T, N)."""
    spec = params.spec
    h_all = trace.h
    if spec.multi_horizon:
        p = trace.probs                                  # (B, T, H)
        d_logits = d_probs * p * (1.0 - p)               # (B, T, H)
        # l_k = base + sum_{j<=k} s_j (s_0 absent): reverse-cumulate
        rev = np.cumsum(d_logits[:, :, ::-1], axis=2)[:, :, ::-1]
        d_base = rev[:, :, 0]                            # (B, T)
        d_s = rev[:, :, 1:]                              # (B, T, H-1)
        d_inc_pre = d_s * _sigmoid(trace.inc_pre)        # softplus' = sigmoid
        grads["w_inc"] = np.einsum("btk,btn->kn", d_inc_pre, h_all)
        grads["b_inc"] = d_inc_pre.sum(axis=(0, 1))
        dh = d_base[:, :, None] * params.w_out + np.einsum(
            "btk,kn->btn", d_inc_pre, params.w_inc
        )
    else:
        p = trace.probs                                  # (B, T)
        d_base = d_probs * p * (1.0 - p)
        dh = d_base[:, :, None] * params.w_out
    grads["w_out"] = np.einsum("bt,btn->n", d_base, h_all)
    grads["b_out"] = np.array([d_base.sum()])
    return dh


def _backward(feats, d_probs, trace: ForwardTrace, params: ParamStore) -> np.ndarray:
    spec = params.spec
    b, t_len, _ = feats.shape
    n = spec.hidden_dim
    grads: dict = {}

    dh_from_head = _head_backward(d_probs, trace, params, grads)

    w_x, w_h = params.w_x, params.w_h
    d_wx = np.zeros_like(w_x)
    d_wh = np.zeros_like(w_h)
    d_bg = np.zeros(3 * n)
    d_x = np.empty((b, t_len, spec.embed_dim))

    dh = np.zeros((b, n))
    da = np.empty((b, 3 * n))
    dg = np.empty((b, 3 * n))
    for t in range(t_len - 1, -1, -1):
        dh = dh + dh_from_head[:, t, :]
        z, r, cand = trace.z[:, t], trace.r[:, t], trace.n[:, t]
        gh_n = trace.gh_n[:, t]
        h_prev = trace.h[:, t - 1] if t > 0 else np.zeros((b, n))

        dz = dh * (h_prev - cand)
        dn = dh * (1.0 - z)
        dh_prev = dh * z

        d_cand_pre = dn * (1.0 - cand * cand)
        dr = d_cand_pre * gh_n
        d_gh_n = d_cand_pre * r
        da[:, :n] = dz * z * (1.0 - z)
        da[:, n:2 * n] = dr * r * (1.0 - r)
        da[:, 2 * n:] = d_cand_pre
        dg[:, :2 * n] = da[:, :2 * n]
        dg[:, 2 * n:] = d_gh_n

        x_t = trace.embedded[:, t, :]
        d_wx += x_t.T @ da
        d_bg += da.sum(axis=0)
        d_x[:, t, :] = da @ w_x.T
        d_wh += h_prev.T @ dg
        dh = dh_prev + dg @ w_h.T

    grads["w_x"], grads["w_h"], grads["b_g"] = d_wx, d_wh, d_bg
    grads["embed"] = np.einsum("btd,bte->de", feats, d_x)
    if spec.l1_embed > 0.0:
        grads["embed"] = grads["embed"] + spec.l1_embed * np.sign(params.embed)

    # zeros, not empty: ParamStore validates finiteness at construction,
    # and an uninitialized buffer can hold stale non-finite bit patterns.
    flat = np.zeros_like(params.theta)
    out = ParamStore(spec=spec, theta=flat)
    for name in out.names():
        block = out.block(name)
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericFailureError(
                f"non-finite gradient in parameter block {name!r}"
            )
        block[...] = g
    return flat


def gradient_batch(feats, targets, mask, params: ParamStore, objective: Objective):
    """Loss and flat gradient over a padded batch of stays.

    The loss is the mean over unmasked steps plus the l1 penalty on the
    embedding. With an all-masked batch the data term is zero and only
    the penalty (and its gradient) remains.
    """
    spec = params.spec
    feats = _check_features(feats, spec, batched=True)
    mask_arr = np.asarray(mask, dtype=bool)
    probs, trace = forward_batch(feats, params)
    if objective.multi_horizon != spec.multi_horizon:
        raise InvalidInputError(
            "objective and model head disagree about multi-horizon output"
        )
    targets_arr = np.asarray(targets, dtype=np.float64)
    if targets_arr.shape != probs.shape:
        raise InvalidInputError(
            f"targets have shape {targets_arr.shape}; predictions have "
            f"shape {probs.shape}"
        )
    if objective.multi_horizon:
        if mask_arr.shape != probs.shape[:2]:
            raise InvalidInputError("mask must be (B, T) for the multi-horizon head")
        flat_p = probs.reshape(-1, probs.shape[2])
        flat_t = targets_arr.reshape(flat_p.shape)
        flat_m = mask_arr.reshape(-1)
    else:
        if mask_arr.shape != probs.shape:
            raise InvalidInputError("mask shape must match predictions")
        flat_p = probs.reshape(-1)
        flat_t = targets_arr.reshape(-1)
        flat_m = mask_arr.reshape(-1)

    if flat_m.any():
        data_loss = objective.loss(flat_p, flat_t, flat_m)
        d_probs = objective.grad(flat_p, flat_t, flat_m).reshape(probs.shape)
    else:
        data_loss = 0.0
        d_probs = np.zeros_like(probs)

    loss = data_loss
    if spec.l1_embed > 0.0:
        loss += spec.l1_embed * np.abs(params.embed).sum()
    grad = _backward(feats, d_probs, trace, params)
    return float(loss), grad


def gradient(feats, targets, mask, params: ParamStore, objective: Objective):
    """Single-stay wrapper around :func:`gradient_batch`."""
    feats = _check_features(feats, params.spec, batched=False)
    t = np.asarray(targets, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    return gradient_batch(feats[None], t[None], m[None], params, objective)
