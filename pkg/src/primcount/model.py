"""Encoder-decoder sequence model, trained from scratch in numpy.

A bidirectional gated recurrent encoder compresses one window into a
single context vector; a unidirectional gated recurrent decoder expands
that vector into a primitive token sequence. Everything is float64 and
hand-differentiated, which keeps the model small, deterministic, and
checkable against finite differences.

Vocabulary: the 5 primitive classes (codes 0..4) plus SOS=5 and EOS=6.
"""

from __future__ import annotations

import base64
import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DataError, DatasetSplit, LabeledRecording, split_subjects
from .preprocess import (
    NormalizationStats,
    TargetSequence,
    Window,
    WindowSpec,
    apply_normalization,
    derive_target_sequence,
    fit_normalization,
    make_windows,
)

SOS_TOKEN = 5
EOS_TOKEN = 6
VOCAB_SIZE = 7

MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when optimization produces non-finite values."""


# ---------------------------------------------------------------------------
# Configuration and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 77
    hidden_dim: int = 64
    embed_dim: int = 32
    max_decode_len: int = 17  # max target tokens + EOS
    cell_type: str = "gru"
    attention: bool = False

    def __post_init__(self):
        if self.hidden_dim < 1 or self.input_dim < 1 or self.embed_dim < 1:
            raise DataError("model dimensions must be positive")
        if self.max_decode_len < 2:
            raise DataError("max_decode_len must allow at least one token plus EOS")
        if self.cell_type != "gru":
            raise DataError(f"unsupported cell type {self.cell_type!r}")
        if self.attention:
            raise DataError("attention decoding is not implemented")

    @property
    def vocab_size(self) -> int:
        return VOCAB_SIZE

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "embed_dim": self.embed_dim,
            "max_decode_len": self.max_decode_len,
            "cell_type": self.cell_type,
            "attention": self.attention,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class GRUParams:
    """One gated recurrent layer: update gate z, reset gate r, candidate n."""

    Wr: np.ndarray
    Wz: np.ndarray
    Wn: np.ndarray
    Ur: np.ndarray
    Uz: np.ndarray
    Un: np.ndarray
    br: np.ndarray
    bz: np.ndarray
    bn: np.ndarray

    _FIELDS = ("Wr", "Wz", "Wn", "Ur", "Uz", "Un", "br", "bz", "bn")

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GRUParams":
        return cls(
            *(np.zeros((input_dim, hidden_dim)) for _ in range(3)),
            *(np.zeros((hidden_dim, hidden_dim)) for _ in range(3)),
            *(np.zeros(hidden_dim) for _ in range(3)),
        )

    def arrays(self):
        for name in self._FIELDS:
            yield name, getattr(self, name)


@dataclass
class ModelParams:
    config: ModelConfig
    enc_fwd: GRUParams
    enc_bwd: GRUParams
    ctx_W: np.ndarray  # (2H, H)
    ctx_b: np.ndarray  # (H,)
    embed: np.ndarray  # (VOCAB, E)
    dec: GRUParams  # input E
    out_W: np.ndarray  # (H, VOCAB)
    out_b: np.ndarray  # (VOCAB,)

    def arrays(self) -> dict[str, np.ndarray]:
        """Name -> live array references, in a stable order."""
        out = {}
        for prefix, gru in (("enc_fwd", self.enc_fwd), ("enc_bwd", self.enc_bwd),
                            ("dec", self.dec)):
            for name, arr in gru.arrays():
                out[f"{prefix}.{name}"] = arr
        out["ctx_W"] = self.ctx_W
        out["ctx_b"] = self.ctx_b
        out["embed"] = self.embed
        out["out_W"] = self.out_W
        out["out_b"] = self.out_b
        return out

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform init in [-1/sqrt(hidden), +1/sqrt(hidden)], seeded."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(config.hidden_dim)

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    D, H, E, V = config.input_dim, config.hidden_dim, config.embed_dim, VOCAB_SIZE

    def gru(d):
        return GRUParams(u(d, H), u(d, H), u(d, H),
                         u(H, H), u(H, H), u(H, H),
                         u(H), u(H), u(H))

    return ModelParams(
        config=config,
        enc_fwd=gru(D),
        enc_bwd=gru(D),
        ctx_W=u(2 * H, H),
        ctx_b=u(H),
        embed=u(V, E),
        dec=gru(E),
        out_W=u(H, V),
        out_b=u(V),
    )


def zero_params(config: ModelConfig) -> ModelParams:
    D, H, E, V = config.input_dim, config.hidden_dim, config.embed_dim, VOCAB_SIZE
    return ModelParams(
        config=config,
        enc_fwd=GRUParams.zeros(D, H),
        enc_bwd=GRUParams.zeros(D, H),
        ctx_W=np.zeros((2 * H, H)),
        ctx_b=np.zeros(H),
        embed=np.zeros((V, E)),
        dec=GRUParams.zeros(E, H),
        out_W=np.zeros((H, V)),
        out_b=np.zeros(V),
    )


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


# ---------------------------------------------------------------------------
# Recurrent cell forward/backward
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class _GRUCache:
    xs: np.ndarray  # (T, B, D)
    h_prev: np.ndarray  # (T, B, H)
    r: np.ndarray
    z: np.ndarray
    n: np.ndarray
    hn: np.ndarray  # recurrent candidate term before the reset gate


def _gru_forward(p: GRUParams, xs: np.ndarray, h0: np.ndarray):
    """Run the cell over time. xs: (T, B, D); returns hs (T, B, H) + cache."""
    T, B, _ = xs.shape
    H = p.br.shape[0]
    hs = np.empty((T, B, H))
    cache = _GRUCache(
        xs,
        np.empty((T, B, H)),
        np.empty((T, B, H)),
        np.empty((T, B, H)),
        np.empty((T, B, H)),
        np.empty((T, B, H)),
    )
    h = h0
    for t in range(T):
        x = xs[t]
        r = _sigmoid(x @ p.Wr + h @ p.Ur + p.br)
        z = _sigmoid(x @ p.Wz + h @ p.Uz + p.bz)
        hn = h @ p.Un
        n = np.tanh(x @ p.Wn + r * hn + p.bn)
        cache.h_prev[t] = h
        cache.r[t] = r
        cache.z[t] = z
        cache.n[t] = n
        cache.hn[t] = hn
        h = (1.0 - z) * n + z * h
        hs[t] = h
    return hs, cache


def _gru_backward(
    p: GRUParams, cache: _GRUCache, dhs: np.ndarray, want_dx: bool
):
    """Backprop through time. dhs: upstream gradient on every h_t.

    Returns (param grads, dxs or None, dh0).
    """
    T, B, _ = cache.xs.shape
    g = {name: np.zeros_like(arr) for name, arr in p.arrays()}
    dxs = np.zeros_like(cache.xs) if want_dx else None
    dh_next = np.zeros_like(dhs[0])
    for t in reversed(range(T)):
        dh = dhs[t] + dh_next
        x, h_prev = cache.xs[t], cache.h_prev[t]
        r, z, n, hn = cache.r[t], cache.z[t], cache.n[t], cache.hn[t]

        dz = dh * (h_prev - n) * z * (1.0 - z)
        dn = dh * (1.0 - z) * (1.0 - n * n)
        dh_prev = dh * z

        g["Wn"] += x.T @ dn
        g["bn"] += dn.sum(axis=0)
        d_hn = dn * r
        g["Un"] += h_prev.T @ d_hn
        dh_prev += d_hn @ p.Un.T

        dr = dn * hn * r * (1.0 - r)
        g["Wr"] += x.T @ dr
        g["br"] += dr.sum(axis=0)
        g["Ur"] += h_prev.T @ dr
        dh_prev += dr @ p.Ur.T

        g["Wz"] += x.T @ dz
        g["bz"] += dz.sum(axis=0)
        g["Uz"] += h_prev.T @ dz
        dh_prev += dz @ p.Uz.T

        if want_dx:
            dxs[t] = dn @ p.Wn.T + dr @ p.Wr.T + dz @ p.Wz.T
        dh_next = dh_prev
    return g, dxs, dh_next


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


@dataclass
class _EncodeCache:
    fwd: _GRUCache
    bwd: _GRUCache
    cat: np.ndarray  # (B, 2H)
    ctx: np.ndarray  # (B, H)
    T: int


def _encode_batch(params: ModelParams, X: np.ndarray):
    """X: (B, T, D) -> context (B, H) plus cache for backprop."""
    if X.ndim != 3 or X.shape[2] != params.config.input_dim:
        raise DataError(
            f"encoder input has {X.shape[-1]} channels, "
            f"model expects {params.config.input_dim}"
        )
    xs = np.ascontiguousarray(X.transpose(1, 0, 2))
    B = X.shape[0]
    H = params.config.hidden_dim
    h0 = np.zeros((B, H))
    hs_f, cache_f = _gru_forward(params.enc_fwd, xs, h0)
    hs_b, cache_b = _gru_forward(params.enc_bwd, xs[::-1], h0)
    cat = np.concatenate([hs_f[-1], hs_b[-1]], axis=1)
    ctx = np.tanh(cat @ params.ctx_W + params.ctx_b)
    return ctx, _EncodeCache(cache_f, cache_b, cat, ctx, xs.shape[0])


def _encode_backward(
    params: ModelParams, cache: _EncodeCache, dctx: np.ndarray, grads: dict
):
    H = params.config.hidden_dim
    dpre = dctx * (1.0 - cache.ctx * cache.ctx)
    grads["ctx_W"] += cache.cat.T @ dpre
    grads["ctx_b"] += dpre.sum(axis=0)
    dcat = dpre @ params.ctx_W.T
    B = dctx.shape[0]
    dhs = np.zeros((cache.T, B, H))
    dhs[-1] = dcat[:, :H]
    g_f, _, _ = _gru_backward(params.enc_fwd, cache.fwd, dhs, want_dx=False)
    dhs = np.zeros((cache.T, B, H))
    dhs[-1] = dcat[:, H:]
    g_b, _, _ = _gru_backward(params.enc_bwd, cache.bwd, dhs, want_dx=False)
    for name, arr in g_f.items():
        grads[f"enc_fwd.{name}"] += arr
    for name, arr in g_b.items():
        grads[f"enc_bwd.{name}"] += arr


def encode(params: ModelParams, window_frames: np.ndarray) -> np.ndarray:
    """Context vector for one normalized window (window_len x input_dim)."""
    frames = np.asarray(window_frames, dtype=np.float64)
    if frames.ndim != 2:
        raise DataError("window frames must be 2-D")
    ctx, _ = _encode_batch(params, frames[None])
    return ctx[0]


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decode_step(params: ModelParams, state: np.ndarray, prev_token: int):
    """One greedy-decoding step: (probabilities over vocab, new state)."""
    if not 0 <= int(prev_token) < VOCAB_SIZE:
        raise DataError(f"token id {prev_token} outside vocabulary")
    state = np.asarray(state, dtype=np.float64)
    x = params.embed[int(prev_token)][None]
    hs, _ = _gru_forward(params.dec, x[None], state[None])
    new_state = hs[0, 0]
    probs = _softmax(new_state @ params.out_W + params.out_b)
    return probs, new_state


def decode_step_batch(
    params: ModelParams, states: np.ndarray, prev_tokens: np.ndarray
):
    """Vectorized decode_step over a batch of independent windows."""
    x = params.embed[prev_tokens]
    hs, _ = _gru_forward(params.dec, x[None], states)
    new_states = hs[0]
    probs = _softmax(new_states @ params.out_W + params.out_b)
    return probs, new_states


# ---------------------------------------------------------------------------
# Loss and gradients (teacher forcing)
# ---------------------------------------------------------------------------


def _teacher_arrays(targets: list[np.ndarray]):
    """Pack variable-length targets into (in_tokens, sup_tokens, mask)."""
    B = len(targets)
    K = max(len(t) for t in targets) + 1  # plus the EOS step
    in_tokens = np.full((B, K), EOS_TOKEN, dtype=np.int64)
    sup = np.full((B, K), EOS_TOKEN, dtype=np.int64)
    mask = np.zeros((B, K))
    in_tokens[:, 0] = SOS_TOKEN
    for b, t in enumerate(targets):
        L = len(t)
        in_tokens[b, 1 : L + 1] = t
        sup[b, :L] = t
        mask[b, : L + 1] = 1.0
    return in_tokens, sup, mask


def _batch_forward_backward(
    params: ModelParams,
    X: np.ndarray,
    targets: list[np.ndarray],
    want_grads: bool = True,
):
    """Mean per-window teacher-forced cross-entropy and its gradients."""
    B = X.shape[0]
    in_tokens, sup, mask = _teacher_arrays(targets)
    K = in_tokens.shape[1]
    ctx, enc_cache = _encode_batch(params, X)
    xs = np.ascontiguousarray(params.embed[in_tokens].transpose(1, 0, 2))
    hs, dec_cache = _gru_forward(params.dec, xs, ctx)
    logits = hs @ params.out_W + params.out_b  # (K, B, V)
    probs = _softmax(logits)
    kk, bb = np.meshgrid(np.arange(K), np.arange(B), indexing="ij")
    p_correct = probs[kk, bb, sup.T]
    nll = -np.log(np.maximum(p_correct, 1e-300)) * mask.T  # (K, B)
    lengths = mask.sum(axis=1)
    per_window = nll.sum(axis=0) / lengths
    loss = float(per_window.mean())
    if not want_grads:
        return loss, None

    weights = (mask / lengths[:, None] / B).T  # (K, B)
    dlogits = probs.copy()
    dlogits[kk, bb, sup.T] -= 1.0
    dlogits *= weights[:, :, None]

    grads = _zero_grads(params)
    grads["out_W"] += np.tensordot(hs, dlogits, axes=([0, 1], [0, 1]))
    grads["out_b"] += dlogits.sum(axis=(0, 1))
    dhs = dlogits @ params.out_W.T
    g_dec, dxs, dctx = _gru_backward(params.dec, dec_cache, dhs, want_dx=True)
    for name, arr in g_dec.items():
        grads[f"dec.{name}"] += arr
    np.add.at(
        grads["embed"],
        in_tokens.T.reshape(-1),
        dxs.reshape(-1, params.config.embed_dim),
    )
    _encode_backward(params, enc_cache, dctx, grads)
    return loss, grads


def _frames_of(window) -> np.ndarray:
    if isinstance(window, Window):
        return window.frames
    return np.asarray(window, dtype=np.float64)


def _codes_of(target) -> np.ndarray:
    if isinstance(target, TargetSequence):
        return target.codes()
    codes = np.asarray([int(t) for t in target], dtype=np.int64)
    if codes.size == 0:
        raise DataError("empty target sequence")
    return codes


def sequence_loss(params: ModelParams, window, target) -> float:
    """Teacher-forced cross-entropy for one window, averaged per step.

    Decoder inputs are SOS followed by the target tokens; supervision is
    the target tokens followed by EOS.
    """
    loss, _ = _batch_forward_backward(
        params, _frames_of(window)[None], [_codes_of(target)], want_grads=False
    )
    return loss


def loss_gradients(params: ModelParams, window, target):
    """(loss, gradient dict) for one window; used by grad_check and tests."""
    return _batch_forward_backward(
        params, _frames_of(window)[None], [_codes_of(target)]
    )


def grad_check(
    params: ModelParams,
    window,
    target,
    epsilon: float = 3e-5,
    n_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Samples n_samples parameter coordinates (all of them if the model is
    smaller than that) and perturbs each by +-epsilon. The default step
    balances truncation against float64 cancellation; much below 1e-5
    the difference quotient turns noisy on small-gradient coordinates.
    """
    frames = _frames_of(window)
    codes = _codes_of(target)
    _, grads = _batch_forward_backward(params, frames[None], [codes])
    arrays = params.arrays()
    names = list(arrays)
    sizes = np.array([arrays[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    if n_samples >= total:
        flat_idx = np.arange(total)
    else:
        flat_idx = rng.choice(total, size=n_samples, replace=False)

    def loss_only():
        loss, _ = _batch_forward_backward(
            params, frames[None], [codes], want_grads=False
        )
        return loss

    worst = 0.0
    for fi in sorted(int(i) for i in flat_idx):
        k = int(np.searchsorted(offsets, fi, side="right") - 1)
        arr = arrays[names[k]]
        local = fi - int(offsets[k])
        idx = np.unravel_index(local, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + epsilon
        loss_plus = loss_only()
        arr[idx] = orig - epsilon
        loss_minus = loss_only()
        arr[idx] = orig
        fd = (loss_plus - loss_minus) / (2.0 * epsilon)
        an = grads[names[k]][idx]
        denom = max(abs(fd) + abs(an), 1e-8)
        worst = max(worst, abs(fd - an) / denom)
    return worst


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction, updating arrays in place."""

    def __init__(self, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, arr in arrays.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning rate must be positive")
        if self.patience < 1:
            raise DataError("patience must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DataError("batch size and max epochs must be positive")


@dataclass(frozen=True)
class TrainingData:
    """Recordings plus the window geometry used to cut them."""

    recordings: tuple[LabeledRecording, ...]
    window_spec: WindowSpec

    def __post_init__(self):
        object.__setattr__(self, "recordings", tuple(self.recordings))
        if not self.recordings:
            raise DataError("no recordings")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_aer: float
    val_sensitivity: float
    val_fdr: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_aer": self.val_aer,
            "val_sensitivity": self.val_sensitivity,
            "val_fdr": self.val_fdr,
        }


@dataclass
class EnsembleModel:
    """Per-fold (params, normalization) pairs sharing one architecture."""

    config: ModelConfig
    members: list[tuple[ModelParams, NormalizationStats]]

    def __post_init__(self):
        if not self.members:
            raise DataError("ensemble needs at least one member")
        for params, _ in self.members:
            if params.config != self.config:
                raise DataError("ensemble member config mismatch")

    @property
    def n_members(self) -> int:
        return len(self.members)


def windows_and_targets(
    recordings, window_spec: WindowSpec, mode: str
) -> list[tuple[Window, TargetSequence]]:
    """Cut every recording and derive the per-window ground truth."""
    pairs = []
    for labeled in recordings:
        for w in make_windows(labeled.recording, window_spec, mode=mode):
            pairs.append((w, derive_target_sequence(labeled.segments, w)))
    return pairs


def _validation_metrics(member: EnsembleModel, val_pairs) -> tuple[float, float, float]:
    # local import: decoding builds on this module
    from .decoding import decode_window
    from .evaluation import OutcomeTallies, align, metrics, tally

    total = OutcomeTallies()
    for window, target in val_pairs:
        pred = decode_window(member, window)
        total = total + tally(align(target.tokens, pred.tokens))
    m = metrics(total)
    aer = m.aer if not math.isnan(m.aer) else float("inf")
    return aer, m.sensitivity, m.fdr


def train_member(
    fold: DatasetSplit,
    data: TrainingData,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, NormalizationStats, list[EpochStats]]:
    """Train one ensemble member on a subject fold.

    Minimizes teacher-forced cross-entropy with Adam; after each epoch
    decodes the validation windows and scores their AER; keeps the
    parameters of the best epoch and stops once patience epochs pass
    without improvement.
    """
    train_recs = [
        r for r in data.recordings if r.recording.subject_id in fold.train_subjects
    ]
    val_recs = [
        r for r in data.recordings if r.recording.subject_id in fold.val_subjects
    ]
    if not train_recs or not val_recs:
        raise DataError("fold has an empty train or validation side")

    stats = fit_normalization([r.recording for r in train_recs])
    normalized_train = [
        LabeledRecording(apply_normalization(r.recording, stats), list(r.segments))
        for r in train_recs
    ]
    train_pairs = windows_and_targets(normalized_train, data.window_spec, mode="train")
    # validation windows stay raw; decode_window applies member normalization
    val_pairs = windows_and_targets(val_recs, data.window_spec, mode="test")

    X = np.stack([w.frames for w, _ in train_pairs])
    targets = [t.codes() for _, t in train_pairs]
    n = len(train_pairs)

    params = init_params(model_config, train_config.seed)
    arrays = params.arrays()
    opt = Adam(
        lr=train_config.learning_rate,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.adam_eps,
    )
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((train_config.seed, 0x51))
    )

    best_aer = float("inf")
    best_params = params.copy()
    epochs_since_improve = 0
    log: list[EpochStats] = []

    for epoch in range(1, train_config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, train_config.batch_size):
            idx = order[lo : lo + train_config.batch_size]
            batch_loss, grads = _batch_forward_backward(
                params, X[idx], [targets[i] for i in idx]
            )
            if not math.isfinite(batch_loss):
                raise TrainingError(
                    f"training diverged at epoch {epoch}: loss={batch_loss}"
                )
            opt.step(arrays, grads)
            loss_sum += batch_loss * len(idx)
        epoch_loss = loss_sum / n

        member = EnsembleModel(model_config, [(params, stats)])
        val_aer, val_sens, val_fdr = _validation_metrics(member, val_pairs)
        log.append(EpochStats(epoch, epoch_loss, val_aer, val_sens, val_fdr))

        if val_aer < best_aer:
            best_aer = val_aer
            best_params = params.copy()
            epochs_since_improve = 0
        else:
            epochs_since_improve += 1
            if epochs_since_improve >= train_config.patience:
                break
    return best_params, stats, log


def member_seed(seed: int, fold_index: int) -> int:
    """Per-member training seed, a function of the run seed and fold only."""
    state = np.random.SeedSequence((seed, fold_index)).generate_state(1, np.uint64)
    return int(state[0] % (2**63))


def train_ensemble(
    data: TrainingData,
    model_config: ModelConfig,
    train_config: TrainConfig,
    n_folds: int = 4,
    seed: int = 0,
) -> tuple[EnsembleModel, list[list[EpochStats]]]:
    """One member per validation fold; members are fully independent.

    Each member's seed derives only from (seed, fold index), so training
    them in any order, or separately, produces identical parameters.
    """
    subjects = sorted({r.recording.subject_id for r in data.recordings})
    folds = split_subjects(subjects, n_folds=n_folds, seed=seed)
    members = []
    logs = []
    for i, fold in enumerate(folds):
        cfg = replace(train_config, seed=member_seed(seed, i))
        params, stats, log = train_member(fold, data, model_config, cfg)
        members.append((params, stats))
        logs.append(log)
    return EnsembleModel(model_config, members), logs


# ---------------------------------------------------------------------------
# Persistence
#
# One member per file: JSON with float64 little-endian arrays in base64.
# JSON-with-base64 (rather than an archive format) keeps files byte-stable
# across runs; archives embed timestamps.
# ---------------------------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(
            np.ascontiguousarray(arr, dtype="<f8").tobytes()
        ).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def save_member(
    path: str | Path, params: ModelParams, stats: NormalizationStats
) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "model_config": params.config.to_json(),
        "normalization": stats.to_json(),
        "arrays": {name: _encode_array(arr) for name, arr in params.arrays().items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_member(path: str | Path) -> tuple[ModelParams, NormalizationStats]:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version!r}")
    config = ModelConfig.from_json(doc["model_config"])
    params = zero_params(config)
    arrays = params.arrays()
    stored = doc["arrays"]
    if set(stored) != set(arrays):
        raise DataError("model file arrays do not match the architecture")
    for name, arr in arrays.items():
        loaded = _decode_array(stored[name])
        if loaded.shape != arr.shape:
            raise DataError(f"array {name} has shape {loaded.shape}, "
                            f"expected {arr.shape}")
        arr[...] = loaded
    stats = NormalizationStats.from_json(doc["normalization"])
    return params, stats


def save_ensemble(
    directory: str | Path, ensemble: EnsembleModel, stem: str = "model"
) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (params, stats) in enumerate(ensemble.members):
        path = directory / f"{stem}.{i}.bin"
        save_member(path, params, stats)
        paths.append(path)
    return paths


def load_ensemble(paths: list[str | Path]) -> EnsembleModel:
    if not paths:
        raise DataError("no model files given")
    members = [load_member(p) for p in paths]
    return EnsembleModel(members[0][0].config, members)
