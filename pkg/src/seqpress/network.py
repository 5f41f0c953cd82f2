"""Deep recurrent network for per-timestep sequence regression.

The model reads a feature sequence and emits one bounded output vector per
timestep:

* first layer: forward and backward LSTM passes over the input, merged per
  timestep by a purely affine map (no nonlinearity on the merge),
* stacked layer ``k``: ``stream[k+1] = lstm_k(stream[k]) + stream[k]``,
  an additive skip that keeps an identity path through the depth,
* head: ``z_t = sigmoid(w_hz @ h_t + w_xz @ x_t + b_z)`` where ``h_t`` is the
  top layer's hidden state and ``x_t`` is the input the top layer received.

Outputs therefore live in (0, 1) and targets are expected max-scaled.

All arithmetic is float64.  A single-threaded pass with identical
parameters and input reproduces its outputs bitwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit

from . import rng
from .errors import DimensionMismatch, NonFiniteActivation

# Depth beyond this is allowed but gets a warning: returns diminish and
# training cost grows roughly linearly with the stack.
RECOMMENDED_MAX_DEPTH = 4

# Serialization order for one LSTM layer: gate-major (forget, input,
# output, candidate); within a gate: input weights, recurrent weights,
# bias.  Checkpoint files and flat parameter vectors both use this order.
LSTM_FIELDS = (
    "w_xf", "w_hf", "b_f",
    "w_xi", "w_hi", "b_i",
    "w_xo", "w_ho", "b_o",
    "w_xc", "w_hc", "b_c",
)


def _as_f64(value) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(value, dtype=np.float64))


@dataclass(eq=False)
class NetworkConfig:
    """Architecture hyperparameters.

    ``num_layers`` counts every LSTM layer including the bidirectional
    first one, so ``num_layers=2`` means one bidirectional layer plus one
    stacked block.
    """

    hidden_size: int = 128
    num_layers: int = 2
    seq_len: int = 32
    input_size: int = 7
    output_size: int = 3
    bidirectional: bool = True
    residual: bool = True

    def __post_init__(self):
        if self.hidden_size < 1:
            raise DimensionMismatch(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.num_layers < 1:
            raise DimensionMismatch(f"num_layers must be >= 1, got {self.num_layers}")
        if self.seq_len < 1:
            raise DimensionMismatch(f"seq_len must be >= 1, got {self.seq_len}")
        if self.input_size < 1 or self.output_size < 1:
            raise DimensionMismatch("input_size and output_size must be >= 1")
        if self.num_layers > RECOMMENDED_MAX_DEPTH:
            warnings.warn(
                f"num_layers={self.num_layers} exceeds the recommended depth "
                f"ceiling of {RECOMMENDED_MAX_DEPTH}; training may be slow and unstable",
                stacklevel=2,
            )

    @property
    def num_stacked(self) -> int:
        return self.num_layers - 1

    @property
    def head_input_size(self) -> int:
        """Width of the skip-stream sequence the output head reads."""
        return self.hidden_size if self.num_layers >= 2 else self.input_size

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "seq_len": self.seq_len,
            "input_size": self.input_size,
            "output_size": self.output_size,
            "bidirectional": self.bidirectional,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(eq=False)
class LstmParams:
    """Weights of one LSTM layer.

    Input weights are ``(hidden, in)``, recurrent weights ``(hidden,
    hidden)``, biases ``(hidden,)``.  Gates use the logistic sigmoid, the
    cell candidate uses tanh.
    """

    w_xf: np.ndarray
    w_hf: np.ndarray
    b_f: np.ndarray
    w_xi: np.ndarray
    w_hi: np.ndarray
    b_i: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    b_o: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        for name in LSTM_FIELDS:
            setattr(self, name, _as_f64(getattr(self, name)))
        hidden, inp = self.w_xf.shape
        for name in LSTM_FIELDS:
            arr = getattr(self, name)
            want = (
                (hidden, inp) if name.startswith("w_x")
                else (hidden, hidden) if name.startswith("w_h")
                else (hidden,)
            )
            if arr.shape != want:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {want}")

    @property
    def hidden_size(self) -> int:
        return self.w_xf.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_xf.shape[1]

    def named_arrays(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in LSTM_FIELDS:
            yield prefix + name, getattr(self, name)


@dataclass(eq=False)
class BiLstmParams:
    """Bidirectional first layer: two LSTM passes plus the affine merge.

    The merged output is ``w_f_merge @ h_forward + w_b_merge @ h_backward
    + b_h`` per timestep; intentionally no nonlinearity, so the merge can
    scale or mix directions freely.
    """

    fwd: LstmParams
    bwd: LstmParams
    w_f_merge: np.ndarray
    w_b_merge: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        self.w_f_merge = _as_f64(self.w_f_merge)
        self.w_b_merge = _as_f64(self.w_b_merge)
        self.b_h = _as_f64(self.b_h)
        hidden = self.fwd.hidden_size
        if self.bwd.hidden_size != hidden or self.bwd.input_size != self.fwd.input_size:
            raise DimensionMismatch("forward and backward passes must share sizes")
        for name in ("w_f_merge", "w_b_merge"):
            if getattr(self, name).shape != (hidden, hidden):
                raise DimensionMismatch(f"{name} must be (hidden, hidden)")
        if self.b_h.shape != (hidden,):
            raise DimensionMismatch("b_h must be (hidden,)")

    @property
    def hidden_size(self) -> int:
        return self.fwd.hidden_size

    def named_arrays(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        yield from self.fwd.named_arrays(prefix + "fwd.")
        yield from self.bwd.named_arrays(prefix + "bwd.")
        yield prefix + "w_f_merge", self.w_f_merge
        yield prefix + "w_b_merge", self.w_b_merge
        yield prefix + "b_h", self.b_h


@dataclass(eq=False)
class OutputHeadParams:
    """Per-timestep sigmoid readout from (top hidden, top stream input)."""

    w_hz: np.ndarray
    w_xz: np.ndarray
    b_z: np.ndarray

    def __post_init__(self):
        self.w_hz = _as_f64(self.w_hz)
        self.w_xz = _as_f64(self.w_xz)
        self.b_z = _as_f64(self.b_z)
        out = self.w_hz.shape[0]
        if self.w_xz.shape[0] != out or self.b_z.shape != (out,):
            raise DimensionMismatch("head outputs disagree across w_hz/w_xz/b_z")

    @property
    def output_size(self) -> int:
        return self.w_hz.shape[0]

    def named_arrays(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        yield prefix + "w_hz", self.w_hz
        yield prefix + "w_xz", self.w_xz
        yield prefix + "b_z", self.b_z


@dataclass(eq=False)
class NetworkParams:
    """Complete parameter set plus its architecture description.

    ``named_arrays`` yields every tensor in the fixed serialization order
    used by checkpoints and flat vectors: bidirectional forward gates,
    backward gates, merge, stacked layers in order, head.
    """

    bilstm: BiLstmParams
    stack: list[LstmParams]
    head: OutputHeadParams
    config: NetworkConfig

    def __post_init__(self):
        cfg = self.config
        if len(self.stack) != cfg.num_stacked:
            raise DimensionMismatch(
                f"stack has {len(self.stack)} layers, config wants {cfg.num_stacked}"
            )
        if self.bilstm.hidden_size != cfg.hidden_size:
            raise DimensionMismatch("bidirectional layer width disagrees with config")
        if self.bilstm.fwd.input_size != cfg.input_size:
            raise DimensionMismatch("bidirectional layer input disagrees with config")
        for k, layer in enumerate(self.stack):
            if layer.hidden_size != cfg.hidden_size or layer.input_size != cfg.hidden_size:
                raise DimensionMismatch(f"stacked layer {k} has inconsistent sizes")
        if self.head.output_size != cfg.output_size:
            raise DimensionMismatch("head output width disagrees with config")
        if self.head.w_hz.shape[1] != cfg.hidden_size:
            raise DimensionMismatch("head hidden width disagrees with config")
        if self.head.w_xz.shape[1] != cfg.head_input_size:
            raise DimensionMismatch("head stream width disagrees with config")

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.bilstm.named_arrays("bilstm.")
        for k, layer in enumerate(self.stack):
            yield from layer.named_arrays(f"stack.{k}.")
        yield from self.head.named_arrays("head.")


def _is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b")


def params_map(fn, *nets: NetworkParams) -> NetworkParams:
    """Apply ``fn`` leafwise across one or more same-shaped parameter sets."""

    def lstm(*ps: LstmParams) -> LstmParams:
        return LstmParams(**{f: fn(*(getattr(p, f) for p in ps)) for f in LSTM_FIELDS})

    first = nets[0]
    bil = BiLstmParams(
        fwd=lstm(*(n.bilstm.fwd for n in nets)),
        bwd=lstm(*(n.bilstm.bwd for n in nets)),
        w_f_merge=fn(*(n.bilstm.w_f_merge for n in nets)),
        w_b_merge=fn(*(n.bilstm.w_b_merge for n in nets)),
        b_h=fn(*(n.bilstm.b_h for n in nets)),
    )
    stack = [lstm(*(n.stack[k] for n in nets)) for k in range(len(first.stack))]
    head = OutputHeadParams(
        w_hz=fn(*(n.head.w_hz for n in nets)),
        w_xz=fn(*(n.head.w_xz for n in nets)),
        b_z=fn(*(n.head.b_z for n in nets)),
    )
    return NetworkParams(bilstm=bil, stack=stack, head=head, config=first.config)


def zeros_like_params(net: NetworkParams) -> NetworkParams:
    return params_map(np.zeros_like, net)


def copy_params(net: NetworkParams) -> NetworkParams:
    return params_map(np.copy, net)


def l2_norm_sq(net: NetworkParams) -> float:
    """Sum of squared weights.  Biases are excluded from the penalty."""
    return float(sum((a * a).sum() for n, a in net.named_arrays() if not _is_bias(n)))


def global_norm(net: NetworkParams) -> float:
    """L2 norm over every tensor, biases included (used for clipping)."""
    return float(np.sqrt(sum((a * a).sum() for _, a in net.named_arrays())))


def param_layout(net: NetworkParams) -> list[tuple[str, int, tuple]]:
    """(name, flat offset, shape) for each tensor, in serialization order."""
    layout = []
    offset = 0
    for name, arr in net.named_arrays():
        layout.append((name, offset, arr.shape))
        offset += arr.size
    return layout


def flatten_params(net: NetworkParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in net.named_arrays()])


def unflatten_params(net: NetworkParams, vec: np.ndarray) -> NetworkParams:
    """Rebuild a parameter set from a flat vector (serialization order)."""
    vec = np.asarray(vec, dtype=np.float64)
    expected = sum(arr.size for _, arr in net.named_arrays())
    if vec.shape != (expected,):
        raise DimensionMismatch(f"flat vector has {vec.shape}, expected ({expected},)")
    cursor = [0]

    def take(template: np.ndarray) -> np.ndarray:
        n = template.size
        out = vec[cursor[0]:cursor[0] + n].reshape(template.shape).copy()
        cursor[0] += n
        return out

    return params_map(take, net)


def init_network(config: NetworkConfig, seed: int = 0) -> NetworkParams:
    """Draw initial parameters.

    Matrices are uniform in ``[-1/sqrt(hidden), +1/sqrt(hidden)]``; biases
    start at zero except the forget-gate bias, which starts at one so
    early training keeps cell memory open.
    """
    gen = rng.stream(seed, rng.PURPOSE_INIT)
    hidden = config.hidden_size
    bound = 1.0 / np.sqrt(hidden)

    def lstm(input_size: int) -> LstmParams:
        fields = {}
        for name in LSTM_FIELDS:
            if name.startswith("w_x"):
                fields[name] = rng.uniform(gen, (hidden, input_size), -bound, bound)
            elif name.startswith("w_h"):
                fields[name] = rng.uniform(gen, (hidden, hidden), -bound, bound)
            elif name == "b_f":
                fields[name] = np.ones(hidden)
            else:
                fields[name] = np.zeros(hidden)
        return LstmParams(**fields)

    fwd = lstm(config.input_size)
    bwd = lstm(config.input_size)
    w_f_merge = rng.uniform(gen, (hidden, hidden), -bound, bound)
    w_b_merge = rng.uniform(gen, (hidden, hidden), -bound, bound)
    if not config.bidirectional:
        # The reverse pass is skipped entirely; its tensors stay inert zeros
        # so serialization keeps a single layout for both variants.
        bwd = LstmParams(**{f: np.zeros_like(getattr(bwd, f)) for f in LSTM_FIELDS})
        w_b_merge = np.zeros_like(w_b_merge)
    bil = BiLstmParams(fwd=fwd, bwd=bwd, w_f_merge=w_f_merge, w_b_merge=w_b_merge,
                       b_h=np.zeros(hidden))
    stack = [lstm(hidden) for _ in range(config.num_stacked)]
    head = OutputHeadParams(
        w_hz=rng.uniform(gen, (config.output_size, hidden), -bound, bound),
        w_xz=rng.uniform(gen, (config.output_size, config.head_input_size), -bound, bound),
        b_z=np.zeros(config.output_size),
    )
    return NetworkParams(bilstm=bil, stack=stack, head=head, config=config)


# --- forward pass ---------------------------------------------------------


@dataclass(eq=False)
class HiddenState:
    """Hidden and cell vectors carried between timesteps."""

    h: np.ndarray
    c: np.ndarray


@dataclass(eq=False)
class GateActivations:
    """Per-step gate values kept for the backward pass."""

    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    candidate: np.ndarray


@dataclass(eq=False)
class LstmLayerCache:
    """Everything the backward pass needs to replay one LSTM layer."""

    x: np.ndarray  # (B, T, in)
    f: np.ndarray  # (B, T, hidden), likewise below
    i: np.ndarray
    o: np.ndarray
    candidate: np.ndarray
    c: np.ndarray
    h: np.ndarray


@dataclass(eq=False)
class BiLstmCache:
    """Caches for both directions.

    ``bwd`` holds the reverse pass run on the time-reversed input, i.e.
    ``bwd.h[:, t]`` is the backward hidden state for original timestep
    ``T - 1 - t``.  ``merged`` is in original time order.
    """

    fwd: LstmLayerCache
    bwd: Optional[LstmLayerCache]
    merged: np.ndarray


@dataclass(eq=False)
class ForwardCache:
    """Full activation record of one training-mode forward pass."""

    x: np.ndarray
    bilstm: BiLstmCache
    blocks: list[LstmLayerCache]
    streams: list[np.ndarray]  # streams[0] = merged; streams[k+1] = block k output
    head_h: np.ndarray
    head_x: np.ndarray
    z: np.ndarray
    batched: bool


def _cell_batch(p: LstmParams, x_t, h_prev, c_prev):
    f = expit(x_t @ p.w_xf.T + h_prev @ p.w_hf.T + p.b_f)
    i = expit(x_t @ p.w_xi.T + h_prev @ p.w_hi.T + p.b_i)
    o = expit(x_t @ p.w_xo.T + h_prev @ p.w_ho.T + p.b_o)
    g = np.tanh(x_t @ p.w_xc.T + h_prev @ p.w_hc.T + p.b_c)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return f, i, o, g, c, h


def lstm_cell_forward(params: LstmParams, x_t, prev: HiddenState):
    """One LSTM step on a single feature vector.

    Returns the new :class:`HiddenState` and the gate activations.  The
    sequence-level code uses the batched equivalent; this entry point
    exists for single-step inspection and tests.
    """
    x_t = _as_f64(x_t)
    if x_t.shape != (params.input_size,):
        raise DimensionMismatch(f"x_t has shape {x_t.shape}, expected ({params.input_size},)")
    h_prev = _as_f64(prev.h)
    c_prev = _as_f64(prev.c)
    if h_prev.shape != (params.hidden_size,) or c_prev.shape != (params.hidden_size,):
        raise DimensionMismatch("previous state width disagrees with the layer")
    f, i, o, g, c, h = _cell_batch(params, x_t[None, :], h_prev[None, :], c_prev[None, :])
    state = HiddenState(h=h[0], c=c[0])
    return state, GateActivations(f=f[0], i=i[0], o=o[0], candidate=g[0])


def _lstm_layer_forward(p: LstmParams, x: np.ndarray) -> LstmLayerCache:
    batch, steps, _ = x.shape
    hidden = p.hidden_size
    shape = (batch, steps, hidden)
    f = np.empty(shape)
    i = np.empty(shape)
    o = np.empty(shape)
    g = np.empty(shape)
    c = np.empty(shape)
    h = np.empty(shape)
    h_prev = np.zeros((batch, hidden))
    c_prev = np.zeros((batch, hidden))
    for t in range(steps):
        f_t, i_t, o_t, g_t, c_t, h_t = _cell_batch(p, x[:, t], h_prev, c_prev)
        f[:, t] = f_t
        i[:, t] = i_t
        o[:, t] = o_t
        g[:, t] = g_t
        c[:, t] = c_t
        h[:, t] = h_t
        h_prev = h_t
        c_prev = c_t
    return LstmLayerCache(x=x, f=f, i=i, o=o, candidate=g, c=c, h=h)


def _first_bad_timestep(arr: np.ndarray) -> int:
    ok = np.isfinite(arr).all(axis=tuple(d for d in range(arr.ndim) if d != 1))
    return int(np.argmin(ok))


def _check_finite(arr: np.ndarray, layer: str):
    if not np.isfinite(arr).all():
        raise NonFiniteActivation(layer, _first_bad_timestep(arr))


def _promote(x_seq, input_size: int):
    x = _as_f64(x_seq)
    batched = x.ndim == 3
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3 or x.shape[-1] != input_size:
        raise DimensionMismatch(
            f"input has shape {np.shape(x_seq)}, expected (T, {input_size}) or (B, T, {input_size})"
        )
    if x.shape[1] < 1:
        raise DimensionMismatch("input must have at least one timestep")
    return x, batched


def bilstm_forward(params: BiLstmParams, x_seq, bidirectional: bool = True):
    """Run the first layer; returns the merged sequence and its cache.

    Accepts ``(T, in)`` or ``(B, T, in)`` and matches the input rank on
    output.  With ``bidirectional=False`` the reverse pass is skipped and
    the merge reduces to ``w_f_merge @ h_forward + b_h``.
    """
    x, batched = _promote(x_seq, params.fwd.input_size)
    fwd = _lstm_layer_forward(params.fwd, x)
    if bidirectional:
        bwd = _lstm_layer_forward(params.bwd, np.ascontiguousarray(x[:, ::-1]))
        merged = (
            fwd.h @ params.w_f_merge.T
            + np.ascontiguousarray(bwd.h[:, ::-1]) @ params.w_b_merge.T
            + params.b_h
        )
    else:
        bwd = None
        merged = fwd.h @ params.w_f_merge.T + params.b_h
    cache = BiLstmCache(fwd=fwd, bwd=bwd, merged=merged)
    return (merged if batched else merged[0]), cache


def residual_block_forward(params: LstmParams, x_seq, residual: bool = True):
    """One stacked layer: LSTM plus (optionally) the additive skip.

    Returns ``(next stream, hidden sequence, cache)``.  With
    ``residual=False`` the stream is replaced by the hidden sequence
    instead of summed with it (the ablation variant).
    """
    x, batched = _promote(x_seq, params.input_size)
    cache = _lstm_layer_forward(params, x)
    x_next = x + cache.h if residual else cache.h
    if batched:
        return x_next, cache.h, cache
    return x_next[0], cache.h[0], cache


def forward_pass(net: NetworkParams, x_seq, training: bool = False):
    """Full forward pass.

    Returns ``(z, cache)`` where ``cache`` is ``None`` unless
    ``training=True``.  ``x_seq`` may be ``(T, in)`` or ``(B, T, in)``;
    ``z`` matches the input rank.  Raises :class:`NonFiniteActivation`
    with the first offending layer and timestep if anything non-finite
    appears mid-pass.
    """
    cfg = net.config
    x, batched = _promote(x_seq, cfg.input_size)
    _check_finite(x, "input")

    _, bil_cache = bilstm_forward(net.bilstm, x, bidirectional=cfg.bidirectional)
    _check_finite(bil_cache.merged, "bilstm")

    streams = [bil_cache.merged]
    blocks: list[LstmLayerCache] = []
    for k, layer in enumerate(net.stack):
        cache_k = _lstm_layer_forward(layer, streams[k])
        _check_finite(cache_k.h, f"stack.{k}")
        blocks.append(cache_k)
        streams.append(streams[k] + cache_k.h if cfg.residual else cache_k.h)

    if cfg.num_stacked >= 1:
        head_h = blocks[-1].h
        head_x = streams[cfg.num_stacked - 1]
    else:
        head_h = bil_cache.merged
        head_x = x
    pre = head_h @ net.head.w_hz.T + head_x @ net.head.w_xz.T + net.head.b_z
    z = expit(pre)
    _check_finite(z, "head")

    if not training:
        return (z if batched else z[0]), None
    cache = ForwardCache(
        x=x, bilstm=bil_cache, blocks=blocks, streams=streams,
        head_h=head_h, head_x=head_x, z=z, batched=batched,
    )
    return (z if batched else z[0]), cache
