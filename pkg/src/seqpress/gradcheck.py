"""Independent verification of the analytic gradients.

Two families of checks:

- :func:`finite_difference_check` compares every-tensor samples of the
  analytic parameter gradient against central differences of the batch
  objective.
- :func:`residual_gradient_decomposition_check` exercises the skip
  connections specifically: the stream telescoping identity, the exact
  pass-through of stream gradients when stacked blocks are zeroed, and
  central-difference agreement of the per-level stream gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import rng
from .backprop import backward_pass
from .errors import DataError
from .network import (
    NetworkParams,
    _is_bias,
    copy_params,
    flatten_params,
    forward_pass,
    param_layout,
    residual_block_forward,
)
from .training import loss_and_gradients

REL_FLOOR = 1e-8

# The difference quotient loses ~|L|*eps_machine/epsilon to roundoff, which
# at float64 can exceed the tolerances this module enforces on coordinates
# whose gradient is small.  Where the platform has a wider type (x87 80-bit
# or IEEE quad) the oracle side runs in it; the gradients under test stay
# float64 either way.
_FD_DTYPE = (np.longdouble
             if np.finfo(np.longdouble).eps < np.finfo(np.float64).eps
             else np.float64)


@dataclass(eq=False)
class GradCheckReport:
    """Outcome of a finite-difference sweep over parameter coordinates."""

    max_rel_err: float
    worst_coordinate: str
    worst_analytic: float
    worst_numeric: float
    epsilon: float
    seed: int
    num_coords: int
    per_tensor: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "max_rel_err": self.max_rel_err,
            "worst_coordinate": self.worst_coordinate,
            "worst_analytic": self.worst_analytic,
            "worst_numeric": self.worst_numeric,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "num_coords": self.num_coords,
            "per_tensor": dict(self.per_tensor),
        }


def _batch3d(x_seq, y_seq):
    x = np.asarray(x_seq, dtype=np.float64)
    y = np.asarray(y_seq, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if y.ndim == 2:
        y = y[None]
    if x.ndim != 3 or y.ndim != 3 or len(x) != len(y):
        raise DataError("gradcheck inputs must be matching (batch, seq_len, width)")
    return x, y


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


class _OracleObjective:
    """Straight-line reimplementation of the batch objective.

    Used only on the finite-difference side of the check.  It is written
    independently of the production forward pass (plain per-timestep
    loops over a flat parameter vector) and evaluates in ``_FD_DTYPE``,
    so a mismatch implicates the analytic gradients rather than shared
    code or oracle roundoff.
    """

    def __init__(self, net: NetworkParams, x: np.ndarray, y: np.ndarray,
                 l2_penalty: float, dloss_dz=None):
        self.cfg = net.config
        self.layout = {name: (off, shape) for name, off, shape in param_layout(net)}
        self.x = x.astype(_FD_DTYPE)
        self.y = y.astype(_FD_DTYPE)
        self.l2 = _FD_DTYPE(l2_penalty)
        # With an injected dz the data term becomes the linearization
        # sum(dz * z): its gradient is exactly what the backward pass
        # produces for that dz, so the comparison stays meaningful.
        self.dloss = None if dloss_dz is None else dloss_dz.astype(_FD_DTYPE)
        self.weight_slices = [
            (off, int(np.prod(shape)) if shape else 1)
            for name, (off, shape) in self.layout.items() if not _is_bias(name)
        ]

    def _tensor(self, flat: np.ndarray, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        size = int(np.prod(shape)) if shape else 1
        return flat[off:off + size].reshape(shape)

    def _lstm(self, flat: np.ndarray, prefix: str, x: np.ndarray) -> np.ndarray:
        t_ = lambda s: self._tensor(flat, f"{prefix}.{s}")
        w_xf, w_hf, b_f = t_("w_xf"), t_("w_hf"), t_("b_f")
        w_xi, w_hi, b_i = t_("w_xi"), t_("w_hi"), t_("b_i")
        w_xo, w_ho, b_o = t_("w_xo"), t_("w_ho"), t_("b_o")
        w_xc, w_hc, b_c = t_("w_xc"), t_("w_hc"), t_("b_c")
        batch, steps, _ = x.shape
        hidden = b_f.shape[0]
        h = np.zeros((batch, hidden), dtype=_FD_DTYPE)
        c = np.zeros((batch, hidden), dtype=_FD_DTYPE)
        out = np.empty((batch, steps, hidden), dtype=_FD_DTYPE)
        for t in range(steps):
            x_t = x[:, t]
            f = _sigmoid(x_t @ w_xf.T + h @ w_hf.T + b_f)
            i = _sigmoid(x_t @ w_xi.T + h @ w_hi.T + b_i)
            o = _sigmoid(x_t @ w_xo.T + h @ w_ho.T + b_o)
            cand = np.tanh(x_t @ w_xc.T + h @ w_hc.T + b_c)
            c = f * c + i * cand
            h = o * np.tanh(c)
            out[:, t] = h
        return out

    def __call__(self, flat: np.ndarray) -> np.longdouble:
        cfg = self.cfg
        x = self.x
        fwd_h = self._lstm(flat, "bilstm.fwd", x)
        if cfg.bidirectional:
            bwd_h = self._lstm(flat, "bilstm.bwd", x[:, ::-1])
            merged = (fwd_h @ self._tensor(flat, "bilstm.w_f_merge").T
                      + bwd_h[:, ::-1] @ self._tensor(flat, "bilstm.w_b_merge").T
                      + self._tensor(flat, "bilstm.b_h"))
        else:
            merged = (fwd_h @ self._tensor(flat, "bilstm.w_f_merge").T
                      + self._tensor(flat, "bilstm.b_h"))
        stream = merged
        head_h, head_x = merged, x
        for k in range(cfg.num_stacked):
            head_x = stream
            head_h = self._lstm(flat, f"stack.{k}", stream)
            stream = stream + head_h if cfg.residual else head_h
        pre = (head_h @ self._tensor(flat, "head.w_hz").T
               + head_x @ self._tensor(flat, "head.w_xz").T
               + self._tensor(flat, "head.b_z"))
        z = _sigmoid(pre)
        if self.dloss is not None:
            total = (self.dloss * z).sum()
        else:
            diff = z - self.y
            total = (diff * diff).sum() / len(x)
        if self.l2 != 0.0:
            reg = _FD_DTYPE(0.0)
            for off, size in self.weight_slices:
                w = flat[off:off + size]
                reg = reg + w @ w
            total = total + self.l2 * reg
        return total


def finite_difference_check(net: NetworkParams, x_seq, y_seq,
                            l2_penalty: float = 0.0, epsilon: float = 1e-5,
                            num_coords: int = 200, seed: int = 0,
                            dloss_dz=None, analytic_grads=None) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    Every parameter tensor contributes at least one checked coordinate;
    the remaining budget is drawn uniformly over all coordinates from a
    dedicated random stream, so reruns with the same seed check the same
    set.  Relative error uses ``|a - n| / max(|a|, |n|, 1e-8)``.  The
    difference quotient is evaluated by :class:`_OracleObjective`.

    ``dloss_dz`` replaces the squared-error data term with its
    linearization on both sides (injecting zeros must yield zero
    differences everywhere).  ``analytic_grads`` substitutes the supplied
    gradients (a parameter-shaped container or flat vector) for the
    computed ones, so a deliberately corrupted entry shows up in the
    report's worst coordinate.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise DataError("epsilon must lie in [1e-7, 1e-3]")
    x, y = _batch3d(x_seq, y_seq)
    layout = param_layout(net)
    if dloss_dz is not None:
        dz = np.asarray(dloss_dz, dtype=np.float64)
        if dz.ndim == 2:
            dz = dz[None]
        _, cache = forward_pass(net, x, training=True)
        grads, _ = backward_pass(net, cache, dz)
        flat_grads = flatten_params(grads)
        if l2_penalty != 0.0:
            theta = flatten_params(net)
            for name, off, shape in layout:
                if not _is_bias(name):
                    size = int(np.prod(shape)) if shape else 1
                    flat_grads[off:off + size] += 2.0 * l2_penalty * theta[off:off + size]
    else:
        dz = None
        _, grads = loss_and_gradients(net, x, y, l2_penalty)
        flat_grads = flatten_params(grads)
    if analytic_grads is not None:
        flat_grads = (np.asarray(analytic_grads, dtype=np.float64)
                      if isinstance(analytic_grads, np.ndarray)
                      else flatten_params(analytic_grads))
    total = len(flat_grads)

    gen = rng.stream(seed, rng.PURPOSE_GRADCHECK)
    chosen: set[int] = set()
    for name, offset, shape in layout:
        size = int(np.prod(shape)) if shape else 1
        chosen.add(offset + int(gen.integers(size)))
    while len(chosen) < min(num_coords, total):
        chosen.add(int(gen.integers(total)))
    coords = sorted(chosen)

    objective = _OracleObjective(net, x, y, l2_penalty, dloss_dz=dz)
    base = flatten_params(net).astype(_FD_DTYPE)
    eps = _FD_DTYPE(epsilon)
    max_rel = 0.0
    worst = ("", 0.0, 0.0)
    per_tensor: dict[str, float] = {name: 0.0 for name, _, _ in layout}
    for idx in coords:
        bumped = base.copy()
        bumped[idx] = base[idx] + eps
        loss_hi = objective(bumped)
        bumped[idx] = base[idx] - eps
        loss_lo = objective(bumped)
        numeric = float((loss_hi - loss_lo) / (2.0 * eps))
        analytic = float(flat_grads[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)

        name, offset = "", 0
        for tname, toffset, _ in layout:
            if toffset > idx:
                break
            name, offset = tname, toffset
        per_tensor[name] = max(per_tensor[name], rel)
        if rel >= max_rel:
            max_rel = rel
            worst = (f"{name}[{idx - offset}]", analytic, numeric)

    return GradCheckReport(
        max_rel_err=max_rel,
        worst_coordinate=worst[0],
        worst_analytic=worst[1],
        worst_numeric=worst[2],
        epsilon=epsilon,
        seed=seed,
        num_coords=len(coords),
        per_tensor=per_tensor,
    )


@dataclass(eq=False)
class DecompositionReport:
    """Outcome of the residual-specific gradient checks.

    ``telescoping_max_abs_err`` and ``zero_block_max_abs_err`` compare
    quantities that are equal by construction, so anything beyond zero
    (or a few float ulps) is a defect.  ``stream_grad_max_rel_err`` is a
    finite-difference bound like the parameter check's.
    """

    telescoping_max_abs_err: float
    zero_block_max_abs_err: float
    stream_grad_max_rel_err: float
    levels_checked: int
    epsilon: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "telescoping_max_abs_err": self.telescoping_max_abs_err,
            "zero_block_max_abs_err": self.zero_block_max_abs_err,
            "stream_grad_max_rel_err": self.stream_grad_max_rel_err,
            "levels_checked": self.levels_checked,
            "epsilon": self.epsilon,
            "seed": self.seed,
        }


def _data_loss_from_level(net: NetworkParams, level: int, stream_value: np.ndarray,
                          y: np.ndarray) -> float:
    """Data loss when the stack is re-run from ``stream_value`` at ``level``."""
    cfg = net.config
    num_stacked = cfg.num_stacked
    stream = stream_value
    head_x = stream_value
    hidden = None
    for k in range(level, num_stacked):
        head_x = stream
        stream, hidden, _ = residual_block_forward(net.stack[k], stream,
                                                   residual=cfg.residual)
    pre = hidden @ net.head.w_hz.T + head_x @ net.head.w_xz.T + net.head.b_z
    z = expit(pre)
    diff = z - y
    return float((diff * diff).sum() / len(y))


def residual_gradient_decomposition_check(net: NetworkParams, x_seq, y_seq,
                                          epsilon: float = 1e-5,
                                          coords_per_level: int = 8,
                                          seed: int = 0) -> DecompositionReport:
    """Verify the additive-skip gradient structure of a stacked network.

    Three checks, all on the pure data loss:

    1. Telescoping: each cached stream equals any earlier stream plus the
       intervening hidden sequences, summed in forward order.
    2. Zeroed blocks: with every stacked layer's parameters set to zero,
       hidden outputs vanish and the loss gradient with respect to every
       stream is identical (skips pass gradients through unchanged).
    3. Finite differences: perturbing stream coordinates and re-running
       the upper stack reproduces the analytic per-level stream gradients.

    Requires at least one stacked layer and ``residual=True``.
    """
    cfg = net.config
    if cfg.num_stacked < 1:
        raise DataError("decomposition check needs at least one stacked layer")
    if not cfg.residual:
        raise DataError("decomposition check applies to the residual variant")
    x, y = _batch3d(x_seq, y_seq)

    z, cache = forward_pass(net, x, training=True)
    _, stream_grads = backward_pass(net, cache, 2.0 * (z - y) / len(x))

    tele = 0.0
    num_streams = len(cache.streams)  # num_stacked + 1
    for m in range(num_streams):
        acc = cache.streams[m]
        for j in range(m + 1, num_streams):
            acc = acc + cache.blocks[j - 1].h
            tele = max(tele, float(np.abs(acc - cache.streams[j]).max()))

    zeroed = copy_params(net)
    for layer in zeroed.stack:
        for name in type(layer).__dataclass_fields__:
            getattr(layer, name)[...] = 0.0
    z0, cache0 = forward_pass(zeroed, x, training=True)
    _, sg0 = backward_pass(zeroed, cache0, 2.0 * (z0 - y) / len(x))
    zero_err = 0.0
    for grad in sg0[:-1]:
        zero_err = max(zero_err, float(np.abs(grad - sg0[-1]).max()))

    gen = rng.stream(seed, rng.PURPOSE_GRADCHECK, session=1)
    fd_rel = 0.0
    for level in range(cfg.num_stacked):
        base = cache.streams[level]
        analytic = stream_grads[level]
        for _ in range(coords_per_level):
            b = int(gen.integers(base.shape[0]))
            t = int(gen.integers(base.shape[1]))
            j = int(gen.integers(base.shape[2]))
            bumped = base.copy()
            bumped[b, t, j] = base[b, t, j] + epsilon
            hi = _data_loss_from_level(net, level, bumped, y)
            bumped[b, t, j] = base[b, t, j] - epsilon
            lo = _data_loss_from_level(net, level, bumped, y)
            numeric = (hi - lo) / (2.0 * epsilon)
            a = float(analytic[b, t, j])
            fd_rel = max(fd_rel, abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR))

    return DecompositionReport(
        telescoping_max_abs_err=tele,
        zero_block_max_abs_err=zero_err,
        stream_grad_max_rel_err=fd_rel,
        levels_checked=cfg.num_stacked,
        epsilon=epsilon,
        seed=seed,
    )
