"""Exact reverse-mode differentiation of the recurrent network.

The backward pass replays a :class:`~seqpress.network.ForwardCache` over
the full sequence (no truncation) and produces one gradient tensor per
parameter tensor, plus the gradient of the loss with respect to every
skip-stream level.  The stream gradients exist so the additive-skip
gradient structure can be verified directly: with all stacked layers
zeroed, every level's stream gradient equals the top level's exactly.

Gradients are linear in the upstream seed: a zero ``dloss_dz`` yields
exactly zero everywhere.
"""

from __future__ import annotations

import numpy as np

from .errors import CacheMismatch, ShapeMismatch
from .network import (
    BiLstmParams,
    ForwardCache,
    LstmLayerCache,
    LstmParams,
    NetworkParams,
    OutputHeadParams,
    _as_f64,
)


def _lstm_layer_backward(p: LstmParams, cache: LstmLayerCache, d_h: np.ndarray):
    """Backward through one LSTM layer.

    ``d_h`` is the loss gradient with respect to each emitted hidden
    vector (recurrent flow is handled internally).  Returns ``(d_x,
    grads)`` with ``grads`` an :class:`LstmParams` of gradient tensors.
    """
    x, f, i, o, g, c, h = cache.x, cache.f, cache.i, cache.o, cache.candidate, cache.c, cache.h
    batch, steps, hidden = h.shape

    grads = {name: np.zeros_like(getattr(p, name)) for name in p.__dataclass_fields__}
    d_x = np.zeros_like(x)
    dh_rec = np.zeros((batch, hidden))
    dc_rec = np.zeros((batch, hidden))
    zeros_prev = np.zeros((batch, hidden))

    for t in range(steps - 1, -1, -1):
        dh = d_h[:, t] + dh_rec
        tanh_c = np.tanh(c[:, t])
        d_o = dh * tanh_c
        d_c = dh * o[:, t] * (1.0 - tanh_c * tanh_c) + dc_rec
        c_prev = c[:, t - 1] if t > 0 else zeros_prev
        h_prev = h[:, t - 1] if t > 0 else zeros_prev
        d_f = d_c * c_prev
        d_i = d_c * g[:, t]
        d_g = d_c * i[:, t]

        da_f = d_f * f[:, t] * (1.0 - f[:, t])
        da_i = d_i * i[:, t] * (1.0 - i[:, t])
        da_o = d_o * o[:, t] * (1.0 - o[:, t])
        da_g = d_g * (1.0 - g[:, t] * g[:, t])

        x_t = x[:, t]
        grads["w_xf"] += da_f.T @ x_t
        grads["w_hf"] += da_f.T @ h_prev
        grads["b_f"] += da_f.sum(axis=0)
        grads["w_xi"] += da_i.T @ x_t
        grads["w_hi"] += da_i.T @ h_prev
        grads["b_i"] += da_i.sum(axis=0)
        grads["w_xo"] += da_o.T @ x_t
        grads["w_ho"] += da_o.T @ h_prev
        grads["b_o"] += da_o.sum(axis=0)
        grads["w_xc"] += da_g.T @ x_t
        grads["w_hc"] += da_g.T @ h_prev
        grads["b_c"] += da_g.sum(axis=0)

        d_x[:, t] = da_f @ p.w_xf + da_i @ p.w_xi + da_o @ p.w_xo + da_g @ p.w_xc
        dh_rec = da_f @ p.w_hf + da_i @ p.w_hi + da_o @ p.w_ho + da_g @ p.w_hc
        dc_rec = d_c * f[:, t]

    return d_x, LstmParams(**grads)


def _zero_lstm_grads(p: LstmParams) -> LstmParams:
    return LstmParams(**{name: np.zeros_like(getattr(p, name))
                         for name in p.__dataclass_fields__})


def _validate_cache(net: NetworkParams, cache: ForwardCache, dz: np.ndarray):
    cfg = net.config
    if cache.x.shape[-1] != cfg.input_size:
        raise CacheMismatch("cached input width disagrees with the network")
    if len(cache.blocks) != cfg.num_stacked:
        raise CacheMismatch(
            f"cache has {len(cache.blocks)} stacked layers, network has {cfg.num_stacked}"
        )
    if cache.bilstm.merged.shape[-1] != cfg.hidden_size:
        raise CacheMismatch("cached hidden width disagrees with the network")
    if (cache.bilstm.bwd is None) == cfg.bidirectional:
        raise CacheMismatch("cache direction count disagrees with the network")
    for k, blk in enumerate(cache.blocks):
        if blk.h.shape != cache.bilstm.merged.shape:
            raise CacheMismatch(f"stacked cache {k} has inconsistent shape")
    if dz.shape != cache.z.shape:
        raise ShapeMismatch(f"dloss_dz has shape {dz.shape}, cache z is {cache.z.shape}")


def backward_pass(net: NetworkParams, cache: ForwardCache, dloss_dz):
    """Gradients of a scalar loss given ``dloss/dz``.

    Returns ``(grads, stream_grads)``: ``grads`` mirrors the parameter
    container one tensor per tensor; ``stream_grads[k]`` is the loss
    gradient with respect to the input of stacked layer ``k`` (empty list
    when the network has no stacked layers).
    """
    cfg = net.config
    dz = _as_f64(dloss_dz)
    if not cache.batched and dz.ndim == 2:
        dz = dz[None, :, :]
    _validate_cache(net, cache, dz)

    z = cache.z
    dpre = dz * z * (1.0 - z)
    d_w_hz = np.einsum("bto,bth->oh", dpre, cache.head_h)
    d_w_xz = np.einsum("bto,btd->od", dpre, cache.head_x)
    d_b_z = dpre.sum(axis=(0, 1))
    dh_top = dpre @ net.head.w_hz
    dx_head = dpre @ net.head.w_xz

    num_stacked = cfg.num_stacked
    stack_grads: list[LstmParams] = [None] * num_stacked  # type: ignore[list-item]
    stream_grads: list[np.ndarray] = [None] * num_stacked  # type: ignore[list-item]

    if num_stacked >= 1:
        # Top stacked layer: its hidden sequence feeds only the head, and
        # its input stream also feeds the head directly.
        d_x_top, stack_grads[-1] = _lstm_layer_backward(
            net.stack[-1], cache.blocks[-1], dh_top
        )
        stream_grads[-1] = dx_head + d_x_top
        for k in range(num_stacked - 2, -1, -1):
            d_up = stream_grads[k + 1]
            d_x_k, stack_grads[k] = _lstm_layer_backward(net.stack[k], cache.blocks[k], d_up)
            stream_grads[k] = d_up + d_x_k if cfg.residual else d_x_k
        d_merged = stream_grads[0]
    else:
        d_merged = dh_top

    bil = net.bilstm
    fwd_cache = cache.bilstm.fwd
    d_w_f_merge = np.einsum("bth,btk->hk", d_merged, fwd_cache.h)
    d_b_h = d_merged.sum(axis=(0, 1))
    d_hf = d_merged @ bil.w_f_merge
    _, fwd_grads = _lstm_layer_backward(bil.fwd, fwd_cache, d_hf)

    if cfg.bidirectional:
        bwd_cache = cache.bilstm.bwd
        hb_original = np.ascontiguousarray(bwd_cache.h[:, ::-1])
        d_w_b_merge = np.einsum("bth,btk->hk", d_merged, hb_original)
        d_hb = np.ascontiguousarray((d_merged @ bil.w_b_merge)[:, ::-1])
        _, bwd_grads = _lstm_layer_backward(bil.bwd, bwd_cache, d_hb)
    else:
        d_w_b_merge = np.zeros_like(bil.w_b_merge)
        bwd_grads = _zero_lstm_grads(bil.bwd)

    grads = NetworkParams(
        bilstm=BiLstmParams(
            fwd=fwd_grads,
            bwd=bwd_grads,
            w_f_merge=d_w_f_merge,
            w_b_merge=d_w_b_merge,
            b_h=d_b_h,
        ),
        stack=stack_grads,
        head=OutputHeadParams(w_hz=d_w_hz, w_xz=d_w_xz, b_z=d_b_z),
        config=cfg,
    )
    if not cache.batched:
        stream_grads = [sg[0] for sg in stream_grads]
    return grads, stream_grads
