"""Global attention around a resampling block.

The resampled map ``f_d`` supplies the queries and the un-resampled input
``f`` supplies keys and values, so every output pixel attends to the whole
input. Two attention stages run back to back, each with an additive skip of
its own query input, and the second output gets ``f_dr`` added once more::

    f_d1 = attn(q=f_dr, kv=f_r) + f_dr
    f_d2 = attn(q=f_d1, kv=f_r) + f_d1
    f_o  = reshape(f_d2 + f_dr)

With one head the logits are divided by sqrt(C); with ``h`` heads each head
works on C/h channels and divides by sqrt(C/h).
"""

from __future__ import annotations

import math

import numpy as np

from . import blocks

ATTENTION_BUDGET = 9216  # max pixels on either side of the attention matrix


def default_heads(channels: int) -> int:
    return 8 if channels >= 64 else 1


def softmax_rows(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _linear(x, w, b):
    return x @ w.T + b


def attention_stage(xq: np.ndarray, xkv: np.ndarray, p: dict, heads: int, keep: bool = True):
    """One stage: ``softmax(q k^T / scale) v`` projected, plus the ``xq`` skip.

    ``xq``: (Nq, C) pixel vectors, ``xkv``: (Nk, Cin). Returns (out, cache);
    with ``keep=False`` the cache is dropped so large maps do not hold every
    head's attention matrix in memory at once.
    """
    C = p["q.weight"].shape[0]
    if C % heads:
        raise ValueError(f"{C} channels do not split into {heads} heads")
    dh = C // heads
    scale = 1.0 / math.sqrt(C if heads == 1 else dh)
    q = _linear(xq, p["q.weight"], p["q.bias"])
    k = _linear(xkv, p["k.weight"], p["k.bias"])
    v = _linear(xkv, p["v.weight"], p["v.bias"])
    weights = []
    o = np.empty_like(q)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        a = softmax_rows((q[:, sl] @ k[:, sl].T) * scale)
        if keep:
            weights.append(a)
        o[:, sl] = a @ v[:, sl]
        del a
    out = _linear(o, p["proj.weight"], p["proj.bias"]) + xq
    if not keep:
        return out, None
    return out, (xq, xkv, q, k, v, o, weights, scale, heads)


def attention_stage_backward(dout: np.ndarray, cache, p: dict):
    xq, xkv, q, k, v, o, weights, scale, heads = cache
    dh = q.shape[1] // heads
    g = {}
    g["proj.weight"] = dout.T @ o
    g["proj.bias"] = dout.sum(axis=0)
    do = dout @ p["proj.weight"]
    dq, dk, dv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
    for h, a in enumerate(weights):
        sl = slice(h * dh, (h + 1) * dh)
        da = do[:, sl] @ v[:, sl].T
        dv[:, sl] = a.T @ do[:, sl]
        ds = a * (da - np.sum(da * a, axis=1, keepdims=True)) * scale
        dq[:, sl] = ds @ k[:, sl]
        dk[:, sl] = ds.T @ q[:, sl]
    g["q.weight"], g["q.bias"] = dq.T @ xq, dq.sum(axis=0)
    g["k.weight"], g["k.bias"] = dk.T @ xkv, dk.sum(axis=0)
    g["v.weight"], g["v.bias"] = dv.T @ xkv, dv.sum(axis=0)
    dxq = dout + dq @ p["q.weight"]
    dxkv = dk @ p["k.weight"] + dv @ p["v.weight"]
    return dxq, dxkv, g


def _sub(params: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def global_attention(f: np.ndarray, params: dict, resampler: str, heads: int = 1, keep: bool = True):
    """Apply ``resampler`` to ``f`` (C, H, W) and refine it with two attention stages.

    ``resampler`` is one of ``rbnd``, ``rbnu``, ``conv`` (stride-2) or
    ``subpixel``; its weights live under ``resample.`` in ``params``, the
    attention stages under ``stage1.`` and ``stage2.``.
    """
    C_in, H, W = f.shape
    f_d, rcache = blocks.resample(f, _sub(params, "resample."), resampler)
    C, Hd, Wd = f_d.shape
    if max(H * W, Hd * Wd) > ATTENTION_BUDGET:
        raise ValueError(
            f"attention over {H}x{W} -> {Hd}x{Wd} exceeds the budget of {ATTENTION_BUDGET} pixels"
        )
    f_r = f.reshape(C_in, -1).T
    f_dr = f_d.reshape(C, -1).T
    f_d1, c1 = attention_stage(f_dr, f_r, _sub(params, "stage1."), heads, keep)
    f_d2, c2 = attention_stage(f_d1, f_r, _sub(params, "stage2."), heads, keep)
    f_o = (f_d2 + f_dr).T.reshape(C, Hd, Wd)
    if not keep:
        return f_o, None
    return f_o, (f, f_d, rcache, c1, c2, resampler)


def attention_weights(cache) -> list[np.ndarray]:
    """Softmax matrices of both stages, for inspection."""
    return list(cache[3][6]) + list(cache[4][6])


def global_attention_backward(df_o: np.ndarray, cache, params: dict):
    f, f_d, rcache, c1, c2, resampler = cache
    C, Hd, Wd = f_d.shape
    g_o = df_o.reshape(C, -1).T
    grads = {}
    dd1, dkv2, g2 = attention_stage_backward(g_o, c2, _sub(params, "stage2."))
    df_dr = g_o.copy()
    df_dr_1, dkv1, g1 = attention_stage_backward(dd1, c1, _sub(params, "stage1."))
    df_dr += df_dr_1
    grads.update({"stage1." + k: v for k, v in g1.items()})
    grads.update({"stage2." + k: v for k, v in g2.items()})
    df = (dkv1 + dkv2).T.reshape(f.shape)
    df_d = df_dr.T.reshape(C, Hd, Wd)
    dx, rgrads = blocks.resample_backward(df_d, rcache, _sub(params, "resample."), resampler)
    grads.update({"resample." + k: v for k, v in rgrads.items()})
    return df + dx, grads
