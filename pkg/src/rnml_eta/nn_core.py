"""Small float64 neural-network toolkit with hand-derived backward passes.

Every block is a ``*_forward`` function returning its output plus a cache,
and a matching ``*_backward`` that turns an upstream gradient into gradients
for its inputs and parameters.  Parameters live in flat ``dict[str, ndarray]``
containers so that the optimizer, the gradient checker and the checkpoint
format can treat them uniformly.

Shapes: embedding tables are stored ``(d, V)`` (one column per item);
activations are batch-first ``(B, features)``; sequences are ``(B, T, F)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import DataCorruptionError, InvalidArgumentError, NonFiniteError

Params = dict  # name -> np.ndarray

NORM_EPS = 1e-12
CKPT_MAGIC = b"RNMLCKPT"
CKPT_VERSION = 1


# --- initialization --------------------------------------------------------

def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def init_mlp(rng: np.random.Generator, prefix: str, sizes, params: Params | None = None) -> Params:
    """Weights ``{prefix}.{i}.W`` of shape ``(sizes[i], sizes[i+1])`` and zero biases."""
    params = {} if params is None else params
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.{i}.W"] = uniform_init(rng, (a, b))
        params[f"{prefix}.{i}.b"] = np.zeros(b)
    return params


def init_lstm(rng: np.random.Generator, prefix: str, n_in: int, hidden: int, params: Params | None = None) -> Params:
    """Gate order is input, forget, output, candidate; the forget bias starts at +1."""
    params = {} if params is None else params
    params[f"{prefix}.Wx"] = uniform_init(rng, (n_in, 4 * hidden))
    params[f"{prefix}.Wh"] = uniform_init(rng, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    params[f"{prefix}.b"] = b
    return params


def zeros_like_params(params: Mapping[str, np.ndarray]) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


# --- embedding -------------------------------------------------------------

def embed_lookup(table: np.ndarray, ids) -> np.ndarray:
    """Columns of ``table`` for 0-based ``ids``: output ``(d, len(ids))``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[1]):
        raise InvalidArgumentError(f"embedding id outside [0, {table.shape[1]})")
    return table[:, ids]


def embed_backward(grad_out: np.ndarray, ids, vocab: int, grad_table: np.ndarray | None = None) -> np.ndarray:
    """Accumulate column gradients; repeated ids add up, untouched columns stay zero."""
    ids = np.asarray(ids, dtype=np.int64)
    if grad_table is None:
        grad_table = np.zeros((grad_out.shape[0], vocab))
    np.add.at(grad_table.T, ids, grad_out.T)
    return grad_table


# --- affine / MLP ----------------------------------------------------------

def affine_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ w + b


def affine_backward(w: np.ndarray, x: np.ndarray, dy: np.ndarray):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def mlp_layers(params: Mapping[str, np.ndarray], prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.W" in params:
        n += 1
    return n


def mlp_forward(params: Mapping[str, np.ndarray], prefix: str, x: np.ndarray):
    """Affine + ReLU for every layer but the last, which stays linear."""
    n = mlp_layers(params, prefix)
    inputs = []
    pre = []
    h = x
    for i in range(n):
        inputs.append(h)
        z = affine_forward(params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"], h)
        pre.append(z)
        h = relu(z) if i < n - 1 else z
    return h, (prefix, inputs, pre)


def mlp_backward(params: Mapping[str, np.ndarray], cache, dy: np.ndarray, grads: Params):
    prefix, inputs, pre = cache
    n = len(inputs)
    d = dy
    for i in reversed(range(n)):
        if i < n - 1:
            # ReLU subgradient at exactly 0 is 0.
            d = d * (pre[i] > 0.0)
        dx, dw, db = affine_backward(params[f"{prefix}.{i}.W"], inputs[i], d)
        _accumulate(grads, f"{prefix}.{i}.W", dw)
        _accumulate(grads, f"{prefix}.{i}.b", db)
        d = dx
    return d


def _accumulate(grads: Params, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value.copy() if isinstance(value, np.ndarray) else np.asarray(value)


# --- LSTM ------------------------------------------------------------------

@dataclass
class LstmCache:
    order: np.ndarray
    steps: np.ndarray  # active rows per step, non-increasing
    offsets: np.ndarray
    bidx: np.ndarray
    tidx: np.ndarray
    x_packed: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray
    tanh_c: np.ndarray
    shape: tuple


def _sigmoid_inplace(z: np.ndarray) -> None:
    # 0.5 * (1 + tanh(z / 2)): overflow-free and faster than expit here.
    z *= 0.5
    np.tanh(z, out=z)
    z *= 0.5
    z += 0.5


def lstm_forward(params: Mapping[str, np.ndarray], prefix: str, x: np.ndarray, lengths=None,
                 return_all: bool = True):
    """Run an LSTM from zero state over padded sequences ``x`` of shape ``(B, T, F)``.

    Rows are processed in packed form: at step ``t`` only sequences longer
    than ``t`` are advanced, so padding columns never influence any state and
    cost nothing.  Returns ``(hs, h_last, cache)`` where ``hs`` is ``(B, T, H)``
    (zero past each length; ``None`` when ``return_all`` is false) and
    ``h_last`` holds each row's state at its own true length.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise InvalidArgumentError("lstm input must be (batch, time, features)")
    bsz, tmax, n_in = x.shape
    wx, wh, b = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]
    if wx.shape[0] != n_in:
        raise InvalidArgumentError(f"lstm expects {wx.shape[0]} input features, got {n_in}")
    hidden = wh.shape[0]
    lengths = np.full(bsz, tmax, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
    if bsz == 0 or tmax == 0 or lengths.min() < 1:
        raise InvalidArgumentError("lstm needs non-empty sequences")
    if lengths.max() > tmax:
        raise InvalidArgumentError("sequence length exceeds padded width")

    order = np.argsort(-lengths, kind="stable")
    sorted_len = lengths[order]
    t_used = int(sorted_len[0])
    steps = np.array([np.count_nonzero(sorted_len > t) for t in range(t_used)], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(steps)])
    bidx = np.concatenate([order[:n] for n in steps])
    tidx = np.repeat(np.arange(t_used), steps)
    xp = x[bidx, tidx]
    total = xp.shape[0]

    gates = np.empty((total, 4 * hidden))  # activated in place
    h_prev = np.empty((total, hidden))
    c_prev = np.empty((total, hidden))
    tanh_c = np.empty((total, hidden))
    h_packed = np.empty((total, hidden)) if return_all else None
    h = np.zeros((bsz, hidden))
    c = np.zeros((bsz, hidden))
    h2, h3 = 2 * hidden, 3 * hidden
    # Per-step work keeps every operand cache resident; one big input
    # projection up front is slower on memory-bound hosts.
    for t in range(t_used):
        s, n = offsets[t], steps[t]
        hp = h[:n]
        cp = c[:n]
        h_prev[s:s + n] = hp
        c_prev[s:s + n] = cp
        z = gates[s:s + n]
        np.matmul(hp, wh, out=z)
        z += xp[s:s + n] @ wx
        z += b
        _sigmoid_inplace(z[:, :h3])
        np.tanh(z[:, h3:], out=z[:, h3:])
        cn = z[:, hidden:h2] * cp
        cn += z[:, :hidden] * z[:, h3:]
        tc = tanh_c[s:s + n]
        np.tanh(cn, out=tc)
        c[:n] = cn
        np.multiply(z[:, h2:h3], tc, out=h[:n])
        if h_packed is not None:
            h_packed[s:s + n] = h[:n]

    hs = None
    if return_all:
        hs = np.zeros((bsz, tmax, hidden))
        hs[bidx, tidx] = h_packed
    h_last = np.empty_like(h)
    h_last[order] = h
    cache = LstmCache(order, steps, offsets, bidx, tidx, xp, h_prev, c_prev, gates, tanh_c, x.shape)
    return hs, h_last, cache


def lstm_backward(params: Mapping[str, np.ndarray], prefix: str, cache: LstmCache, grads: Params,
                  dh_last: np.ndarray | None = None, dhs: np.ndarray | None = None) -> np.ndarray:
    """Backpropagate through time; returns the gradient w.r.t. the padded input."""
    wx, wh = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"]
    hidden = wh.shape[0]
    h3 = 3 * hidden
    bsz, tmax, n_in = cache.shape
    order, steps, offsets = cache.order, cache.steps, cache.offsets
    dh = np.zeros((bsz, hidden)) if dh_last is None else np.array(dh_last, dtype=np.float64)[order]
    dc = np.zeros((bsz, hidden))
    dhs_packed = None if dhs is None else dhs[cache.bidx, cache.tidx]
    gates = cache.gates
    h2 = 2 * hidden
    dz_all = np.empty_like(gates)
    dxp = np.empty((gates.shape[0], n_in))
    wh_t = np.ascontiguousarray(wh.T)
    wx_t = np.ascontiguousarray(wx.T)
    tmp = np.empty((bsz, hidden))
    dcn_buf = np.empty((bsz, hidden))
    for t in reversed(range(len(steps))):
        s, n = offsets[t], steps[t]
        g = gates[s:s + n]
        ai, af, ao, ag = g[:, :hidden], g[:, hidden:h2], g[:, h2:h3], g[:, h3:]
        tc = cache.tanh_c[s:s + n]
        dht = dh[:n]
        if dhs_packed is not None:
            dht = dht + dhs_packed[s:s + n]
        dz = dz_all[s:s + n]
        u, dcn = tmp[:n], dcn_buf[:n]
        # dc_t = dc_{t+1} f_{t+1} + dh o (1 - tanh(c)^2)
        np.multiply(tc, tc, out=u)
        np.subtract(1.0, u, out=u)
        u *= ao
        u *= dht
        np.add(u, dc[:n], out=dcn)
        dzi, dzf, dzo, dzg = dz[:, :hidden], dz[:, hidden:h2], dz[:, h2:h3], dz[:, h3:]
        np.subtract(1.0, ai, out=dzi)
        dzi *= ai
        dzi *= ag
        dzi *= dcn
        np.subtract(1.0, af, out=dzf)
        dzf *= af
        dzf *= cache.c_prev[s:s + n]
        dzf *= dcn
        np.subtract(1.0, ao, out=dzo)
        dzo *= ao
        dzo *= tc
        dzo *= dht
        np.multiply(ag, ag, out=dzg)
        np.subtract(1.0, dzg, out=dzg)
        dzg *= ai
        dzg *= dcn
        np.multiply(dcn, af, out=dc[:n])
        np.matmul(dz, wh_t, out=dh[:n])
        np.matmul(dz, wx_t, out=dxp[s:s + n])
    _accumulate(grads, f"{prefix}.Wx", cache.x_packed.T @ dz_all)
    _accumulate(grads, f"{prefix}.Wh", cache.h_prev.T @ dz_all)
    _accumulate(grads, f"{prefix}.b", dz_all.sum(axis=0))
    dx = np.zeros((bsz, tmax, n_in))
    dx[cache.bidx, cache.tidx] = dxp
    return dx


# --- normalization / heads -------------------------------------------------

def l2_normalize(x: np.ndarray, axis: int = 0):
    """``x / sqrt(|x|^2 + eps^2)`` along ``axis``; returns ``(y, norms)``.

    The ``eps`` inside the root keeps zero vectors (and their gradients)
    finite while leaving the output norm within 1e-12 of one whenever
    ``|x| > 1e-6``.
    """
    r = np.sqrt(np.sum(x * x, axis=axis, keepdims=True) + NORM_EPS * NORM_EPS)
    return x / r, r


def l2_normalize_backward(x: np.ndarray, r: np.ndarray, dy: np.ndarray, axis: int = 0) -> np.ndarray:
    dot = np.sum(x * dy, axis=axis, keepdims=True)
    return dy / r - x * dot / (r ** 3)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softplus_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * expit(x)


# --- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: Params, grads: Mapping[str, np.ndarray]) -> Params:
    """One bias-corrected Adam update, in place on ``params``.

    Parameters absent from ``grads`` are treated as having zero gradient.
    A non-finite gradient aborts before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise InvalidArgumentError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise InvalidArgumentError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        v *= state.beta2
        if g is not None:
            m += (1.0 - state.beta1) * g
            v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Params, max_norm: float) -> tuple[float, bool]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
        return norm, True
    return norm, False


# --- gradient checking -----------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple | None
    n_checked: int
    excluded: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    loss_fn: Callable[[Params], tuple],
    params: Params,
    tolerance: float = 1e-6,
    step: float = 1e-5,
    names=None,
    max_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    kink_tol: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` and be pure.  The
    relative error of a coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    Coordinates whose one-sided differences disagree (the loss has a kink
    within ``step``, e.g. a ReLU input at exactly zero) are listed in
    ``excluded`` instead of being scored.
    """
    _, grads = loss_fn(params)
    f0 = float(loss_fn(params)[0])
    names = list(params) if names is None else list(names)
    rng = rng or np.random.default_rng(0)
    worst, worst_err, checked, excluded = None, 0.0, 0, []
    for name in names:
        p = params[name]
        flat = p.reshape(-1)
        analytic = np.asarray(grads.get(name, np.zeros_like(p)), dtype=np.float64).reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(loss_fn(params)[0])
            flat[i] = orig - step
            fm = float(loss_fn(params)[0])
            flat[i] = orig
            fwd, bwd = (fp - f0) / step, (f0 - fm) / step
            gap = abs(fwd - bwd)
            if gap > max(kink_tol * max(abs(fwd), abs(bwd)), 1e-7):
                excluded.append((name, int(i)))
                continue
            numeric = (fp - fm) / (2.0 * step)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (name, int(i), float(a), float(numeric))
    return GradCheckReport(worst_err, worst, checked, excluded, tolerance)


# --- checkpoint I/O --------------------------------------------------------

def save_tensors(tensors: Mapping[str, np.ndarray], path) -> None:
    """Binary checkpoint: magic, u32 version, u32 count, then named float64 tensors."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise DataCorruptionError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise DataCorruptionError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DataCorruptionError(f"{path}: truncated checkpoint") from exc
    if pos != len(data):
        raise DataCorruptionError(f"{path}: trailing bytes after {count} tensors")
    return out
