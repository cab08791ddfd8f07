"""Minimal numpy neural-network core with hand-written reverse-mode gradients.

Dense layers, the GRU cell, the center-oriented bidirectional GRU layer
(Co-GRU), the mean-square-error loss, Kaiming initialization and Adam.
All arrays are float64 unless a caller opts into float32 for timing runs.

Sequences are laid out ``(batch, time, features)``; single sequences of shape
``(time, features)`` are accepted wherever a sequence is expected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

ACTIVATIONS = ("identity", "sigmoid", "tanh", "relu")


class ShapeError(ValueError):
    """Raised when array shapes do not match a layer's parameters."""


def sigmoid(x):
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def kaiming_init(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian with variance ``2 / fan_in``."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


# ---------------------------------------------------------------------------
# dense layers


@dataclass
class DenseParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"W{self.W.shape} and b{self.b.shape} disagree")

    @classmethod
    def init(cls, n_in, n_out, rng, activation="identity"):
        W = kaiming_init((n_out, n_in), n_in, rng)
        return cls(W, np.zeros(n_out), activation)

    def arrays(self):
        return {"W": self.W, "b": self.b}


def _activate(kind, a):
    if kind == "identity":
        return a
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return np.tanh(a)
    return np.maximum(a, 0.0)


def _activation_grad(kind, a, y, grad_y):
    if kind == "identity":
        return grad_y
    if kind == "sigmoid":
        return grad_y * y * (1.0 - y)
    if kind == "tanh":
        return grad_y * (1.0 - y * y)
    return grad_y * (a > 0)


def dense_forward(p: DenseParams, x):
    """Apply ``act(x @ W.T + b)`` over the last axis. Returns ``(y, cache)``."""
    if x.shape[-1] != p.W.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} != {p.W.shape[1]}")
    a = x @ p.W.T + p.b
    y = _activate(p.activation, a)
    return y, (x, a, y)


def dense_backward(p: DenseParams, cache, grad_y):
    """Returns ``({"W": dW, "b": db}, grad_x)``."""
    x, a, y = cache
    if grad_y.shape != y.shape:
        raise ShapeError(f"upstream gradient {grad_y.shape} != output {y.shape}")
    ga = _activation_grad(p.activation, a, y, grad_y)
    ga2 = ga.reshape(-1, ga.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    grads = {"W": ga2.T @ x2, "b": ga2.sum(axis=0)}
    return grads, ga @ p.W


@dataclass
class Mlp:
    """A stack of dense layers."""

    layers: list

    @classmethod
    def init(cls, sizes, rng, hidden="relu", output="identity"):
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output if i == len(sizes) - 2 else hidden
            layers.append(DenseParams.init(n_in, n_out, rng, act))
        return cls(layers)

    def arrays(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.W"] = layer.W
            out[f"{i}.b"] = layer.b
        return out

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = dense_forward(layer, x)
            caches.append(c)
        return x, caches

    def backward(self, caches, grad_y):
        grads = {}
        for i in reversed(range(len(self.layers))):
            g, grad_y = dense_backward(self.layers[i], caches[i], grad_y)
            grads[f"{i}.W"] = g["W"]
            grads[f"{i}.b"] = g["b"]
        return grads, grad_y


def mse_loss(pred, target):
    """Mean of squared differences over all elements, with its gradient."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} != target {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# ---------------------------------------------------------------------------
# GRU


@dataclass
class GruParams:
    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    Uz: np.ndarray
    Ur: np.ndarray
    Uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray

    def __post_init__(self):
        H, I = self.Wz.shape
        for name in ("Wz", "Wr", "Wh"):
            if getattr(self, name).shape != (H, I):
                raise ShapeError(f"{name} must be {(H, I)}")
        for name in ("Uz", "Ur", "Uh"):
            if getattr(self, name).shape != (H, H):
                raise ShapeError(f"{name} must be {(H, H)}")
        for name in ("bz", "br", "bh"):
            if getattr(self, name).shape != (H,):
                raise ShapeError(f"{name} must be {(H,)}")

    @property
    def hidden_size(self):
        return self.Wz.shape[0]

    @property
    def input_size(self):
        return self.Wz.shape[1]

    @classmethod
    def init(cls, input_size, hidden_size, rng):
        W = [kaiming_init((hidden_size, input_size), input_size, rng) for _ in range(3)]
        U = [kaiming_init((hidden_size, hidden_size), hidden_size, rng) for _ in range(3)]
        b = [np.zeros(hidden_size) for _ in range(3)]
        return cls(*W, *U, *b)

    @classmethod
    def zeros(cls, input_size, hidden_size):
        H, I = hidden_size, input_size
        return cls(*(np.zeros((H, I)) for _ in range(3)),
                   *(np.zeros((H, H)) for _ in range(3)),
                   *(np.zeros(H) for _ in range(3)))

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class GruState:
    """Output of one GRU step plus everything the backward pass needs."""

    h: np.ndarray
    x: np.ndarray = None
    h_prev: np.ndarray = None
    z: np.ndarray = None
    r: np.ndarray = None
    h_tilde: np.ndarray = None
    params: GruParams = field(default=None, repr=False)


def gru_cell_forward(params: GruParams, x, h_prev) -> GruState:
    """One GRU step; leading batch axes are allowed on ``x`` and ``h_prev``."""
    if x.shape[-1] != params.input_size or h_prev.shape[-1] != params.hidden_size:
        raise ShapeError(
            f"x width {x.shape[-1]} / h width {h_prev.shape[-1]} do not match "
            f"I={params.input_size}, H={params.hidden_size}")
    p = params
    z = sigmoid(x @ p.Wz.T + h_prev @ p.Uz.T + p.bz)
    r = sigmoid(x @ p.Wr.T + h_prev @ p.Ur.T + p.br)
    h_tilde = np.tanh(x @ p.Wh.T + (r * h_prev) @ p.Uh.T + p.bh)
    h = z * h_prev + (1.0 - z) * h_tilde
    return GruState(h, x, h_prev, z, r, h_tilde, params)


def gru_cell_backward(cache: GruState, grad_h):
    """Reverse-mode of :func:`gru_cell_forward`.

    Returns ``(grad_params, grad_x, grad_h_prev)`` where ``grad_params`` is a
    :class:`GruParams` holding gradients.
    """
    if cache.params is None or cache.z is None:
        raise ValueError("cache does not come from gru_cell_forward")
    if grad_h.shape != cache.h.shape:
        raise ShapeError(f"grad_h {grad_h.shape} != h {cache.h.shape}")
    p = cache.params
    x, hp, z, r, ht = cache.x, cache.h_prev, cache.z, cache.r, cache.h_tilde
    dz = grad_h * (hp - ht)
    da_h = grad_h * (1.0 - z) * (1.0 - ht * ht)
    d_rh = da_h @ p.Uh
    da_r = d_rh * hp * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    grad_h_prev = grad_h * z + d_rh * r + da_z @ p.Uz + da_r @ p.Ur
    grad_x = da_z @ p.Wz + da_r @ p.Wr + da_h @ p.Wh

    def outer(a, b):
        return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])

    def total(a):
        return a.reshape(-1, a.shape[-1]).sum(axis=0)

    grads = GruParams(
        outer(da_z, x), outer(da_r, x), outer(da_h, x),
        outer(da_z, hp), outer(da_r, hp), outer(da_h, r * hp),
        total(da_z), total(da_r), total(da_h))
    return grads, grad_x, grad_h_prev


def _as_batch(seq):
    seq = np.asarray(seq)
    if seq.ndim == 2:
        return seq[None], True
    if seq.ndim != 3:
        raise ShapeError(f"sequence must be (N, I) or (B, N, I), got {seq.shape}")
    return seq, False


def gru_sequence_forward(params: GruParams, xs):
    """Run the recurrence over axis 1 of ``xs`` (B, N, I) from a zero state.

    Input projections for every step are computed in one matrix product; the
    recurrent part is the same arithmetic as :func:`gru_cell_forward`.
    Returns ``(hs, cache)`` with ``hs`` of shape (B, N, H).
    """
    p = params
    B, N, _ = xs.shape
    H = p.hidden_size
    dtype = np.result_type(xs, p.Wz)
    Wcat = np.concatenate([p.Wz, p.Wr, p.Wh])
    bcat = np.concatenate([p.bz, p.br, p.bh])
    Uzr = np.concatenate([p.Uz, p.Ur])
    xproj = xs @ Wcat.T + bcat  # (B, N, 3H)
    hs = np.empty((B, N, H), dtype)
    zs = np.empty((B, N, H), dtype)
    rs = np.empty((B, N, H), dtype)
    hts = np.empty((B, N, H), dtype)
    h = np.zeros((B, H), dtype)
    for t in range(N):
        a = xproj[:, t]
        zr = sigmoid(a[:, :2 * H] + h @ Uzr.T)
        z = zr[:, :H]
        r = zr[:, H:]
        ht = np.tanh(a[:, 2 * H:] + (r * h) @ p.Uh.T)
        h = z * h + (1.0 - z) * ht
        hs[:, t] = h
        zs[:, t] = z
        rs[:, t] = r
        hts[:, t] = ht
    return hs, (xs, hs, zs, rs, hts)


def gru_sequence_backward(params: GruParams, cache, grad_hs):
    """Backpropagation through time for :func:`gru_sequence_forward`."""
    p = params
    xs, hs, zs, rs, hts = cache
    B, N, H = hs.shape
    if grad_hs.shape != hs.shape:
        raise ShapeError(f"grad {grad_hs.shape} != hidden states {hs.shape}")
    Uzr = np.concatenate([p.Uz, p.Ur])
    dA = np.empty((B, N, 3 * H), hs.dtype)
    dUzr = np.zeros((2 * H, H))
    dUh = np.zeros((H, H))
    dh = np.zeros((B, H), hs.dtype)
    zero = np.zeros((B, H), hs.dtype)
    for t in range(N - 1, -1, -1):
        dh = dh + grad_hs[:, t]
        hp = hs[:, t - 1] if t > 0 else zero
        z, r, ht = zs[:, t], rs[:, t], hts[:, t]
        da_h = dh * (1.0 - z) * (1.0 - ht * ht)
        rh = r * hp
        dUh += da_h.T @ rh
        d_rh = da_h @ p.Uh
        da_zr = np.concatenate([dh * (hp - ht) * z * (1.0 - z),
                                d_rh * hp * r * (1.0 - r)], axis=1)
        dUzr += da_zr.T @ hp
        dh = dh * z + d_rh * r + da_zr @ Uzr
        dA[:, t, :2 * H] = da_zr
        dA[:, t, 2 * H:] = da_h
    dA2 = dA.reshape(-1, 3 * H)
    dW = dA2.T @ xs.reshape(-1, xs.shape[-1])
    db = dA2.sum(axis=0)
    grad_xs = dA @ np.concatenate([p.Wz, p.Wr, p.Wh])
    grads = GruParams(dW[:H], dW[H:2 * H], dW[2 * H:],
                      dUzr[:H], dUzr[H:], dUh,
                      db[:H], db[H:2 * H], db[2 * H:])
    return grads, grad_xs


# ---------------------------------------------------------------------------
# center-oriented bidirectional GRU


@dataclass
class CoGruLayer:
    """Two GRU recurrences (left-to-right and right-to-left) and a dense head.

    The head sees ``[h_left ; h_right]`` at each position. ``edge_discard``
    positions are dropped at both ends of every processed sequence.
    """

    left: GruParams
    right: GruParams
    head: Mlp
    edge_discard: int = 64

    def __post_init__(self):
        if (self.left.hidden_size != self.right.hidden_size
                or self.left.input_size != self.right.input_size):
            raise ShapeError("left and right GRUs must share H and I")
        if self.head.layers[0].W.shape[1] != 2 * self.left.hidden_size:
            raise ShapeError("head input width must be 2H")
        if self.edge_discard < 0:
            raise ValueError("edge_discard must be >= 0")

    @classmethod
    def init(cls, input_size, hidden_size, output_size, rng, edge_discard=64,
             head_hidden=(), output_activation="identity"):
        left = GruParams.init(input_size, hidden_size, rng)
        right = GruParams.init(input_size, hidden_size, rng)
        sizes = [2 * hidden_size, *head_hidden, output_size]
        head = Mlp.init(sizes, rng, hidden="relu", output=output_activation)
        return cls(left, right, head, edge_discard)

    @property
    def input_size(self):
        return self.left.input_size

    @property
    def hidden_size(self):
        return self.left.hidden_size

    def arrays(self):
        out = {}
        for prefix, group in (("left", self.left), ("right", self.right),
                              ("head", self.head)):
            for k, v in group.arrays().items():
                out[f"{prefix}.{k}"] = v
        return out


def cogru_forward(layer: CoGruLayer, seq):
    """Center-oriented evaluation of a whole sequence (or batch of them).

    Each recurrence sweeps the sequence exactly once; the output at position
    ``n`` is ``head([h_left[n] ; h_right[n]])``. Returns ``(out, cache)`` with
    ``out`` of shape (N - 2 * edge_discard, O), or with a leading batch axis
    when ``seq`` had one.
    """
    xs, single = _as_batch(seq)
    N = xs.shape[1]
    e = layer.edge_discard
    if N <= 2 * e:
        raise ValueError(f"sequence length {N} must exceed 2 * edge_discard = {2 * e}")
    if xs.shape[2] != layer.input_size:
        raise ShapeError(f"input width {xs.shape[2]} != {layer.input_size}")
    hl, cl = gru_sequence_forward(layer.left, xs)
    hr, cr = gru_sequence_forward(layer.right, xs[:, ::-1])
    feats = np.concatenate([hl, hr[:, ::-1]], axis=2)
    kept = feats[:, e:N - e]
    y, ch = layer.head.forward(kept)
    cache = (single, N, cl, cr, ch)
    return (y[0] if single else y), cache


def cogru_backward(layer: CoGruLayer, cache, grad_out):
    """Returns ``(grads, grad_seq)``; ``grads`` is keyed like ``layer.arrays()``."""
    single, N, cl, cr, ch = cache
    g = grad_out[None] if single else grad_out
    expected = ch[-1][2].shape
    if g.shape != expected:
        raise ShapeError(f"grad_out {g.shape} does not match cached output {expected}")
    e = layer.edge_discard
    H = layer.hidden_size
    head_grads, g_kept = layer.head.backward(ch, g)
    g_feats = np.zeros(g_kept.shape[:1] + (N, 2 * H), g_kept.dtype)
    g_feats[:, e:N - e] = g_kept
    gl, gx_l = gru_sequence_backward(layer.left, cl, g_feats[:, :, :H])
    gr, gx_r = gru_sequence_backward(layer.right, cr, np.ascontiguousarray(g_feats[:, ::-1, H:]))
    grad_seq = gx_l + gx_r[:, ::-1]
    grads = {}
    for prefix, group in (("left", gl.arrays()), ("right", gr.arrays()), ("head", head_grads)):
        for k, v in group.items():
            grads[f"{prefix}.{k}"] = v
    return grads, (grad_seq[0] if single else grad_seq)


def bigru_window_forward(layer: CoGruLayer, seq, half_window: int):
    """Sliding-window Bi-GRU: every position gets its own 2L+1 window.

    Position ``n`` runs the left GRU over ``x[n-L..n]`` and the right GRU over
    ``x[n+L..n]``, both from a zero state, with the sequence zero-padded at the
    ends. Uses the Co-GRU layer's weights; the output covers the same kept
    positions as :func:`cogru_forward`.
    """
    xs, single = _as_batch(seq)
    B, N, I = xs.shape
    e = layer.edge_discard
    L = half_window
    padded = np.pad(xs, ((0, 0), (L, L), (0, 0)))
    idx = np.arange(e, N - e)[:, None] + np.arange(2 * L + 1)[None, :]
    win = padded[:, idx].reshape(-1, 2 * L + 1, I)  # (B*K, 2L+1, I)
    hl, cl = gru_sequence_forward(layer.left, win[:, :L + 1])
    hr, cr = gru_sequence_forward(layer.right, win[:, L:][:, ::-1])
    feats = np.concatenate([hl[:, -1], hr[:, -1]], axis=1)
    y, ch = layer.head.forward(feats)
    y = y.reshape(B, N - 2 * e, -1)
    cache = (single, B, N, L, cl, cr, ch)
    return (y[0] if single else y), cache


def bigru_window_backward(layer: CoGruLayer, cache, grad_out):
    """Reverse-mode of :func:`bigru_window_forward` (parameter gradients only
    plus the per-window input gradients folded back onto the sequence)."""
    single, B, N, L, cl, cr, ch = cache
    g = grad_out[None] if single else grad_out
    H = layer.hidden_size
    e = layer.edge_discard
    g = g.reshape(-1, g.shape[-1])
    head_grads, g_feats = layer.head.backward(ch, g)
    K = g.shape[0]
    gl_h = np.zeros((K, L + 1, H))
    gl_h[:, -1] = g_feats[:, :H]
    gr_h = np.zeros((K, L + 1, H))
    gr_h[:, -1] = g_feats[:, H:]
    gl, gx_l = gru_sequence_backward(layer.left, cl, gl_h)
    gr, gx_r = gru_sequence_backward(layer.right, cr, gr_h)
    I = layer.input_size
    gwin = np.zeros((K, 2 * L + 1, I))
    gwin[:, :L + 1] += gx_l
    gwin[:, L:] += gx_r[:, ::-1]
    gwin = gwin.reshape(B, N - 2 * e, 2 * L + 1, I)
    gpad = np.zeros((B, N + 2 * L, I))
    for j in range(2 * L + 1):
        gpad[:, e + j:N - e + j] += gwin[:, :, j]
    grad_seq = gpad[:, L:N + L]
    grads = {}
    for prefix, group in (("left", gl.arrays()), ("right", gr.arrays()), ("head", head_grads)):
        for k, v in group.items():
            grads[f"{prefix}.{k}"] = v
    return grads, (grad_seq[0] if single else grad_seq)


def stream_blocks(stream, block, context):
    """Cut a circular stream (N, I) into overlapping blocks for batched Co-GRU.

    Each block carries ``block`` kept positions plus ``context`` wrapped
    neighbours on both sides, so a layer with ``edge_discard == context``
    produces one output per stream position. Returns ``(blocks, n)`` where
    ``blocks`` is (nb, block + 2 * context, I) and ``n`` the stream length.
    """
    n = stream.shape[0]
    if n % block:
        raise ValueError(f"stream length {n} is not a multiple of block {block}")
    starts = np.arange(0, n, block)
    idx = (starts[:, None] + np.arange(-context, block + context)[None, :]) % n
    return stream[idx], n


def unblock(outputs, n):
    """Inverse of :func:`stream_blocks` for kept outputs (nb, block, O) -> (n, O)."""
    return outputs.reshape(n, outputs.shape[-1])


def unblock_grad(grad_blocks, n, block, context):
    """Fold block-input gradients back onto the circular stream positions."""
    nb = grad_blocks.shape[0]
    starts = np.arange(0, n, block)
    idx = (starts[:, None] + np.arange(-context, block + context)[None, :]) % n
    out = np.zeros((n, grad_blocks.shape[-1]), grad_blocks.dtype)
    np.add.at(out, idx.reshape(-1), grad_blocks.reshape(nb * idx.shape[1], -1))
    return out


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        for k, g in grads.items():
            if params[k].shape != g.shape:
                raise ShapeError(f"{k}: grad {g.shape} != param {params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def arrays(self):
        out = {"t": np.array([float(self.t)])}
        for k in sorted(self.m):
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        self.m = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m.")}
        self.v = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v.")}


# ---------------------------------------------------------------------------
# checkpoints


def save_arrays(path, arrays: dict):
    """Write named arrays as text: a ``name shape`` line then row-major values."""
    with open(path, "w") as fh:
        for name in sorted(arrays):
            a = np.asarray(arrays[name], dtype=np.float64)
            shape = " ".join(str(s) for s in a.shape)
            fh.write(f"{name} {a.ndim} {shape}\n")
            fh.write(" ".join(f"{v:.17g}" for v in a.ravel()) + "\n")


def load_arrays(path) -> dict:
    out = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    for head, body in zip(lines[::2], lines[1::2]):
        parts = head.split()
        name, ndim = parts[0], int(parts[1])
        shape = tuple(int(s) for s in parts[2:2 + ndim])
        values = np.array([float(v) for v in body.split()], dtype=np.float64)
        out[name] = values.reshape(shape)
    return out


def assign_arrays(target: dict, source: dict, prefix=""):
    """Copy ``source[prefix + name]`` into each array of ``target`` in place."""
    for name, arr in target.items():
        key = prefix + name
        if key not in source:
            raise KeyError(f"checkpoint is missing {key}")
        if source[key].shape != arr.shape:
            raise ShapeError(f"{key}: checkpoint {source[key].shape} != {arr.shape}")
        arr[...] = source[key]
