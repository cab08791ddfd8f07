"""Learnable transceiver pieces: DNN encoder, DNN / Co-GRU decoders, Co-GRU surrogate.

Streams are real arrays shaped ``(P, n, 2)``: P independent polarization
streams of n symbols as (I, Q) pairs. Both polarizations share one encoder,
one decoder and one surrogate. Co-GRU networks treat each stream as circular
and evaluate it in overlapping blocks so every position gets an output.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .nn import CoGruLayer, Mlp
from .signal import Constellation, natural_labels


class Encoder:
    """One-hot(M) -> MLP -> (I, Q), normalized to unit mean power over the M points."""

    def __init__(self, mlp: Mlp):
        self.mlp = mlp
        self.M = mlp.layers[0].W.shape[1]

    @classmethod
    def init(cls, M, rng, hidden=(64, 64)):
        return cls(Mlp.init([M, *hidden, 2], rng, hidden="relu", output="identity"))

    @classmethod
    def from_constellation(cls, constellation: Constellation):
        """Exact embedding: identity hidden layers, output weights hold the points.

        Point ``k`` of the result is the point labelled with binary(k).
        """
        M = constellation.M
        pts = constellation.points[constellation.index_of_label()]
        eye = np.eye(M)
        layers = [nn.DenseParams(eye.copy(), np.zeros(M), "relu"),
                  nn.DenseParams(eye.copy(), np.zeros(M), "relu"),
                  nn.DenseParams(np.stack([pts.real, pts.imag]), np.zeros(2))]
        return cls(Mlp(layers))

    def arrays(self):
        return self.mlp.arrays()

    def forward(self):
        raw, caches = self.mlp.forward(np.eye(self.M))
        if np.all(np.var(raw, axis=0) == 0):
            raise ValueError("encoder maps every symbol to the same point")
        scale = np.sqrt(np.mean(np.sum(raw * raw, axis=1)))
        return raw / scale, (raw, scale, caches)

    def backward(self, cache, grad_points):
        raw, scale, caches = cache
        M = raw.shape[0]
        # points = raw / s, s = sqrt(mean |raw|^2)
        grad_raw = grad_points / scale - raw * np.sum(grad_points * raw) / (M * scale ** 3)
        grads, _ = self.mlp.backward(caches, grad_raw)
        return grads

    def constellation(self) -> Constellation:
        pts, _ = self.forward()
        return Constellation(pts[:, 0] + 1j * pts[:, 1], natural_labels(self.M))


def gather_points(points, indices):
    return points[indices]


def scatter_points_grad(grad_stream, indices, M):
    g = np.zeros((M, 2))
    np.add.at(g, indices.reshape(-1), grad_stream.reshape(-1, 2))
    return g


class DecoderDnn:
    kind = "dnn"

    def __init__(self, mlp: Mlp):
        self.mlp = mlp

    @classmethod
    def init(cls, m, rng, hidden=(64, 64)):
        return cls(Mlp.init([2, *hidden, m], rng, hidden="relu", output="sigmoid"))

    def arrays(self):
        return self.mlp.arrays()

    def forward(self, streams):
        return self.mlp.forward(streams)

    def backward(self, cache, grad_out):
        return self.mlp.backward(cache, grad_out)


class _BlockedCoGru:
    """Co-GRU applied to circular streams in blocks of ``block`` kept symbols."""

    def __init__(self, layer: CoGruLayer, block=256):
        self.layer = layer
        self.block = block

    def arrays(self):
        return self.layer.arrays()

    def _blocks(self, streams):
        P, n, _ = streams.shape
        blocks = [nn.stream_blocks(s, self.block, self.layer.edge_discard)[0] for s in streams]
        return np.concatenate(blocks), P, n

    def forward(self, streams):
        blocks, P, n = self._blocks(streams)
        y, cache = nn.cogru_forward(self.layer, blocks)
        return y.reshape(P, n, -1), (cache, P, n)

    def backward(self, cache, grad_out):
        inner, P, n = cache
        nb = n // self.block
        g = grad_out.reshape(P * nb, self.block, -1)
        grads, g_blocks = nn.cogru_backward(self.layer, inner, g)
        e = self.layer.edge_discard
        g_streams = np.stack([
            nn.unblock_grad(g_blocks[p * nb:(p + 1) * nb], n, self.block, e) for p in range(P)])
        return grads, g_streams


class DecoderCoGru(_BlockedCoGru):
    kind = "cogru"

    @classmethod
    def init(cls, m, rng, hidden=32, edge_discard=64, block=256):
        layer = CoGruLayer.init(2, hidden, m, rng, edge_discard, output_activation="sigmoid")
        return cls(layer, block)


class Surrogate(_BlockedCoGru):
    """Co-GRU channel model: tx stream -> predicted post-DSP rx stream.

    The network predicts the deviation from the transmitted symbol
    (``rx_hat = tx + cogru(tx)``). ``noise_var`` is the residual error power per
    complex symbol from the latest fit; it is re-injected as circular Gaussian
    noise when the encoder trains through the surrogate.
    """

    def __init__(self, layer, block=256, noise_var=0.0):
        super().__init__(layer, block)
        self.noise_var = noise_var

    @classmethod
    def init(cls, rng, hidden=32, edge_discard=64, block=256):
        layer = CoGruLayer.init(2, hidden, 2, rng, edge_discard)
        for d in layer.head.layers:
            d.W *= 0.1
        return cls(layer, block)

    def forward(self, streams):
        y, cache = super().forward(streams)
        return streams + y, cache

    def backward(self, cache, grad_out):
        grads, g = super().backward(cache, grad_out)
        return grads, g + grad_out


def hard_bits(probs):
    """Threshold at 0.5; exactly 0.5 decides 0."""
    return (probs > 0.5).astype(np.int8)


def decode_stream(decoder, rx_streams, circular=True):
    """Bit probabilities for rx symbols given as (P, n, 2) reals.

    A Co-GRU decoder with ``circular=False`` processes each stream as one
    open sequence and returns ``n - 2 * edge_discard`` positions per stream,
    output ``k`` belonging to input ``k + edge_discard``.
    """
    rx = np.asarray(rx_streams, float)
    if isinstance(decoder, DecoderCoGru) and not circular:
        y, _ = nn.cogru_forward(decoder.layer, rx)
        return y
    y, _ = decoder.forward(rx)
    return y


def surrogate_fit_step(surrogate: Surrogate, tx, rx, opt: nn.Adam):
    """One Adam step on the MSE between surrogate(tx) and rx; returns the loss."""
    if tx.shape != rx.shape:
        raise ValueError(f"tx {tx.shape} and rx {rx.shape} are not aligned")
    pred, cache = surrogate.forward(tx)
    loss, g = nn.mse_loss(pred, rx)
    grads, _ = surrogate.backward(cache, g)
    opt.step(surrogate.arrays(), grads)
    surrogate.noise_var = 2 * loss
    return loss


def surrogate_mse(surrogate: Surrogate, tx, rx):
    pred, _ = surrogate.forward(tx)
    return nn.mse_loss(pred, rx)[0]


def linear_fir_mse(tx_train, rx_train, tx_test, rx_test, half_taps=16):
    """Held-out MSE of the best widely-linear FIR predictor rx[n] ~ f(tx[n-L..n+L]).

    Fitted by least squares on circular windows of the training streams; the
    real-valued regression on (I, Q) taps covers complex and conjugate terms.
    """
    def design(tx):
        P, n, _ = tx.shape
        idx = (np.arange(n)[:, None] + np.arange(-half_taps, half_taps + 1)) % n
        X = tx[:, idx].reshape(P * n, -1)
        return np.hstack([X, np.ones((P * n, 1))])

    A = design(tx_train)
    coef, *_ = np.linalg.lstsq(A, rx_train.reshape(-1, 2), rcond=None)
    pred = design(tx_test) @ coef
    return float(np.mean((pred - rx_test.reshape(-1, 2)) ** 2))
