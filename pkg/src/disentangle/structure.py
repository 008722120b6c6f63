"""Structure-aware layers between the pair encoder and the classifier.

All layers take batched inputs shaped ``[B, C, ...]`` (a leading batch of
windows) and use row-vector convention: ``y = x @ W`` with ``W`` stored as
``[in, out]``.
"""

import numpy as np

from .encoder import uniform_init
from .exceptions import ConfigError, DimensionError
from .tensor import (
    MASK_VALUE,
    Parameter,
    Tensor,
    _result,
    _sigmoid,
    as_tensor,
    concat,
    masked_softmax,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    sub,
    take,
    tanh,
    transpose,
)


def attention_mask(visible):
    """Turn a boolean visibility matrix into an additive 0 / ``MASK_VALUE`` mask."""
    return np.where(visible, 0.0, MASK_VALUE)


class MaskedAttentionLayer:
    """Speaker-masked multi-head self-attention followed by a fusion layer.

    ``H2 = [H1, MHSA(H1, M)] @ W_fuse + b_fuse``, where MHSA splits ``D`` into
    ``heads`` blocks of ``D / heads`` columns.
    """

    def __init__(self, dim, heads, rng, prefix="attention"):
        if heads <= 0 or dim % heads:
            raise ConfigError(f"hidden size {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.W_Q = Parameter(uniform_init(rng, (dim, dim), dim), f"{prefix}.W_Q")
        self.W_K = Parameter(uniform_init(rng, (dim, dim), dim), f"{prefix}.W_K")
        self.W_V = Parameter(uniform_init(rng, (dim, dim), dim), f"{prefix}.W_V")
        self.W_O = Parameter(uniform_init(rng, (dim, dim), dim), f"{prefix}.W_O")
        self.W_fuse = Parameter(uniform_init(rng, (2 * dim, dim), 2 * dim), f"{prefix}.W_fuse")
        self.b_fuse = Parameter(np.zeros(dim), f"{prefix}.b_fuse")

    def parameters(self):
        return [self.W_Q, self.W_K, self.W_V, self.W_O, self.W_fuse, self.b_fuse]

    def _split(self, x):
        *lead, C, D = x.shape
        dk = D // self.heads
        x = reshape(x, (*lead, C, self.heads, dk))
        n = len(lead)
        return transpose(x, (*range(n), n + 1, n, n + 2))

    def attention(self, H, mask):
        """Multi-head output ``[..., C, D]`` and the weights ``[..., N, C, C]``."""
        H = as_tensor(H)
        if H.shape[-1] != self.dim:
            raise DimensionError(f"attention expects last extent {self.dim}, got {H.shape}")
        mask = np.asarray(mask, dtype=np.float64)
        dk = self.dim // self.heads
        Q = self._split(matmul(H, self.W_Q))
        K = self._split(matmul(H, self.W_K))
        V = self._split(matmul(H, self.W_V))
        scores = scale(matmul(Q, transpose(K)), 1.0 / np.sqrt(dk))
        weights = masked_softmax(scores, mask[..., None, :, :])
        heads = matmul(weights, V)
        n = H.ndim - 2
        merged = transpose(heads, (*range(n), n + 1, n, n + 2))
        merged = reshape(merged, H.shape)
        return matmul(merged, self.W_O), weights

    def forward(self, H, mask):
        attended, _ = self.attention(H, mask)
        return matmul(concat([H, attended], axis=-1), self.W_fuse) + self.b_fuse


class RGCNLayer:
    """Single-relation graph convolution over reference edges.

    ``h_i' = ReLU(sum_{j in N_i} W_r h_j / c_i + W_0 h_i)`` with
    ``c_i = max(1, |N_i|)``; callers pass the row-normalised adjacency.
    """

    def __init__(self, dim, rng, prefix="rgcn"):
        self.dim = dim
        self.W_r = Parameter(uniform_init(rng, (dim, dim), dim), f"{prefix}.W_r")
        self.W_0 = Parameter(uniform_init(rng, (dim, dim), dim), f"{prefix}.W_0")

    def parameters(self):
        return [self.W_r, self.W_0]

    def forward(self, H, adjacency):
        messages = matmul(matmul(adjacency, H), self.W_r)
        return relu(messages + matmul(H, self.W_0))


def normalize_adjacency(adj):
    adj = np.asarray(adj, dtype=np.float64)
    return adj / np.maximum(adj.sum(axis=-1, keepdims=True), 1.0)


# gate order inside the stacked pre-activation: f, o, i1, i2, k (cand. from x1), p (cand. from x2)
_GATES = ("f", "o", "i1", "i2", "k", "p")


class SynLSTMCell:
    """LSTM cell with a second input stream and its own input gate.

    ::

        f  = sigmoid(x1 W_f  + h U_f  + x2 Q_f + b_f)
        o  = sigmoid(x1 W_o  + h U_o  + x2 Q_o + b_o)
        i1 = sigmoid(x1 W_i1 + h U_i1 + b_i1)
        i2 = sigmoid(x2 W_i2 + h U_i2 + b_i2)
        c1 = tanh(x1 W_k + h U_k + b_k)
        c2 = tanh(x2 W_p + h U_p + b_p)
        c  = f * c_prev + i1 * c1 + i2 * c2
        h  = o * tanh(c)
    """

    def __init__(self, input_dim, hidden_dim, rng, prefix="synlstm"):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        D, R = input_dim, hidden_dim
        fan = D + R
        p = {}
        for g in _GATES:
            x_name = {"f": "W_f", "o": "W_o", "i1": "W_i1", "i2": "W_i2", "k": "W_k", "p": "W_p"}[g]
            p[x_name] = Parameter(uniform_init(rng, (D, R), fan), f"{prefix}.{x_name}")
            p[f"U_{g}"] = Parameter(uniform_init(rng, (R, R), fan), f"{prefix}.U_{g}")
            if g in ("f", "o"):
                p[f"Q_{g}"] = Parameter(uniform_init(rng, (D, R), fan), f"{prefix}.Q_{g}")
            p[f"b_{g}"] = Parameter(np.zeros(R), f"{prefix}.b_{g}")
        self.params = p

    def parameters(self):
        return list(self.params.values())

    def __getitem__(self, key):
        return self.params[key]

    def step(self, x1, x2, h_prev, c_prev):
        """One step built from primitive tape ops; returns ``(h, c)``."""
        p = self.params
        f = sigmoid(matmul(x1, p["W_f"]) + matmul(h_prev, p["U_f"]) + matmul(x2, p["Q_f"]) + p["b_f"])
        o = sigmoid(matmul(x1, p["W_o"]) + matmul(h_prev, p["U_o"]) + matmul(x2, p["Q_o"]) + p["b_o"])
        i1 = sigmoid(matmul(x1, p["W_i1"]) + matmul(h_prev, p["U_i1"]) + p["b_i1"])
        i2 = sigmoid(matmul(x2, p["W_i2"]) + matmul(h_prev, p["U_i2"]) + p["b_i2"])
        c1 = tanh(matmul(x1, p["W_k"]) + matmul(h_prev, p["U_k"]) + p["b_k"])
        c2 = tanh(matmul(x2, p["W_p"]) + matmul(h_prev, p["U_p"]) + p["b_p"])
        c = mul(f, c_prev) + mul(i1, c1) + mul(i2, c2)
        h = mul(o, tanh(c))
        return h, c

    def input_preactivations(self, x1, x2):
        """Stacked non-recurrent gate inputs ``[..., T, 6R]``."""
        p = self.params
        zero = Tensor(np.zeros((self.input_dim, self.hidden_dim)))
        A1 = concat([p["W_f"], p["W_o"], p["W_i1"], zero, p["W_k"], zero], axis=1)
        A2 = concat([p["Q_f"], p["Q_o"], zero, p["W_i2"], zero, p["W_p"]], axis=1)
        b = concat([p[f"b_{g}"] for g in _GATES], axis=0)
        return matmul(x1, A1) + matmul(x2, A2) + b

    def recurrent_weights(self):
        return concat([self.params[f"U_{g}"] for g in _GATES], axis=1)

    def scan(self, x1, x2, reverse=False):
        """Run the cell over axis ``-2`` from zero state; hidden states ``[..., T, R]``."""
        return synlstm_scan(self.input_preactivations(x1, x2), self.recurrent_weights(), reverse)


def synlstm_scan(G, U, reverse=False):
    """Fused Syn-LSTM recurrence with hand-written backpropagation through time.

    ``G`` holds the input pre-activations ``[B, T, 6R]`` (gate order f, o, i1,
    i2, k, p) and ``U`` the stacked recurrent weights ``[R, 6R]``.
    """
    G, U = as_tensor(G), as_tensor(U)
    squeeze = G.ndim == 2
    g_in = G.data[None] if squeeze else G.data
    B, T, six_r = g_in.shape
    R = six_r // 6
    if U.shape != (R, six_r):
        raise DimensionError(f"recurrent weights {U.shape} do not fit pre-activations {G.shape}")
    Ud = U.data
    order = range(T - 1, -1, -1) if reverse else range(T)

    h = np.zeros((B, R))
    c = np.zeros((B, R))
    H = np.zeros((B, T, R))
    H_prev = np.empty((T, B, R))
    cache = []
    for t in order:
        H_prev[t] = h
        z = g_in[:, t] + h @ Ud
        sg = _sigmoid(z[:, : 4 * R])
        cand = np.tanh(z[:, 4 * R :])
        f, o, i1, i2 = sg[:, :R], sg[:, R : 2 * R], sg[:, 2 * R : 3 * R], sg[:, 3 * R :]
        k, p = cand[:, :R], cand[:, R:]
        c_new = f * c + i1 * k + i2 * p
        tc = np.tanh(c_new)
        h = o * tc
        # per-gate factors of dz: (d c, d h) -> pre-activation gradient
        dsg = sg * (1.0 - sg)
        dcand = 1.0 - cand * cand
        src = np.concatenate([c, k, p, i1, i2], axis=1)
        cache.append((t, f, o, tc, dsg, dcand, src))
        c = c_new
        H[:, t] = h

    def backward(gH):
        gH = gH[None] if squeeze else gH
        dG = np.zeros_like(g_in)
        dh_next = np.zeros((B, R))
        dc_next = np.zeros((B, R))
        dz = np.empty((B, 6 * R))
        for t, f, o, tc, dsg, dcand, src in reversed(cache):
            dh = gH[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz[:, :R] = dc * src[:, :R]
            dz[:, R : 2 * R] = dh * tc
            dz[:, 2 * R : 3 * R] = dc * src[:, R : 2 * R]
            dz[:, 3 * R : 4 * R] = dc * src[:, 2 * R : 3 * R]
            dz[:, 4 * R :] = np.tile(dc, 2) * src[:, 3 * R :]
            dz[:, : 4 * R] *= dsg
            dz[:, 4 * R :] *= dcand
            dG[:, t] = dz
            dh_next = dz @ Ud.T
            dc_next = dc * f
        dU = H_prev.reshape(T * B, R).T @ np.swapaxes(dG, 0, 1).reshape(T * B, 6 * R)
        return (dG[0] if squeeze else dG), dU

    return _result(H[0] if squeeze else H, (G, U), backward, "synlstm_scan")


class BiSynLSTM:
    """Forward and backward Syn-LSTM over the candidate slots, concatenated per slot."""

    def __init__(self, input_dim, hidden_dim, rng, prefix="bisynlstm"):
        self.forward_cell = SynLSTMCell(input_dim, hidden_dim, rng, f"{prefix}.fwd")
        self.backward_cell = SynLSTMCell(input_dim, hidden_dim, rng, f"{prefix}.bwd")

    def parameters(self):
        return self.forward_cell.parameters() + self.backward_cell.parameters()

    def forward(self, x1, x2):
        hf = self.forward_cell.scan(x1, x2, reverse=False)
        hb = self.backward_cell.scan(x1, x2, reverse=True)
        return concat([hf, hb], axis=-1)


def siamese_features(H4):
    """``[p_ii, p_ij, p_ii * p_ij, p_ii - p_ij]`` per slot; the last slot is the self pair."""
    H4 = as_tensor(H4)
    C = H4.shape[-2]
    ones = Tensor(np.ones(H4.shape[:-1] + (1,)))
    p_ii = mul(take(H4, (Ellipsis, slice(C - 1, C), slice(None))), ones)
    return concat([p_ii, H4, mul(p_ii, H4), sub(p_ii, H4)], axis=-1)


class SiameseScorer:
    """Affine map from Siamese features (``8 R``) to one logit per slot.

    The weight starts at zero, so an untrained scorer gives every slot the
    same logit.
    """

    def __init__(self, hidden_dim, prefix="scorer"):
        self.weight = Parameter(np.zeros((8 * hidden_dim, 1)), f"{prefix}.weight")
        self.bias = Parameter(np.zeros(1), f"{prefix}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, H4, pad=None):
        feats = siamese_features(H4)
        logits = matmul(feats, self.weight) + self.bias
        logits = reshape(logits, logits.shape[:-1])
        if pad is not None:
            logits = logits + Tensor(np.where(pad, MASK_VALUE, 0.0))
        return logits
