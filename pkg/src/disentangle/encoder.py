"""Pair encoder: one ``D``-dim vector per (candidate, query) pair.

The default is a trainable hashed bag-of-words. Each utterance is mean-pooled
over bucket embeddings of its tokens; the candidate vector, the query vector
and a same-speaker bit go through one affine map and ``tanh``. Padding slots
encode to exact zeros.

Any object with ``parameters()`` and ``forward(batch) -> Tensor[B, C, D]``
can replace it.
"""

import zlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import tokenize
from .exceptions import ConfigError
from .tensor import Parameter, matmul, mul, reshape, sparse_matmul, tanh


@dataclass
class EncoderConfig:
    hidden_dim: int = 64
    hash_buckets: int = 4096
    max_tokens: int = 128

    def validate(self):
        if self.hidden_dim <= 0 or self.hash_buckets <= 0 or self.max_tokens <= 0:
            raise ConfigError("encoder sizes must be positive")
        if self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be even")
        return self


def token_buckets(text, buckets, max_tokens):
    """Stable bucket ids for the first ``max_tokens`` tokens of ``text``."""
    return [zlib.crc32(tok.encode("utf-8")) % buckets for tok in tokenize(text)[:max_tokens]]


def bag_matrix(texts, buckets, max_tokens):
    """CSR matrix with one mean-pooling row per text plus a trailing all-zero row."""
    rows, cols, vals = [], [], []
    for r, text in enumerate(texts):
        ids = token_buckets(text, buckets, max_tokens)
        if not ids:
            continue
        w = 1.0 / len(ids)
        for b in ids:
            rows.append(r)
            cols.append(b)
            vals.append(w)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(len(texts) + 1, buckets), dtype=np.float64)
    m.sum_duplicates()
    return m


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class HashedBagEncoder:
    """Hashed bag-of-words pair encoder.

    Parameters
    ----------
    config : EncoderConfig
    rng : numpy.random.Generator
        Source for the initial weights.
    """

    def __init__(self, config, rng, prefix="encoder"):
        self.config = config.validate()
        D, V = config.hidden_dim, config.hash_buckets
        # a lookup reads one row, so fan-in is 1 for the embedding table
        self.embedding = Parameter(uniform_init(rng, (V, D), 1), f"{prefix}.embedding")
        self.W_cand = Parameter(uniform_init(rng, (D, D), 2 * D + 1), f"{prefix}.W_cand")
        self.W_query = Parameter(uniform_init(rng, (D, D), 2 * D + 1), f"{prefix}.W_query")
        self.w_speaker = Parameter(uniform_init(rng, (D,), 2 * D + 1), f"{prefix}.w_speaker")
        self.bias = Parameter(np.zeros(D), f"{prefix}.bias")

    def parameters(self):
        return [self.embedding, self.W_cand, self.W_query, self.w_speaker, self.bias]

    def forward(self, batch):
        """Encode a :class:`~disentangle.features.Batch` to ``[B, C, D]``."""
        B, C = batch.pad.shape
        D = self.config.hidden_dim
        cand = reshape(sparse_matmul(batch.cand_bags, self.embedding), (B, C, D))
        query = reshape(sparse_matmul(batch.query_bags, self.embedding), (B, 1, D))
        z = matmul(cand, self.W_cand) + matmul(query, self.W_query)
        z = z + mul(batch.same_speaker[..., None], self.w_speaker) + self.bias
        return mul(tanh(z), batch.keep[..., None])

    def encode_window(self, window, dialogue):
        """``[C, D]`` encoding of one candidate window."""
        from .features import featurize

        feats = featurize([dialogue], [[window]], self.config)
        out = self.forward(feats.batch(np.array([0])))
        return out[0]

    def encode_pair(self, candidate, query):
        """``[D]`` encoding of one pair; ``candidate=None`` is a padding slot."""
        from .features import Batch

        cfg = self.config
        texts = [candidate.text if candidate is not None else "", query.text]
        bags = bag_matrix(texts, cfg.hash_buckets, cfg.max_tokens)
        cand_bags = bags[[0 if candidate is not None else 2]]
        keep = np.array([[candidate is not None]], dtype=float)
        same = np.array([[float(candidate is not None and candidate.speaker == query.speaker)]])
        batch = Batch(
            cand_bags=cand_bags,
            query_bags=bags[[1]],
            same_speaker=same,
            keep=keep,
            pad=~keep.astype(bool),
            visible=np.ones((1, 1, 1), dtype=bool),
            adjacency=np.zeros((1, 1, 1), dtype=bool),
            gold=np.array([0]),
        )
        return self.forward(batch)[0, 0]
