"""The full reply-to scorer and its checkpoint format."""

import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .encoder import EncoderConfig, HashedBagEncoder
from .exceptions import CheckpointError, ConfigError
from .features import GRAPH_SCOPES, reference_graph
from .structure import BiSynLSTM, MaskedAttentionLayer, RGCNLayer, SiameseScorer, attention_mask
from .tensor import Tensor, cross_entropy, mul


@dataclass
class ModelConfig:
    window: int = 50
    hidden_dim: int = 64
    heads: int = 4
    recurrent_dim: int = 32
    hash_buckets: int = 4096
    max_tokens: int = 128
    seed: int = 0
    speaker_mask: bool = True
    reference: bool = True
    dropout: float = 0.0
    graph: str = "query"

    def validate(self):
        if self.window < 2:
            raise ConfigError("window must be at least 2")
        for name in ("hidden_dim", "heads", "recurrent_dim", "hash_buckets", "max_tokens"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.graph not in GRAPH_SCOPES:
            raise ConfigError(f"graph must be one of {GRAPH_SCOPES}, got {self.graph!r}")
        if self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be even")
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by {self.heads} heads")
        return self

    @property
    def encoder_config(self):
        return EncoderConfig(self.hidden_dim, self.hash_buckets, self.max_tokens)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class DisentanglementNet:
    """Encoder, masked attention, r-GCN, bidirectional Syn-LSTM and Siamese scorer.

    ``speaker_mask=False`` replaces the speaker mask by an all-visible one
    (padding stays hidden); ``reference=False`` empties the reference graph.
    """

    def __init__(self, config):
        self.config = config.validate()
        rng = np.random.default_rng(config.seed)
        D, R = config.hidden_dim, config.recurrent_dim
        self.encoder = HashedBagEncoder(config.encoder_config, rng)
        self.attention = MaskedAttentionLayer(D, config.heads, rng)
        self.rgcn = RGCNLayer(D, rng)
        self.recurrent = BiSynLSTM(D, R, rng)
        self.scorer = SiameseScorer(R)

    def parameters(self):
        return (
            self.encoder.parameters()
            + self.attention.parameters()
            + self.rgcn.parameters()
            + self.recurrent.parameters()
            + self.scorer.parameters()
        )

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def visible(self, batch):
        if self.config.speaker_mask:
            return batch.visible
        real = ~batch.pad
        C = real.shape[-1]
        return (real[:, :, None] & real[:, None, :]) | np.eye(C, dtype=bool)

    def adjacency(self, batch):
        """Normalised r-GCN adjacency for ``batch`` (all zero when ``reference`` is off)."""
        adj = reference_graph(batch.adjacency, self.config.graph)
        return adj if self.config.reference else np.zeros_like(adj)

    def _dropout(self, H, rng):
        rate = self.config.dropout
        if rng is None or rate == 0.0:
            return H
        return mul(H, (rng.random(H.shape) >= rate) / (1.0 - rate))

    def forward(self, batch, rng=None):
        """Slot logits ``[B, C]``; padding slots carry ``MASK_VALUE``.

        Passing ``rng`` enables dropout on the pair encodings and on the
        structure-aware features (training mode).
        """
        keep = Tensor(batch.keep[..., None])
        H1 = self._dropout(self.encoder.forward(batch), rng)
        H2 = mul(self.attention.forward(H1, attention_mask(self.visible(batch))), keep)
        H3 = self._dropout(mul(self.rgcn.forward(H2, Tensor(self.adjacency(batch))), keep), rng)
        H4 = self.recurrent.forward(H1, H3)
        return self.scorer.forward(H4, batch.pad)

    def loss(self, batch, rng=None):
        logits = self.forward(batch, rng)
        return cross_entropy(logits, batch.gold), logits

    # checkpoints -----------------------------------------------------------

    def save(self, path_or_file):
        arrays = {name: p.data for name, p in self.named_parameters().items()}
        arrays["__config__"] = np.array(json.dumps(asdict(self.config), sort_keys=True))
        np.savez(path_or_file, **arrays)

    def to_bytes(self):
        buf = io.BytesIO()
        self.save(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, path_or_file, expect=None):
        """Restore a checkpoint; ``expect`` maps config keys to required values."""
        try:
            with np.load(path_or_file, allow_pickle=False) as archive:
                config = ModelConfig.from_dict(json.loads(str(archive["__config__"])))
                arrays = {k: archive[k] for k in archive.files if k != "__config__"}
        except (OSError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise CheckpointError(str(exc)) from None
            raise CheckpointError(f"unreadable checkpoint: {exc}") from None
        for key, value in (expect or {}).items():
            if getattr(config, key) != value:
                raise CheckpointError(f"checkpoint has {key}={getattr(config, key)}, expected {value}")
        net = cls(config)
        params = net.named_parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise CheckpointError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {p.shape}")
            p.value = arrays[name]
        return net
