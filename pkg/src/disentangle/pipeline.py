"""Training, parent prediction and thread clustering."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import build_windows, detect_mentions
from .exceptions import CheckpointError, ConfigError, InputError, NumericError
from .features import featurize
from .metrics import Partition
from .model import DisentanglementNet, ModelConfig
from .optim import AdamW
from .tensor import backward, log_softmax_np

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    window: int = 50
    report_every: int = 1
    holdout_fraction: float = 0.1
    lr_decay: str = "linear"

    def validate(self):
        for name in ("epochs", "batch_size", "window", "report_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be non-negative")
        if self.lr_decay not in ("linear", "constant"):
            raise ConfigError(f"lr_decay must be 'linear' or 'constant', got {self.lr_decay!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        return self


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    model: DisentanglementNet
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class LinkPrediction:
    child: int
    parent: int
    confidence: float


def dialogue_windows(dialogues, window):
    return [build_windows(d, detect_mentions(d, window), window) for d in dialogues]


def split_holdout(dialogues, windows, fraction):
    """Window positions for training and for held-out accuracy (tail of each dialogue)."""
    train_idx, held_idx = [], []
    offset = 0
    for d, ws in zip(dialogues, windows):
        n = len(ws)
        n_held = int(math.floor(n * fraction))
        cut = n - n_held
        train_idx.extend(range(offset, offset + cut))
        held_idx.extend(range(offset + cut, offset + n))
        offset += n
    return np.array(train_idx, dtype=np.int64), np.array(held_idx, dtype=np.int64)


def select_slots(logits, pad):
    """Argmax over real slots, ties to the highest slot; also the winner's probability."""
    z = np.where(pad, -np.inf, logits)
    best = z.max(axis=-1, keepdims=True)
    C = z.shape[-1]
    slot = C - 1 - np.argmax((z == best)[..., ::-1], axis=-1)
    masked = np.where(pad, -1e300, logits)
    prob = np.exp(log_softmax_np(masked))
    return slot, prob[np.arange(len(slot)), slot]


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def evaluate_accuracy(net, feats, idx, batch_size=64):
    """Fraction of windows whose predicted slot equals the gold slot."""
    if len(idx) == 0:
        return float("nan")
    correct = 0
    for sl in _batches(len(idx), batch_size):
        batch = feats.batch(idx[sl])
        logits = net.forward(batch).data
        slot, _ = select_slots(logits, batch.pad)
        correct += int((slot == batch.gold).sum())
    return correct / len(idx)


def train(dialogues, cfg, model_config=None, init=None, eval_dialogues=None):
    """Fit the scorer on annotated dialogues.

    Parameters
    ----------
    dialogues : list of Dialogue
        Training data; the last ``cfg.holdout_fraction`` of each dialogue's
        windows is held out for accuracy unless ``eval_dialogues`` is given.
    cfg : TrainConfig
    model_config : ModelConfig, optional
        Architecture for a fresh model; ``window`` and ``seed`` are taken
        from ``cfg``.
    init : DisentanglementNet, optional
        Resume from this model. Its window must equal ``cfg.window``.
    eval_dialogues : list of Dialogue, optional

    Returns
    -------
    TrainResult
        The model and one :class:`EpochRecord` per reported epoch.
    """
    cfg.validate()
    for d in dialogues:
        if not d.annotated:
            raise ConfigError("training needs annotated dialogues")
    if init is not None:
        if init.config.window != cfg.window:
            raise CheckpointError(f"checkpoint window {init.config.window} does not match configured window {cfg.window}")
        net = init
    else:
        mc = model_config or ModelConfig()
        mc = ModelConfig(**{**mc.__dict__, "window": cfg.window, "seed": cfg.seed})
        net = DisentanglementNet(mc)

    enc_cfg = net.config.encoder_config
    windows = dialogue_windows(dialogues, cfg.window)
    feats = featurize(dialogues, windows, enc_cfg)
    if eval_dialogues is None:
        train_idx, held_idx = split_holdout(dialogues, windows, cfg.holdout_fraction)
        eval_feats = feats
    else:
        train_idx = np.arange(len(feats))
        eval_feats = featurize(eval_dialogues, dialogue_windows(eval_dialogues, cfg.window), enc_cfg)
        held_idx = np.arange(len(eval_feats))

    params = net.parameters()
    opt = AdamW(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(net)
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        losses = []
        for sl in _batches(len(order), cfg.batch_size):
            batch = feats.batch(order[sl])
            AdamW.zero_grad(params)
            loss, logits = net.loss(batch, drop_rng)
            if not math.isfinite(loss.item()):
                raise NumericError("training loss is not finite")
            backward(loss)
            if cfg.lr_decay == "linear":
                done = (epoch - 1 + sl.start / len(order)) / cfg.epochs
                opt.lr = cfg.learning_rate * (1.0 - done)
            opt.step(params)
            logp = log_softmax_np(logits.data)
            losses.extend(-logp[np.arange(batch.size), batch.gold])
        if epoch % cfg.report_every == 0 or epoch == cfg.epochs:
            acc = evaluate_accuracy(net, eval_feats, held_idx)
            rec = EpochRecord(epoch, math.fsum(losses) / max(len(losses), 1), acc)
            result.trace.append(rec)
            log.info("epoch %d loss %.4f held-out accuracy %.4f", rec.epoch, rec.loss, rec.accuracy)
    return result


def predict(dialogue, net, batch_size=64):
    """One :class:`LinkPrediction` per utterance, in dialogue order."""
    if len(dialogue) == 0:
        return []
    C = net.config.window
    windows = build_windows(dialogue, detect_mentions(dialogue, C), C)
    feats = featurize([dialogue], [windows], net.config.encoder_config)
    utts = dialogue.utterances
    out = []
    for sl in _batches(len(feats), batch_size):
        idx = np.arange(sl.start, sl.stop)
        batch = feats.batch(idx)
        slots, probs = select_slots(net.forward(batch).data, batch.pad)
        for k, slot, prob in zip(idx, slots, probs):
            w = windows[k]
            parent = utts[w.candidate_indices[slot]].id
            out.append(LinkPrediction(utts[w.query_index].id, parent, float(prob)))
    return out


def parent_accuracy(predictions, dialogue, window=None):
    """Share of utterances whose predicted parent equals the gold parent.

    With ``window`` set, gold parents ``window`` or more positions back count
    as self-links, matching the training target.
    """
    pos = dialogue._positions()
    gold = dict(dialogue.gold_links)
    if window is not None:
        for child, parent in gold.items():
            if pos[child] - pos[parent] >= window:
                gold[child] = child
    hits = sum(1 for p in predictions if gold[p.child] == p.parent)
    return hits / len(predictions) if predictions else float("nan")


class UnionFind:
    """Disjoint sets with path halving and union by size."""

    def __init__(self, items):
        self.parent = {x: x for x in items}
        self.size = {x: 1 for x in items}

    def find(self, x):
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra

    def groups(self):
        out = {}
        for x in self.parent:
            out.setdefault(self.find(x), set()).add(x)
        return list(out.values())


def _as_link_map(links):
    if isinstance(links, dict):
        return dict(links)
    out = {}
    for link in links:
        if link.child in out:
            raise InputError(f"utterance {link.child} has two predicted parents")
        out[link.child] = link.parent
    return out


def cluster(links):
    """Connected components of the reply-to graph as a :class:`Partition`."""
    links = _as_link_map(links)
    uf = UnionFind(links)
    for child, parent in links.items():
        if parent not in links:
            raise InputError(f"link {child}->{parent} refers to unknown utterance {parent}")
        if parent != child:
            uf.union(child, parent)
    return Partition(uf.groups())
