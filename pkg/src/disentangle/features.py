"""Precomputed numeric inputs for batches of candidate windows."""

from dataclasses import dataclass

import numpy as np

from .encoder import bag_matrix
from .structure import normalize_adjacency


@dataclass
class Batch:
    cand_bags: object  # CSR [B*C, V]
    query_bags: object  # CSR [B, V]
    same_speaker: np.ndarray  # [B, C]
    keep: np.ndarray  # [B, C], 1.0 on real slots
    pad: np.ndarray  # [B, C] bool
    visible: np.ndarray  # [B, C, C] bool, speaker mask == 0
    adjacency: np.ndarray  # [B, C, C] bool, directed reference edges
    gold: np.ndarray  # [B], -1 when unknown

    @property
    def size(self):
        return self.pad.shape[0]


GRAPH_SCOPES = ("query", "window")


def reference_graph(adjacency, scope="query"):
    """Row-normalised r-GCN adjacency ``[B, C, C]`` from directed window edges.

    ``scope="window"`` keeps every in-window edge as built, so each slot
    averages the slots it mentions. ``scope="query"`` keeps only the edges
    leaving the query slot and adds their reverse, so the candidates the query
    mentions exchange messages with the query alone.
    """
    adj = np.asarray(adjacency, dtype=bool)
    if scope == "query":
        q = np.zeros_like(adj)
        q[..., -1, :] = adj[..., -1, :]
        adj = q | np.swapaxes(q, -1, -2)
    elif scope != "window":
        raise ValueError(f"unknown graph scope {scope!r}")
    return normalize_adjacency(adj)


@dataclass
class FeatureSet:
    bags: object
    cand_rows: np.ndarray
    query_rows: np.ndarray
    visible: np.ndarray
    adjacency: np.ndarray
    pad: np.ndarray
    same_speaker: np.ndarray
    gold: np.ndarray
    origin: list

    def __len__(self):
        return len(self.origin)

    def batch(self, idx):
        idx = np.asarray(idx)
        B, C = len(idx), self.pad.shape[1]
        pad = self.pad[idx]
        return Batch(
            cand_bags=self.bags[self.cand_rows[idx].reshape(B * C)],
            query_bags=self.bags[self.query_rows[idx]],
            same_speaker=self.same_speaker[idx],
            keep=(~pad).astype(np.float64),
            pad=pad,
            visible=self.visible[idx],
            adjacency=self.adjacency[idx],
            gold=self.gold[idx],
        )


def featurize(dialogues, windows, encoder_config):
    """Stack the windows of several dialogues into one :class:`FeatureSet`.

    ``windows[k]`` are the windows built for ``dialogues[k]``.
    """
    cfg = encoder_config
    texts, offsets = [], []
    for d in dialogues:
        offsets.append(len(texts))
        texts.extend(u.text for u in d.utterances)
    bags = bag_matrix(texts, cfg.hash_buckets, cfg.max_tokens)
    zero_row = len(texts)

    cand_rows, query_rows, visible, adjacency, pads, same, gold, origin = [], [], [], [], [], [], [], []
    for k, (d, ws) in enumerate(zip(dialogues, windows)):
        speakers = np.array([u.speaker for u in d.utterances], dtype=object)
        for w in ws:
            cand = w.candidate_indices
            rows = np.where(w.pad, zero_row, offsets[k] + np.maximum(cand, 0))
            cand_rows.append(rows)
            query_rows.append(offsets[k] + w.query_index)
            visible.append(w.speaker_mask == 0)
            adjacency.append(w.reference_adjacency)
            pads.append(w.pad)
            q_speaker = speakers[w.query_index]
            s = np.array([not p and speakers[c] == q_speaker for c, p in zip(cand, w.pad)], dtype=np.float64)
            same.append(s)
            gold.append(-1 if w.gold_slot is None else w.gold_slot)
            origin.append((k, w.query_index))
    C = next((w.width for ws in windows for w in ws), 0)
    return FeatureSet(
        bags=bags,
        cand_rows=np.array(cand_rows, dtype=np.int64).reshape(-1, C),
        query_rows=np.array(query_rows, dtype=np.int64),
        visible=np.array(visible, dtype=bool).reshape(-1, C, C),
        adjacency=np.array(adjacency, dtype=bool).reshape(-1, C, C),
        pad=np.array(pads, dtype=bool).reshape(-1, C),
        same_speaker=np.array(same).reshape(-1, C),
        gold=np.array(gold, dtype=np.int64),
        origin=origin,
    )

