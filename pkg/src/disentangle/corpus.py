"""Chat-log ingestion, mention detection, candidate windows and synthetic data.

File formats
------------
Utterances are JSON-lines, one object per message::

    {"id": 0, "speaker": "regum", "text": "try apt", "ts": "03:56"}

Reply-to links are tab-separated ``child<TAB>parent`` lines; ``#`` starts a
comment. An utterance without a link line is its own parent.
"""

import io
import json
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ParseError

_TOKEN_RE = re.compile(r"[\w-]+")


@dataclass(frozen=True)
class Utterance:
    id: int
    speaker: str
    text: str = ""
    timestamp: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.speaker, str) or not self.speaker:
            raise ValueError("speaker must be a non-empty string")


@dataclass
class Dialogue:
    """An ordered chat log plus optional reply-to annotation.

    ``gold_links`` maps child id to parent id and is ``None`` for an
    unannotated log. ``threads`` is filled in by the synthetic generator only.
    """

    utterances: list
    gold_links: Optional[dict] = None
    threads: Optional[dict] = field(default=None, compare=False)

    def __len__(self):
        return len(self.utterances)

    @property
    def ids(self):
        return [u.id for u in self.utterances]

    @property
    def annotated(self):
        return self.gold_links is not None

    def index_of(self, uid):
        return self._positions()[uid]

    def _positions(self):
        return {u.id: i for i, u in enumerate(self.utterances)}

    def validate(self):
        prev = -1
        for u in self.utterances:
            if u.id <= prev:
                raise ParseError(f"utterance ids must be strictly increasing, got {u.id} after {prev}")
            prev = u.id
        if self.gold_links is None:
            return self
        known = set(self.ids)
        if set(self.gold_links) != known:
            raise ParseError("gold links must cover every utterance exactly once")
        for child, parent in self.gold_links.items():
            if parent not in known:
                raise ParseError(f"link {child}->{parent} refers to unknown utterance {parent}")
            if parent > child:
                raise ParseError(f"link {child}->{parent} points forward")
        return self


@dataclass(frozen=True)
class MentionGraph:
    """Directed reference edges ``(mentioning id, mentioned id)``."""

    edges: frozenset = frozenset()

    def targets(self, uid):
        return sorted(b for a, b in self.edges if a == uid)


@dataclass
class CandidateWindow:
    """The ``C`` parent candidates for one query utterance.

    Slot ``C - 1`` always holds the query itself; earlier slots hold older
    utterances, and slots before the dialogue start are padding
    (``candidate_indices == -1``).
    """

    query_index: int
    candidate_indices: np.ndarray
    pad: np.ndarray
    speaker_mask: np.ndarray
    reference_adjacency: np.ndarray
    gold_slot: Optional[int]

    @property
    def width(self):
        return len(self.candidate_indices)


# ---------------------------------------------------------------------------
# reading and writing


def _open_text(source):
    if source is None:
        return None
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        return open(source, encoding="utf-8")
    return source


def load_dialogue(log_stream, links_stream=None):
    """Parse a JSON-lines log and an optional TSV links file.

    Streams may be file objects, iterables of lines, or paths. With
    ``links_stream=None`` the dialogue is unannotated; an empty links stream
    makes every utterance its own parent.

    Raises
    ------
    ParseError
        On malformed JSON, bad fields, duplicate or decreasing ids, forward
        links or links to unknown ids. The message names the line.
    """
    log = _open_text(log_stream)
    utterances = []
    prev = None
    try:
        for lineno, line in enumerate(log, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            uid = obj.get("id")
            if not isinstance(uid, int) or isinstance(uid, bool) or uid < 0:
                raise ParseError(f"id must be a non-negative integer, got {uid!r}", lineno)
            speaker = obj.get("speaker")
            if not isinstance(speaker, str) or not speaker:
                raise ParseError("speaker must be a non-empty string", lineno)
            text = obj.get("text", "")
            if not isinstance(text, str):
                raise ParseError("text must be a string", lineno)
            ts = obj.get("ts")
            if ts is not None and not isinstance(ts, str):
                raise ParseError("ts must be a string", lineno)
            if prev is not None and uid == prev:
                raise ParseError(f"duplicate id {uid}", lineno)
            if prev is not None and uid < prev:
                raise ParseError(f"id {uid} decreases after {prev}", lineno)
            prev = uid
            utterances.append(Utterance(uid, speaker, text, ts))
    finally:
        if log is not log_stream:
            log.close()

    if links_stream is None:
        return Dialogue(utterances, None)

    known = {u.id for u in utterances}
    links = {}
    stream = _open_text(links_stream)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'child<TAB>parent'", lineno)
            try:
                child, parent = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer id in {line!r}", lineno) from None
            if parent > child:
                raise ParseError(f"parent {parent} comes after child {child}", lineno)
            if child not in known:
                raise ParseError(f"unknown child id {child}", lineno)
            if parent not in known:
                raise ParseError(f"unknown parent id {parent}", lineno)
            if child in links:
                raise ParseError(f"second link for child {child}", lineno)
            links[child] = parent
    finally:
        if stream is not links_stream:
            stream.close()
    for uid in known:
        links.setdefault(uid, uid)
    return Dialogue(utterances, links)


def dump_utterances(dialogue, stream):
    for u in dialogue.utterances:
        obj = {"id": u.id, "speaker": u.speaker, "text": u.text}
        if u.timestamp is not None:
            obj["ts"] = u.timestamp
        stream.write(json.dumps(obj, ensure_ascii=False) + "\n")


def dump_links(links, stream):
    """Write a ``child -> parent`` mapping in the links TSV format."""
    for child in sorted(links):
        stream.write(f"{child}\t{links[child]}\n")


def save_dialogue(dialogue, utterances_path, links_path=None):
    with open(utterances_path, "w", encoding="utf-8", newline="\n") as fh:
        dump_utterances(dialogue, fh)
    if links_path is not None and dialogue.gold_links is not None:
        with open(links_path, "w", encoding="ascii", newline="\n") as fh:
            dump_links(dialogue.gold_links, fh)


def dialogue_to_strings(dialogue):
    """Serialize to ``(jsonl, tsv)`` strings."""
    a, b = io.StringIO(), io.StringIO()
    dump_utterances(dialogue, a)
    if dialogue.gold_links is not None:
        dump_links(dialogue.gold_links, b)
    return a.getvalue(), b.getvalue()


def load_links(stream):
    """Read a bare links TSV into a dict, without utterance validation."""
    stream_ = _open_text(stream)
    links = {}
    try:
        for lineno, line in enumerate(stream_, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'child<TAB>parent'", lineno)
            try:
                child, parent = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer id in {line!r}", lineno) from None
            if child in links:
                raise ParseError(f"second link for child {child}", lineno)
            if parent > child:
                raise ParseError(f"parent {parent} comes after child {child}", lineno)
            links[child] = parent
    finally:
        if stream_ is not stream:
            stream_.close()
    return links


# ---------------------------------------------------------------------------
# mentions and windows


def tokenize(text):
    """Lower-cased word tokens: maximal runs of letters, digits, ``_`` and ``-``."""
    return _TOKEN_RE.findall(text.lower())


def mention_tokens(text):
    """Tokens a nick can match: word runs plus whitespace chunks minus a trailing ':' or ','."""
    lowered = text.lower()
    tokens = set(_TOKEN_RE.findall(lowered))
    for chunk in lowered.split():
        if chunk[-1:] in (":", ","):
            chunk = chunk[:-1]
        if chunk:
            tokens.add(chunk)
    return tokens


def detect_mentions(dialogue, window):
    """Edges from each utterance to earlier in-window utterances whose speaker it names."""
    edges = set()
    utts = dialogue.utterances
    for a in range(len(utts)):
        tokens = mention_tokens(utts[a].text)
        if not tokens:
            continue
        for b in range(max(0, a - (window - 1)), a):
            if utts[b].speaker.lower() in tokens:
                edges.add((utts[a].id, utts[b].id))
    return MentionGraph(frozenset(edges))


def gold_slot_for(query_index, parent_index, width):
    """Slot of the parent, or the self slot when it is ``width`` or more positions back."""
    back = query_index - parent_index
    if back < 0:
        raise ValueError("parent after child")
    if back >= width:
        return width - 1
    return width - 1 - back


def build_windows(dialogue, graph, width):
    """One :class:`CandidateWindow` per utterance.

    The speaker mask is 0 between same-speaker slots and ``-inf`` otherwise;
    padding slots see only themselves. ``reference_adjacency[p, q]`` is set
    when slot ``p`` mentions the speaker of the earlier slot ``q``, so each
    utterance aggregates the utterances it refers to.
    """
    if width < 2:
        raise ConfigError("window width must be at least 2")
    utts = dialogue.utterances
    pos = dialogue._positions()
    slot_edges = {}
    for a, b in graph.edges:
        if a in pos and b in pos:
            slot_edges.setdefault(pos[a], []).append(pos[b])

    codes_of = {}
    speaker_code = np.array([codes_of.setdefault(u.speaker, len(codes_of)) for u in utts], dtype=int)
    windows = []
    offsets = np.arange(width) - (width - 1)
    for i in range(len(utts)):
        cand = offsets + i
        pad = cand < 0
        cand = np.where(pad, -1, cand)
        codes = np.where(pad, -1, speaker_code[cand])
        same = (codes[:, None] == codes[None, :]) & ~pad[:, None] & ~pad[None, :]
        mask = np.where(same, 0.0, -np.inf)
        np.fill_diagonal(mask, 0.0)

        adj = np.zeros((width, width), dtype=bool)
        first = i - (width - 1)
        for a in range(max(first, 0), i + 1):
            for b in slot_edges.get(a, ()):
                if b >= first and b != a:
                    sa, sb = a - first, b - first
                    adj[sa, sb] = True

        gold = None
        if dialogue.gold_links is not None:
            parent = dialogue.gold_links[utts[i].id]
            gold = gold_slot_for(i, pos[parent], width)
        windows.append(CandidateWindow(i, cand, pad, mask, adj, gold))
    return windows


# ---------------------------------------------------------------------------
# synthetic tangled dialogues

_COMMON_WORDS = (
    "the it is to a i you and that this on in with for but so what how "
    "does just have not can try when my any it's now then yes no ok"
).split()
_ONSETS = ["b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "gr", "pl", "sh"]
_NUCLEI = ["a", "e", "i", "o", "u", "ai", "ou"]


@dataclass
class SynthConfig:
    """Generator settings. Only the first five are part of the public contract."""

    n_utterances: int = 200
    n_users: int = 6
    n_threads: int = 4
    mention_prob: float = 0.9
    seed: int = 0
    topic_words: int = 12
    topic_rate: float = 0.7
    home_stickiness: float = 0.85
    recency_bias: float = 0.7
    reply_horizon: int = 6

    def validate(self):
        if self.n_users < 2:
            raise ConfigError("n_users must be at least 2")
        if self.n_threads < 1:
            raise ConfigError("n_threads must be at least 1")
        if self.n_utterances < 1:
            raise ConfigError("n_utterances must be positive")
        if self.n_threads > self.n_utterances:
            raise ConfigError(f"cannot fit {self.n_threads} threads into {self.n_utterances} utterances")
        if not 0.0 <= self.mention_prob <= 1.0:
            raise ConfigError("mention_prob must lie in [0, 1]")
        return self


def _pseudo_words(rng, count, taken, syllables=(2, 3)):
    words = []
    while len(words) < count:
        n = rng.integers(syllables[0], syllables[1] + 1)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _NUCLEI[rng.integers(len(_NUCLEI))] for _ in range(n))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def synth_generate(config=None, **kwargs):
    """Generate a tangled multi-thread chat with known reply-to links.

    Each user has a home thread they mostly post in. Threads open at random
    early positions with a self-linked root; every other message replies to a
    recent message of its thread (usually the latest one by another user)
    and, with probability ``mention_prob``, addresses the parent's speaker
    as ``nick:``. Message words come mostly from a per-thread vocabulary.
    """
    cfg = config if config is not None else SynthConfig(**kwargs)
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    taken = set(_COMMON_WORDS)
    nicks = _pseudo_words(rng, cfg.n_users, taken, syllables=(2, 2))
    pools = [_pseudo_words(rng, cfg.topic_words, taken) for _ in range(cfg.n_threads)]

    order = rng.permutation(cfg.n_users)
    home = np.empty(cfg.n_users, dtype=int)
    home[order] = np.arange(cfg.n_users) % cfg.n_threads

    n = cfg.n_utterances
    span = max(cfg.n_threads, n // 5)
    starts = [0] + sorted(rng.choice(np.arange(1, span), size=cfg.n_threads - 1, replace=False).tolist())
    start_of = {p: t for t, p in enumerate(starts)}

    def words(thread, k):
        out = []
        for _ in range(k):
            if rng.random() < cfg.topic_rate:
                out.append(pools[thread][rng.integers(cfg.topic_words)])
            else:
                out.append(_COMMON_WORDS[rng.integers(len(_COMMON_WORDS))])
        return out

    utterances, links, threads = [], {}, {}
    history = [[] for _ in range(cfg.n_threads)]
    speaker_at = []
    active = []
    for t in range(n):
        if t in start_of:
            thread = start_of[t]
            members = [u for u in range(cfg.n_users) if home[u] == thread]
            user = members[rng.integers(len(members))] if members else int(rng.integers(cfg.n_users))
            active.append(thread)
            text = " ".join(words(thread, int(rng.integers(4, 9))))
            parent = t
        else:
            user = int(rng.integers(cfg.n_users))
            if home[user] in active and rng.random() < cfg.home_stickiness:
                thread = int(home[user])
            else:
                thread = active[rng.integers(len(active))]
            recent = history[thread][-cfg.reply_horizon:]
            latest_by = {}
            for p in reversed(recent):
                latest_by.setdefault(speaker_at[p], p)
            options = [p for s, p in latest_by.items() if s != user] or list(latest_by.values())
            options.sort(reverse=True)
            if len(options) == 1 or rng.random() < cfg.recency_bias:
                parent = options[0]
            else:
                parent = options[1 + rng.integers(len(options) - 1)]
            body = words(thread, int(rng.integers(3, 8)))
            if rng.random() < cfg.mention_prob:
                body.insert(0, nicks[speaker_at[parent]] + ":")
            text = " ".join(body)
        speaker_at.append(user)
        history[thread].append(t)
        threads[t] = thread
        links[t] = parent
        ts = f"{(t // 60) % 24:02d}:{t % 60:02d}"
        utterances.append(Utterance(t, nicks[user], text, ts))
    return Dialogue(utterances, links, threads)
