import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disentangle.corpus import (
    Dialogue,
    MentionGraph,
    SynthConfig,
    Utterance,
    build_windows,
    detect_mentions,
    dialogue_to_strings,
    gold_slot_for,
    load_dialogue,
    load_links,
    mention_tokens,
    synth_generate,
    tokenize,
)
from disentangle.exceptions import ConfigError, ParseError
from disentangle.metrics import Partition
from disentangle.pipeline import cluster

from oracles import closure_oracle


def _log(*rows):
    return [json.dumps(r) + "\n" for r in rows]


def _dialogue(speakers, texts=None, links=None):
    texts = texts or [""] * len(speakers)
    utts = [Utterance(i, s, t) for i, (s, t) in enumerate(zip(speakers, texts))]
    return Dialogue(utts, links)


# parsing


def test_load_round_trip_is_fixed_point():
    log = _log(
        {"id": 0, "speaker": "ann", "text": "hi all", "ts": "10:00"},
        {"id": 1, "speaker": "bob", "text": "ann: hello"},
        {"id": 4, "speaker": "ann", "text": "bob, sure"},
    )
    d = load_dialogue(log, ["1\t0\n", "# comment\n", "4\t1\n"])
    assert d.gold_links == {0: 0, 1: 0, 4: 1}
    jsonl, tsv = dialogue_to_strings(d)
    d2 = load_dialogue(io.StringIO(jsonl), io.StringIO(tsv))
    assert d2 == d
    assert dialogue_to_strings(d2) == (jsonl, tsv)


def test_unannotated_and_empty_links():
    log = _log({"id": 0, "speaker": "a"}, {"id": 1, "speaker": "b"})
    assert load_dialogue(log).gold_links is None
    assert load_dialogue(log, []).gold_links == {0: 0, 1: 1}


@pytest.mark.parametrize(
    "rows, links, line",
    [
        ([{"id": 0, "speaker": "a"}, {"id": 0, "speaker": "b"}], None, 2),
        ([{"id": 1, "speaker": "a"}, {"id": 0, "speaker": "b"}], None, 2),
        ([{"id": 0, "speaker": ""}], None, 1),
        ([{"id": "x", "speaker": "a"}], None, 1),
        ([{"id": 0, "speaker": "a", "text": 3}], None, 1),
    ],
)
def test_log_errors_name_the_line(rows, links, line):
    with pytest.raises(ParseError, match=f"line {line}"):
        load_dialogue(_log(*rows), links)


def test_malformed_json_line():
    with pytest.raises(ParseError, match="line 2"):
        load_dialogue(['{"id": 0, "speaker": "a"}\n', "{nope\n"])


@pytest.mark.parametrize(
    "links, fragment",
    [
        (["0\t1\n"], "after child"),
        (["1\t-1\n"], "unknown parent"),
        (["9\t0\n"], "unknown child"),
        (["1\t0\n", "1\t0\n"], "second link"),
        (["1 0\n"], "child<TAB>parent"),
        (["1\tx\n"], "non-integer"),
    ],
)
def test_link_errors(links, fragment):
    log = _log({"id": 0, "speaker": "a"}, {"id": 1, "speaker": "b"})
    with pytest.raises(ParseError, match=fragment):
        load_dialogue(log, links)


def test_load_links_bare():
    assert load_links(["3\t1\n", "\n", "5\t5  # root\n"]) == {3: 1, 5: 5}


# mentions


def test_tokenize_and_mention_tokens():
    assert tokenize("Hi, Ann-Marie: try x_y!") == ["hi", "ann-marie", "try", "x_y"]
    assert "regum" in mention_tokens("regum: did you try")
    assert "bob" in mention_tokens("thanks bob, works")
    assert "bo" not in mention_tokens("bob: hi")


def test_detect_mentions_whole_token_case_insensitive():
    d = _dialogue(["Ann", "bob", "carl", "dee"], ["", "ANN: hi", "bob, annie", "carl"])
    assert detect_mentions(d, 50).edges == {(1, 0), (2, 1), (3, 2)}


def test_detect_mentions_respects_horizon_and_direction():
    d = _dialogue(["a", "b", "c", "d"], ["d", "x", "x", "a"])
    assert detect_mentions(d, 4).edges == {(3, 0)}
    assert detect_mentions(d, 3).edges == frozenset()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=12), st.integers(2, 6), st.integers(0, 10**6))
def test_detect_mentions_edges_point_back_within_window(speakers, width, seed):
    rng = np.random.default_rng(seed)
    texts = [" ".join(rng.choice(["a:", "b", "c,", "zz"], size=2)) for _ in speakers]
    d = _dialogue(speakers, texts)
    for a, b in detect_mentions(d, width).edges:
        assert b < a and a - b <= width - 1


# windows


def test_window_padding_at_index_one():
    d = _dialogue(["a", "b"], links={0: 0, 1: 0})
    w = build_windows(d, detect_mentions(d, 4), 4)[1]
    assert w.pad.tolist() == [True, True, False, False]
    assert w.candidate_indices.tolist() == [-1, -1, 0, 1]
    assert w.gold_slot == 2


def test_speaker_mask_example():
    d = _dialogue(["a", "b", "a"])
    m = build_windows(d, detect_mentions(d, 3), 3)[2].speaker_mask
    assert m[0][2] == 0 and m[2][0] == 0
    assert m[0][1] == -np.inf


def test_pad_slots_only_see_themselves():
    d = _dialogue(["a", "a"])
    m = build_windows(d, MentionGraph(), 4)[1].speaker_mask
    assert m[0].tolist() == [0.0, -np.inf, -np.inf, -np.inf]
    assert m[2, 3] == 0.0


@pytest.mark.parametrize("back, expected", [(0, 49), (1, 48), (49, 0), (50, 49), (60, 49)])
def test_gold_slot_rule(back, expected):
    assert gold_slot_for(100, 100 - back, 50) == expected


def test_self_loop_for_distant_parent():
    n = 70
    links = {i: i for i in range(n)}
    links[65] = 5
    d = _dialogue(["a", "b"] * (n // 2), links=links)
    w = build_windows(d, detect_mentions(d, 50), 50)[65]
    assert w.gold_slot == 49
    assert w.candidate_indices[49] == 65


def test_reference_adjacency_points_back_within_window():
    d = _dialogue(["a", "b", "c", "d"], ["", "a:", "b:", "a: c,"], links={0: 0, 1: 0, 2: 1, 3: 2})
    w = build_windows(d, detect_mentions(d, 3), 3)[3]
    # slots hold utterances 1, 2, 3; the mention of "a" from 3 falls outside
    expected = np.zeros((3, 3), dtype=bool)
    expected[2, 1] = True
    expected[1, 0] = True
    np.testing.assert_array_equal(w.reference_adjacency, expected)


def test_width_too_small():
    with pytest.raises(ConfigError):
        build_windows(_dialogue(["a"]), MentionGraph(), 1)


@pytest.mark.parametrize("seed", range(5))
def test_window_invariants_on_synthetic_data(seed):
    d = synth_generate(SynthConfig(n_utterances=80, seed=seed))
    C = 10
    for i, w in enumerate(build_windows(d, detect_mentions(d, C), C)):
        assert 0 <= w.gold_slot <= C - 1
        assert w.candidate_indices[C - 1] == i
        real = ~w.pad
        sub = w.speaker_mask[np.ix_(real, real)]
        np.testing.assert_array_equal(sub, sub.T)
        adj = w.reference_adjacency
        assert not np.triu(adj).any()
        assert not adj[w.pad].any() and not adj[:, w.pad].any()


# generator


def test_synth_is_deterministic():
    a = synth_generate(SynthConfig(n_utterances=150, seed=7))
    b = synth_generate(SynthConfig(n_utterances=150, seed=7))
    assert dialogue_to_strings(a) == dialogue_to_strings(b)
    assert a.threads == b.threads
    assert dialogue_to_strings(a) != dialogue_to_strings(synth_generate(SynthConfig(n_utterances=150, seed=8)))


def test_synth_links_stay_in_thread_and_point_back():
    d = synth_generate(SynthConfig(n_utterances=300, seed=1))
    d.validate()
    for child, parent in d.gold_links.items():
        assert parent <= child
        assert d.threads[child] == d.threads[parent]
    assert sum(c == p for c, p in d.gold_links.items()) == 4


def test_synth_single_thread_is_connected():
    d = synth_generate(n_utterances=40, n_threads=1, seed=3)
    assert len(cluster(d.gold_links).clusters) == 1


def test_synth_full_mention_rate_names_parent_speaker():
    d = synth_generate(n_utterances=120, mention_prob=1.0, seed=2)
    utts = d.utterances
    for child, parent in d.gold_links.items():
        if child != parent:
            assert utts[parent].speaker.lower() in mention_tokens(utts[child].text)


@pytest.mark.parametrize("seed", range(5))
def test_synth_partition_is_closure_of_links(seed):
    d = synth_generate(n_utterances=40, n_threads=3, seed=seed)
    threads = Partition.from_labels(d.threads)
    assert cluster(d.gold_links) == threads
    assert closure_oracle(d.gold_links) == threads


@pytest.mark.parametrize(
    "kwargs",
    [dict(n_threads=0), dict(n_users=1), dict(n_utterances=3, n_threads=4), dict(mention_prob=1.5)],
)
def test_synth_infeasible_config(kwargs):
    with pytest.raises(ConfigError):
        synth_generate(**kwargs)
