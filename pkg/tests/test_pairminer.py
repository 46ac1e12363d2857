import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import edit_distance_oracle, make_sentences
from semistyle import synthetic
from semistyle.pairminer import (
    ContentSpan,
    MarkerTable,
    Method,
    MinerConfig,
    PseudoPair,
    TfidfEmbedder,
    _PaddedTargets,
    embed,
    extract_content,
    filter_pairs,
    levenshtein,
    match_lexical,
    match_semantic,
    mine_markers,
    mine_pairs,
    read_pairs_tsv,
    select_pairs,
    write_pairs_tsv,
)
from semistyle.textcore import StyleLabel, build_vocab, encode_sentence

S, T = StyleLabel.S, StyleLabel.T


def corpora(lines_s, lines_t):
    v = build_vocab(lines_s + lines_t)
    return v, make_sentences(v, lines_s, S), make_sentences(v, lines_t, T)


# markers


def test_unigram_ratio_hand_count():
    v, cs, ct = corpora(["the food was awful"] * 10, ["the food was fine"] * 10)
    table = mine_markers(cs, ct, n_max=1, ratio_threshold=5.0, smoothing=1.0)
    awful = (v.token_to_id["awful"],)
    assert table.for_style(S)[awful] == pytest.approx(11.0)
    assert awful not in table.for_style(T)


def test_equal_counts_never_a_marker():
    v, cs, ct = corpora(["x y"] * 3, ["x z"] * 3)
    table = mine_markers(cs, ct, n_max=1, ratio_threshold=1.0)
    x = (v.token_to_id["x"],)
    assert x not in table.for_style(S) and x not in table.for_style(T)


def test_bigram_counted_as_unit():
    lines_s = ["very bad"] * 8 + ["filler one"] * 2
    lines_t = ["very bad"] + ["bad very"] * 7 + ["filler two"] * 2
    v, cs, ct = corpora(lines_s, lines_t)
    table = mine_markers(cs, ct, n_max=2, ratio_threshold=4.0)
    vb = (v.token_to_id["very"], v.token_to_id["bad"])
    assert table.for_style(S)[vb] == pytest.approx(4.5)


def test_marker_table_invariants_and_symmetry():
    raw = synthetic.polarity_corpus(3, n_train=300, n_valid=1, n_test=1)["train"]
    v = build_vocab(raw[S] + raw[T])
    cs, ct = make_sentences(v, raw[S], S), make_sentences(v, raw[T], T)
    table = mine_markers(cs, ct, n_max=3, ratio_threshold=5.0)
    assert not table.for_style(S).keys() & table.for_style(T).keys()
    assert all(r >= 5.0 for st_ in StyleLabel for r in table.for_style(st_).values())
    flipped_s = [encode_sentence(s.surface, v, T) for s in cs]
    flipped_t = [encode_sentence(s.surface, v, S) for s in ct]
    swapped = mine_markers(flipped_t, flipped_s, n_max=3, ratio_threshold=5.0)
    assert swapped.for_style(S) == table.for_style(T)
    assert swapped.for_style(T) == table.for_style(S)


def test_mine_markers_rejects_empty():
    v, cs, ct = corpora(["a b"], ["c d"])
    with pytest.raises(ValueError):
        mine_markers([], ct)


# content extraction


def _table(v, style, grams):
    return MarkerTable({style: {tuple(v.token_to_id[w] for w in g.split()): 10.0 for g in grams}}, 4, 5.0)


def test_extract_single_removal():
    v = build_vocab(["the food was awful"])
    span = extract_content(encode_sentence("the food was awful", v, S), _table(v, S, ["awful"]))
    assert span.kept_ids == tuple(v.token_to_id[w] for w in "the food was".split())
    assert span.removed_spans == ((3, 4),)


def test_extract_no_markers_is_identity():
    v = build_vocab(["the food was awful"])
    s = encode_sentence("the food was awful", v, S)
    span = extract_content(s, _table(v, T, ["awful"]))
    assert span.kept_ids == s.ids and not span.removed_spans


def test_extract_longest_first():
    v = build_vocab(["very bad service"])
    span = extract_content(encode_sentence("very bad service", v, S), _table(v, S, ["very bad", "bad"]))
    assert span.kept_ids == (v.token_to_id["service"],)
    assert span.removed_spans == ((0, 2),)


def test_all_marker_sentence_is_degenerate():
    v = build_vocab(["awful awful"])
    span = extract_content(encode_sentence("awful awful", v, S), _table(v, S, ["awful"]))
    assert span.degenerate


# levenshtein


def test_levenshtein_examples():
    assert levenshtein(list("abc"), list("abc")) == 0
    assert levenshtein([], list("abc")) == 3
    assert levenshtein(list("kitten"), list("sitting")) == 3


seqs = st.lists(st.integers(0, 3), max_size=7)


@settings(max_examples=200, deadline=None)
@given(seqs, seqs, seqs)
def test_levenshtein_metric_axioms(a, b, c):
    d = levenshtein(a, b)
    assert d == edit_distance_oracle(a, b)
    assert d >= 0 and (d == 0) == (a == b)
    assert d == levenshtein(b, a)
    assert levenshtein(a, c) <= d + levenshtein(b, c)


@settings(max_examples=100, deadline=None)
@given(seqs, st.lists(seqs, min_size=1, max_size=6))
def test_vectorized_distances_match_scalar(a, targets):
    assert list(_PaddedTargets(targets).distances(a)) == [levenshtein(a, t) for t in targets]


# lexical matching


def _spans(v, lines, style):
    return [ContentSpan(s, s.ids) for s in make_sentences(v, lines, style)]


def test_identical_span_matches_with_zero():
    v = build_vocab(["a b c", "a b d", "x y z"])
    pairs = match_lexical(_spans(v, ["a b c"], S), _spans(v, ["x y z", "a b c"], T))
    assert pairs[0].target.surface == "a b c" and pairs[0].similarity == 0


def test_tie_goes_to_lowest_index():
    v = build_vocab(["a b c", "a b d", "a b e"])
    pairs = match_lexical(_spans(v, ["a b c"], S), _spans(v, ["a b d", "a b e"], T))
    assert pairs[0].target.surface == "a b d" and pairs[0].similarity == 1


def test_empty_target_side_errors():
    v = build_vocab(["a b"])
    with pytest.raises(ValueError):
        match_lexical(_spans(v, ["a b"], S), [])


def test_match_lexical_is_brute_force_minimum():
    rng = random.Random(0)
    words = "a b c d e".split()
    lines = lambda n: [" ".join(rng.choice(words) for _ in range(rng.randint(1, 6))) for _ in range(n)]
    ls, lt = lines(100), lines(100)
    v = build_vocab(ls + lt)
    ss, tt = _spans(v, ls, S), _spans(v, lt, T)
    for span, pair in zip(ss, match_lexical(ss, tt)):
        dists = [edit_distance_oracle(span.kept_ids, t.kept_ids) for t in tt]
        assert pair.similarity == min(dists)
        assert pair.target is tt[dists.index(min(dists))].owner


# semantic matching


def test_tfidf_identical_and_disjoint():
    v, cs, ct = corpora(["a b c", "d e"], ["a b c", "f g"])
    e = TfidfEmbedder().fit(cs + ct)
    assert embed(cs[0], e) @ embed(ct[0], e) == pytest.approx(1.0)
    assert embed(cs[1], e) @ embed(ct[1], e) == pytest.approx(0.0)


def test_tfidf_cosine_matches_hand_computation():
    # docs: "a b", "a c"; idf(t) = ln((1+n)/(1+df)) + 1
    v, cs, ct = corpora(["a b"], ["a c"])
    e = TfidfEmbedder().fit(cs + ct)
    idf_a = math.log(3 / 3) + 1
    idf_b = math.log(3 / 2) + 1
    expected = idf_a**2 / (idf_a**2 + idf_b**2)
    assert embed(cs[0], e) @ embed(ct[0], e) == pytest.approx(expected, abs=1e-12)


def test_unfitted_embedder_errors():
    v, cs, _ = corpora(["a b"], ["c"])
    with pytest.raises(RuntimeError):
        embed(cs[0], TfidfEmbedder())


def test_semantic_identical_sentence_matched():
    v, cs, ct = corpora(["the food was good here"], ["staff rude", "the food was good here", "x"])
    e = TfidfEmbedder().fit(cs + ct)
    (pair,) = match_semantic(cs, ct, e)
    assert pair.target is ct[1] and pair.similarity == pytest.approx(1.0)
    assert pair.method is Method.SEMANTIC


class _FixedClassifier:
    def __init__(self, p_t):
        self.p_t = np.asarray(p_t)

    def predict_proba(self, sentences):
        return np.stack([1 - self.p_t, self.p_t], axis=1)


def test_semantic_classifier_filter_drops_confident_wrong_style():
    v, cs, ct = corpora(["a b c"], ["a b c", "a b"])
    e = TfidfEmbedder().fit(cs + ct)
    assert match_semantic(cs, ct, e, _FixedClassifier([0.01, 0.99]), 0.9) == []
    assert len(match_semantic(cs, ct, e, _FixedClassifier([0.2, 0.99]), 0.9)) == 1


def test_semantic_empty_target_errors():
    v, cs, _ = corpora(["a b"], ["c"])
    with pytest.raises(ValueError):
        match_semantic(cs, [], TfidfEmbedder().fit(cs))


# filtering and selection


def _pair(v, src, tgt, sim, method=Method.LEXICAL):
    return PseudoPair(encode_sentence(src, v, S), encode_sentence(tgt, v, T), sim, method)


def test_filter_rules():
    v = build_vocab(["a b c d e f"])
    short = _pair(v, "a b c d", "a b c d e", 0)
    far = _pair(v, "a b c d e", "a b c d e", 9)
    ok = _pair(v, "a b c d e", "a b c d f", 1)
    weak = _pair(v, "a b c d e", "a b c d f", 0.3, Method.SEMANTIC)
    strong = _pair(v, "a b c d e", "a b c d f", 0.8, Method.SEMANTIC)
    assert filter_pairs([short, far, ok, weak, strong]) == [ok, strong]
    assert filter_pairs([ok, strong]) == [ok, strong]


def test_select_best_keeps_source_order():
    v = build_vocab(["a b c d e"])
    ps = [_pair(v, "a b c d e", "a b c d e", d) for d in (3, 0, 2, 0, 1)]
    assert select_pairs(ps, 3) == [ps[1], ps[3], ps[4]]
    assert select_pairs(ps, 0) == []


def test_pseudo_pair_requires_opposite_styles():
    v = build_vocab(["a b"])
    s = encode_sentence("a b", v, S)
    with pytest.raises(ValueError):
        PseudoPair(s, s, 0)


def test_pairs_tsv_round_trip(tmp_path):
    v = build_vocab(["a b c d e", "x y"])
    ps = [_pair(v, "a b c d e", "x y", 2), _pair(v, "x y", "a b", 0.75, Method.SEMANTIC)]
    write_pairs_tsv(ps, tmp_path / "p.tsv")
    back = read_pairs_tsv(tmp_path / "p.tsv", v)
    assert [(p.source.ids, p.target.ids, p.similarity, p.method) for p in back] == [
        (p.source.ids, p.target.ids, p.similarity, p.method) for p in ps
    ]


def _recovery(method):
    neg, pos, truth = synthetic.marker_injection_corpus(200, seed=1)
    v = build_vocab(neg + pos)
    cs, ct = make_sentences(v, neg, S), make_sentences(v, pos, T)
    pairs, _ = mine_pairs(cs, ct, MinerConfig(method=method, min_len=1, lexical_max_distance=99, semantic_min_cosine=-1))
    index = {id(t): k for k, t in enumerate(ct)}
    src = {id(s): i for i, s in enumerate(cs)}
    return sum(index[id(p.target)] == truth[src[id(p.source)]] for p in pairs) / len(cs)


def test_small_injection_recovery_lexical():
    assert _recovery(Method.LEXICAL) >= 0.95


def test_small_injection_recovery_semantic():
    assert _recovery(Method.SEMANTIC) >= 0.8
