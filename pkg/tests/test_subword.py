import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctckit.errors import ConfigurationError, ContractError
from ctckit.subword import (HierTargets, MARKER, SubwordVocab, build_hierarchy,
                            detokenize, load_vocab, mean_lengths, save_vocab,
                            segment, train_bpe)


def test_single_merge_corpus():
    vocab = train_bpe(["ab ab", "ab"], target_size=5)
    assert vocab.tokens == ["<blank>", "<unk>", MARKER + "a", "b", MARKER + "ab"]
    assert vocab.merges == [(MARKER + "a", "b")]


def test_tie_break_prefers_smaller_concatenation():
    # both pairs occur twice; the lexicographically smaller merged token wins
    vocab = train_bpe(["ab cd ab cd"], target_size=8)
    assert vocab.merges[0] == (MARKER + "a", "b")
    assert vocab.merges[1] == (MARKER + "c", "d")


def test_merging_stops_when_no_pair_repeats():
    vocab = train_bpe(["ab cd"], target_size=20)
    assert vocab.merges == []
    assert vocab.size == 2 + 4  # specials + base symbols


def test_target_size_below_base_inventory_rejected():
    with pytest.raises(ConfigurationError) as err:
        train_bpe(["abc"], target_size=4)
    assert "5" in str(err.value)  # 3 base symbols + 2 specials


def test_empty_corpus_rejected():
    with pytest.raises(ConfigurationError):
        train_bpe(["", "   "], target_size=5)


def test_segment_known_text():
    vocab = train_bpe(["ab ab", "ab"], target_size=5)
    assert segment("ab ab", vocab) == [4, 4]
    assert segment("ab", vocab) == [4]


def test_segment_unseen_characters_map_to_unk():
    vocab = train_bpe(["ab ab", "ab"], target_size=5)
    assert segment("ba", vocab) == [1, 1]


def test_detokenize_round_trip():
    corpus = ["ab ab", "ab"]
    vocab = train_bpe(corpus, target_size=5)
    for line in corpus:
        assert detokenize(segment(line, vocab), vocab) == line


def test_detokenize_renders_unk_literally():
    vocab = train_bpe(["ab"], target_size=5)
    assert detokenize([1], vocab) == "<unk>"


def test_detokenize_rejects_blank():
    vocab = train_bpe(["ab"], target_size=5)
    with pytest.raises(ContractError):
        detokenize([0], vocab)
    with pytest.raises(ContractError):
        detokenize([99], vocab)


def test_repeated_merge_scans_left_to_right():
    # merge (a, a) applies greedily: aaaa -> (aa)(aa)
    vocab = SubwordVocab(tokens=["<blank>", "<unk>", MARKER + "a", "a", "aa"],
                         merges=[("a", "a")], target_size=5)
    assert segment("aaaaa", vocab) == [2, 4, 4]


def test_hierarchy_levels_align_with_sizes():
    corpus = ["aba cab", "cab aba", "aba aba cab"]
    vocabs, targets = build_hierarchy(corpus, sizes=[8, 10])
    assert [v.target_size for v in vocabs] == [8, 10]
    assert len(targets) == len(corpus)
    assert all(isinstance(t, HierTargets) and len(t.levels) == 2 for t in targets)
    lengths = mean_lengths(targets)
    assert lengths[0] >= lengths[1]


def test_vocab_file_round_trip(tmp_path):
    vocab = train_bpe(["ab ab abc", "ab"], target_size=7)
    path = tmp_path / "vocab.txt"
    save_vocab(path, vocab)
    loaded = load_vocab(path)
    assert loaded.tokens == vocab.tokens
    assert loaded.merges == vocab.merges
    assert segment("ab abc", loaded) == segment("ab abc", vocab)


WORDS = st.text(alphabet="abcd", min_size=1, max_size=6)


@given(st.lists(st.lists(WORDS, min_size=1, max_size=5), min_size=1, max_size=8),
       st.integers(0, 30))
def test_round_trip_on_training_corpus(word_lines, extra):
    corpus = [" ".join(words) for words in word_lines]
    base = len({s for line in corpus for w in line.split()
                for s in [MARKER + w[0]] + list(w[1:])})
    vocab = train_bpe(corpus, target_size=base + 2 + extra)
    for line in corpus:
        assert detokenize(segment(line, vocab), vocab) == " ".join(line.split())
