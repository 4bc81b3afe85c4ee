import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokendrop import data as dt
from tokendrop import vocab as vb


class TestVocabulary:
    def test_specials_occupy_lowest_ids(self):
        v = vb.Vocabulary(["x", "y"])
        assert v.decode([0, 1, 2, 3, 4]) == list(vb.SPECIAL_TOKENS)
        assert (vb.PAD_ID, vb.BOS_ID, vb.EOS_ID, vb.UNK_ID, vb.DROPPED_ID) == (0, 1, 2, 3, 4)

    def test_encode_decode_roundtrip(self):
        v = vb.Vocabulary(["alpha", "beta", "gamma"])
        tokens = ["beta", "alpha", "gamma", "beta"]
        assert v.decode(v.encode(tokens)) == tokens

    def test_oov_encodes_to_unk(self):
        v = vb.Vocabulary(["a"])
        assert v.encode(["a", "zzz"]) == [5, vb.UNK_ID]

    def test_save_load_roundtrip(self, tmp_path):
        v = vb.Vocabulary(["a", "b"])
        path = tmp_path / "vocab.txt"
        v.save(path)
        loaded = vb.Vocabulary.load(path)
        assert loaded.id_to_token == v.id_to_token

    def test_load_rejects_file_without_specials(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("a\nb\n")
        with pytest.raises(ValueError):
            vb.Vocabulary.load(path)


class TestBuildVocabulary:
    def test_all_tokens_fit(self):
        v = vb.build_vocabulary([["a", "a", "b"]], max_size=7)
        assert len(v) == 7
        assert "a" in v and "b" in v

    def test_frequency_cutoff(self):
        v = vb.build_vocabulary([["a", "a", "b"]], max_size=6)
        assert "a" in v and "b" not in v
        assert v.encode(["b"]) == [vb.UNK_ID]

    def test_tie_broken_by_first_occurrence(self):
        v = vb.build_vocabulary([["a", "b", "a", "b"]], max_size=6)
        assert "a" in v and "b" not in v

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            vb.build_vocabulary([], max_size=10)

    def test_max_size_must_exceed_specials(self):
        with pytest.raises(ValueError):
            vb.build_vocabulary([["a"]], max_size=5)


class TestSyntheticCorpus:
    def spec(self, **kw):
        base = dict(source_vocab_size=20, target_vocab_size=20, n_train=50, n_valid=10,
                    n_test=10, len_min=3, len_max=7, seed=42)
        base.update(kw)
        return dt.SyntheticTaskSpec(**base)

    def test_window_one_is_pure_relabeling(self):
        spec = self.spec(reorder_window=1)
        mapping = dt.token_mapping(spec)
        src = ["a3", "a1", "a4"]
        assert dt.map_source_to_target(src, spec) == [mapping[t] for t in src]

    def test_identity_mapping_window_one_is_copy_task(self):
        spec = self.spec(identity_mapping=True, reorder_window=1)
        for src, tgt in dt.generate_synthetic_corpus(spec)["train"]:
            assert src == tgt

    def test_regeneration_is_identical(self, tmp_path):
        spec = self.spec(reorder_window=3)
        a = dt.generate_synthetic_corpus(spec)
        b = dt.generate_synthetic_corpus(spec)
        assert a == b
        pa = dt.write_parallel(a["train"], tmp_path / "one", "train")
        pb = dt.write_parallel(b["train"], tmp_path / "two", "train")
        assert open(pa[0]).read() == open(pb[0]).read()
        assert open(pa[1]).read() == open(pb[1]).read()

    def test_mapping_is_injective(self):
        mapping = dt.token_mapping(self.spec())
        assert len(set(mapping.values())) == len(mapping)

    @pytest.mark.parametrize("window", [1, 2, 3, 5])
    def test_target_inverts_to_source(self, window):
        spec = self.spec(reorder_window=window)
        for split in dt.generate_synthetic_corpus(spec).values():
            for src, tgt in split:
                assert dt.invert_target_to_source(tgt, spec) == src


class TestLoadParallel:
    def test_two_line_files(self, tmp_path):
        (tmp_path / "x.src").write_text("a b\nc\n")
        (tmp_path / "x.tgt").write_text("d\ne f\n")
        pairs = dt.load_parallel(tmp_path / "x.src", tmp_path / "x.tgt")
        assert pairs == [(["a", "b"], ["d"]), (["c"], ["e", "f"])]

    def test_line_count_mismatch_names_counts(self, tmp_path):
        (tmp_path / "x.src").write_text("a\nb\nc\n")
        (tmp_path / "x.tgt").write_text("d\ne\n")
        with pytest.raises(ValueError, match="3.*2"):
            dt.load_parallel(tmp_path / "x.src", tmp_path / "x.tgt")

    def test_whitespace_collapse(self, tmp_path):
        (tmp_path / "x.src").write_text("a  b\n")
        (tmp_path / "x.tgt").write_text("c\n")
        pairs = dt.load_parallel(tmp_path / "x.src", tmp_path / "x.tgt")
        assert pairs[0][0] == ["a", "b"]

    def test_empty_line_rejected_with_number(self, tmp_path):
        (tmp_path / "x.src").write_text("a\n\nb\n")
        (tmp_path / "x.tgt").write_text("c\nd\ne\n")
        with pytest.raises(ValueError, match="line 2"):
            dt.load_parallel(tmp_path / "x.src", tmp_path / "x.tgt")


class TestBatching:
    def pairs(self, n):
        rng = np.random.default_rng(0)
        return [(list(rng.integers(5, 20, size=rng.integers(2, 6))),
                 list(rng.integers(5, 20, size=rng.integers(2, 6)))) for _ in range(n)]

    def test_batch_sizes(self):
        batches = dt.make_batches(self.pairs(5), 2, 0)
        assert [b.size for b in batches] == [2, 2, 1]

    def test_same_seed_same_order(self):
        pairs = self.pairs(10)
        a = dt.make_batches(pairs, 3, 7)
        b = dt.make_batches(pairs, 3, 7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.source, y.source)

    def test_teacher_forcing_shift(self):
        batch = dt.ParallelBatch([[9, 8]], [[5, 6]])
        np.testing.assert_array_equal(batch.target_input[0], [vb.BOS_ID, 5, 6])
        np.testing.assert_array_equal(batch.target_output[0], [5, 6, vb.EOS_ID])

    def test_shift_alignment_on_padded_batch(self):
        batch = dt.ParallelBatch([[9], [8, 7]], [[5, 6, 7], [5]])
        nonpad = batch.target_input != vb.PAD_ID
        # input shifted left one position equals output on shared non-pad span
        np.testing.assert_array_equal(
            batch.target_input[0, 1:][nonpad[0, 1:]], batch.target_output[0, :-1][nonpad[0, 1:]])

    def test_padding_is_suffix_only(self):
        batch = dt.ParallelBatch([[9], [8, 7, 6]], [[5, 6], [5]])
        for row in np.vstack([batch.source, batch.target_input]):
            pad_positions = np.nonzero(row == vb.PAD_ID)[0]
            if pad_positions.size:
                assert (row[pad_positions[0] :] == vb.PAD_ID).all()

    @given(st.integers(1, 9), st.integers(1, 30), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_every_pair_covered_once(self, batch_size, n_pairs, seed):
        pairs = [([i + 10], [i + 10]) for i in range(n_pairs)]
        batches = dt.make_batches(pairs, batch_size, seed)
        seen = sorted(int(b.source[i, 0]) for b in batches for i in range(b.size))
        assert seen == [i + 10 for i in range(n_pairs)]

    def test_batch_size_validated(self):
        with pytest.raises(ValueError):
            dt.make_batches(self.pairs(3), 0, 0)
