import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from trkseg.sampler import (
    DEFAULT_DENSE_FRAMES,
    DEFAULT_SPARSE_FRAMES,
    KIND_DENSE,
    KIND_POOLED,
    KindEmbedding,
    baseline_reduce,
    sample_frames,
    sparse_dense_reduce,
    token_budget,
)
from trkseg.tokenizer import FrameTokens


def make_tokens(t_sparse: int, L: int, d: int = 8, seed: int = 0) -> FrameTokens:
    g = torch.Generator().manual_seed(seed)
    side = int(L**0.5)
    assert side * side == L
    return FrameTokens(
        tokens=torch.randn(t_sparse, L, d, generator=g), grid_shape=(side, side)
    )


class TestSampleFrames:
    def test_infer_floor_rule(self):
        sel = sample_frames(16, 8, 4, mode="infer")
        assert sel.sparse_indices == (0, 2, 4, 6, 8, 10, 12, 14)
        assert sel.dense_slots == (0, 2, 4, 6)
        assert sel.dense_frame_indices() == (0, 4, 8, 12)

    def test_reference_defaults(self):
        assert (DEFAULT_SPARSE_FRAMES, DEFAULT_DENSE_FRAMES) == (32, 4)
        sel = sample_frames(256, mode="infer")
        assert sel.t_sparse == 32 and sel.t_dense == 4
        assert sel.sparse_indices == tuple(i * 256 // 32 for i in range(32))

    def test_train_seeded_determinism(self):
        a = sample_frames(40, 8, 3, mode="train", seed=123)
        b = sample_frames(40, 8, 3, mode="train", seed=123)
        assert a == b
        assert list(a.dense_slots) == sorted(set(a.dense_slots))

    def test_short_video_repeats_frames(self):
        sel = sample_frames(3, 8, 2, mode="infer")
        assert len(sel.sparse_indices) == 8
        assert all(b >= a for a, b in zip(sel.sparse_indices, sel.sparse_indices[1:]))
        assert set(sel.sparse_indices) <= {0, 1, 2}

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            sample_frames(10, 4, 5)
        with pytest.raises(ValueError):
            sample_frames(10, 4, 0)
        with pytest.raises(ValueError):
            sample_frames(0, 4, 2)
        with pytest.raises(ValueError):
            sample_frames(10, 4, 2, mode="zigzag")


class TestSparseDenseReduce:
    def test_token_count_example(self):
        sel = sample_frames(32, 8, 2, mode="infer")
        layout = sparse_dense_reduce(make_tokens(8, 16), sel)
        assert layout.n_tok == 8 + 2 * 16 == 40

    @settings(max_examples=60, deadline=None)
    @given(
        t_total=st.integers(1, 48),
        t_sparse=st.integers(1, 16),
        t_dense=st.integers(1, 16),
        side=st.sampled_from([1, 2, 3, 4]),
    )
    def test_token_count_law(self, t_total, t_sparse, t_dense, side):
        if t_dense > t_sparse:
            t_dense = t_sparse
        sel = sample_frames(t_total, t_sparse, t_dense, mode="infer")
        layout = sparse_dense_reduce(make_tokens(t_sparse, side * side), sel)
        assert layout.n_tok == t_sparse + t_dense * side * side

    def test_constant_frame_pools_to_constant(self):
        tokens = make_tokens(4, 16)
        tokens.tokens[1] = 3.25
        sel = sample_frames(4, 4, 1, mode="infer")
        layout = sparse_dense_reduce(tokens, sel)
        # pooled token of frame 1 is the second pooled position
        pooled_positions = [i for i, k in enumerate(layout.kinds) if k == KIND_POOLED]
        torch.testing.assert_close(
            layout.sequence[pooled_positions[1]], torch.full((8,), 3.25)
        )

    def test_pooled_equals_bruteforce_mean(self):
        tokens = make_tokens(5, 9, d=6, seed=3)
        sel = sample_frames(10, 5, 2, mode="infer")
        layout = sparse_dense_reduce(tokens, sel)
        pooled_positions = [i for i, k in enumerate(layout.kinds) if k == KIND_POOLED]
        for slot in range(5):
            expected = torch.zeros(6)
            for l in range(9):
                expected += tokens.tokens[slot, l]
            expected /= 9
            torch.testing.assert_close(
                layout.sequence[pooled_positions[slot]], expected
            )

    def test_layout_structure(self):
        sel = sample_frames(16, 4, 2, mode="infer")
        L = 16
        layout = sparse_dense_reduce(make_tokens(4, L), sel)
        # nondecreasing frames, dense block right after its pooled token
        assert all(
            b >= a for a, b in zip(layout.frame_of_token, layout.frame_of_token[1:])
        )
        kinds = list(layout.kinds)
        for slot in sel.dense_slots:
            frame = sel.sparse_indices[slot]
            positions = [i for i, f in enumerate(layout.frame_of_token) if f == frame]
            assert kinds[positions[0]] == KIND_POOLED
            assert kinds[positions[1]:positions[-1] + 1] == [KIND_DENSE] * L

    def test_dense_tokens_in_raster_order(self):
        tokens = make_tokens(2, 4, d=3, seed=9)
        sel = sample_frames(2, 2, 1, mode="infer")
        layout = sparse_dense_reduce(tokens, sel)
        dense_positions = [i for i, k in enumerate(layout.kinds) if k == KIND_DENSE]
        torch.testing.assert_close(
            layout.sequence[dense_positions], tokens.tokens[0]
        )

    def test_frame_count_mismatch(self):
        sel = sample_frames(16, 8, 2, mode="infer")
        with pytest.raises(ValueError):
            sparse_dense_reduce(make_tokens(4, 16), sel)

    def test_pooling_gradient_is_one_over_L(self):
        L = 16
        tokens = torch.randn(1, L, 4, requires_grad=True)
        sel = sample_frames(1, 1, 1, mode="infer")
        layout = sparse_dense_reduce(
            FrameTokens(tokens=tokens, grid_shape=(4, 4)), sel
        )
        layout.sequence[0].sum().backward()
        analytic = tokens.grad[0, :, :].clone()
        torch.testing.assert_close(analytic, torch.full((L, 4), 1.0 / L))


class TestBaselines:
    def test_n_frame_count(self):
        sel = sample_frames(32, 8, 4, mode="infer")
        layout = baseline_reduce(make_tokens(8, 16), "n_frame", sel)
        assert layout.n_tok == 4 * 16 == 64
        assert set(layout.kinds) == {KIND_DENSE}

    def test_n_frame_uses_dense_frames(self):
        tokens = make_tokens(8, 4, d=5, seed=2)
        sel = sample_frames(8, 8, 2, mode="infer")
        layout = baseline_reduce(tokens, "n_frame", sel)
        expected = torch.cat([tokens.tokens[s] for s in sel.dense_slots])
        torch.testing.assert_close(layout.sequence, expected)

    def test_slow_fast_degenerates_to_full_concat(self):
        tokens = make_tokens(4, 16, d=4, seed=5)
        sel = sample_frames(4, 4, 2, mode="infer")
        layout = baseline_reduce(
            tokens, "slow_fast", sel, params={"L_f": 16}
        )
        assert layout.n_tok == 4 * 16
        torch.testing.assert_close(
            layout.sequence, tokens.tokens.reshape(-1, 4)
        )

    def test_slow_fast_count(self):
        sel = sample_frames(8, 8, 2, mode="infer")
        layout = baseline_reduce(make_tokens(8, 16), "slow_fast", sel,
                                 params={"L_f": 4})
        assert layout.n_tok == 2 * 16 + 6 * 4

    def test_st_pool_count_and_means(self):
        t_sparse, L = 4, 16
        tokens = make_tokens(t_sparse, L, d=3, seed=7)
        sel = sample_frames(8, t_sparse, 2, mode="infer")
        layout = baseline_reduce(tokens, "st_pool", sel,
                                 params={"L_s": 1, "T_p": 2})
        assert layout.n_tok == t_sparse * 1 + 2 * L
        # spatial token of each frame is its global mean (brute force)
        pooled_positions = [i for i, k in enumerate(layout.kinds) if k == KIND_POOLED]
        for slot in range(t_sparse):
            expected = sum(tokens.tokens[slot, l] for l in range(L)) / L
            torch.testing.assert_close(
                layout.sequence[pooled_positions[slot]], expected
            )
        # temporal groups average full grids over slots {0,1} and {2,3}
        dense_positions = [i for i, k in enumerate(layout.kinds) if k == KIND_DENSE]
        first_group = layout.sequence[dense_positions[:L]]
        torch.testing.assert_close(
            first_group, (tokens.tokens[0] + tokens.tokens[1]) / 2
        )

    def test_budget_comparability(self):
        for t_sparse, t_dense, L in [(8, 2, 16), (32, 4, 64), (6, 3, 9)]:
            sd = token_budget("sparse_dense", t_sparse, t_dense, L)
            nf = token_budget("n_frame", t_sparse, t_dense, L)
            assert sd - nf == t_sparse

    def test_invalid_params(self):
        sel = sample_frames(8, 8, 2, mode="infer")
        tokens = make_tokens(8, 16)
        with pytest.raises(ValueError):
            baseline_reduce(tokens, "n_frame", sel, params={"n": 0})
        with pytest.raises(ValueError):
            baseline_reduce(tokens, "slow_fast", sel, params={"L_f": 99})
        with pytest.raises(ValueError):
            baseline_reduce(tokens, "bogus", sel)


class TestKindEmbedding:
    def test_adds_kind_vector(self):
        sel = sample_frames(4, 4, 1, mode="infer")
        tokens = make_tokens(4, 4, d=6)
        layout = sparse_dense_reduce(tokens, sel)
        ke = KindEmbedding(6)
        out = ke(layout)
        assert out.shape == layout.sequence.shape
        kinds = torch.as_tensor(layout.kinds)
        torch.testing.assert_close(
            out - layout.sequence, ke.emb(kinds)
        )
