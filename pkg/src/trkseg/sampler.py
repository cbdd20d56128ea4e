"""Frame selection and visual token reduction.

`sparse_dense` keeps every sampled frame as one mean-pooled token and
additionally inserts the full-resolution token grid right after the pooled
token of each dense frame, so the sequence length is exactly
T_sparse + T_dense * L. Three baseline strategies (`n_frame`, `st_pool`,
`slow_fast`) share the same layout structure with documented token counts.

Reduction functions are pure; the learned pooled/dense kind embedding is a
separate module applied by the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .tokenizer import FrameTokens

DEFAULT_SPARSE_FRAMES = 32
DEFAULT_DENSE_FRAMES = 4

KIND_POOLED = 0
KIND_DENSE = 1

STRATEGIES = ("sparse_dense", "n_frame", "st_pool", "slow_fast")


@dataclass(frozen=True)
class FrameSelection:
    """Which source frames are sampled and which of those are dense."""

    sparse_indices: tuple[int, ...]
    dense_slots: tuple[int, ...]  # indices into sparse_indices
    mode: str  # "train" | "infer"

    def validate(self) -> None:
        if self.mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if any(b < a for a, b in zip(self.sparse_indices, self.sparse_indices[1:])):
            raise ValueError("sparse_indices must be nondecreasing")
        if list(self.dense_slots) != sorted(set(self.dense_slots)):
            raise ValueError("dense_slots must be strictly increasing and distinct")
        if self.dense_slots and not (
            0 <= self.dense_slots[0] and self.dense_slots[-1] < len(self.sparse_indices)
        ):
            raise ValueError("dense_slots out of range")
        if len(self.dense_slots) > len(self.sparse_indices):
            raise ValueError("more dense slots than sparse frames")

    @property
    def t_sparse(self) -> int:
        return len(self.sparse_indices)

    @property
    def t_dense(self) -> int:
        return len(self.dense_slots)

    def dense_frame_indices(self) -> tuple[int, ...]:
        return tuple(self.sparse_indices[s] for s in self.dense_slots)


def sample_frames(
    T_total: int,
    T_sparse: int = DEFAULT_SPARSE_FRAMES,
    T_dense: int = DEFAULT_DENSE_FRAMES,
    mode: str = "infer",
    seed: int = 0,
) -> FrameSelection:
    """Uniform sparse sampling; dense slots uniform (infer) or seeded (train).

    sparse_indices[i] = floor(i * T_total / T_sparse). When T_total < T_sparse
    the same source frame appears in several slots (indices nondecreasing
    rather than strictly increasing).
    """
    if not (1 <= T_dense <= T_sparse):
        raise ValueError(f"need 1 <= T_dense <= T_sparse, got {T_dense}, {T_sparse}")
    if T_total < 1:
        raise ValueError(f"T_total must be >= 1, got {T_total}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    sparse = tuple(i * T_total // T_sparse for i in range(T_sparse))
    if mode == "infer":
        slots = tuple(j * T_sparse // T_dense for j in range(T_dense))
    else:
        rng = np.random.default_rng(seed)
        slots = tuple(sorted(rng.choice(T_sparse, size=T_dense, replace=False).tolist()))
    sel = FrameSelection(sparse_indices=sparse, dense_slots=slots, mode=mode)
    sel.validate()
    return sel


@dataclass
class SparseDenseLayout:
    """Reduced token sequence with per-token kind and source frame."""

    sequence: torch.Tensor  # (N_tok, d_vis)
    kinds: tuple[int, ...]  # KIND_POOLED | KIND_DENSE per token
    frame_of_token: tuple[int, ...]  # source video frame per token

    @property
    def n_tok(self) -> int:
        return self.sequence.shape[0]

    def validate(self) -> None:
        if not (self.n_tok == len(self.kinds) == len(self.frame_of_token)):
            raise ValueError("sequence, kinds, frame_of_token lengths disagree")
        if any(b < a for a, b in zip(self.frame_of_token, self.frame_of_token[1:])):
            raise ValueError("frame_of_token must be nondecreasing")


def sparse_dense_reduce(
    frame_tokens: FrameTokens, selection: FrameSelection
) -> SparseDenseLayout:
    """Pool every sparse frame to one token; splice each dense frame's full
    grid immediately after its pooled token. N_tok = T_sparse + T_dense * L."""
    tokens = frame_tokens.tokens
    if tokens.shape[0] != selection.t_sparse:
        raise ValueError(
            f"expected {selection.t_sparse} frame grids, got {tokens.shape[0]}"
        )
    L = tokens.shape[1]
    dense = set(selection.dense_slots)
    parts, kinds, frames = [], [], []
    for slot, frame_idx in enumerate(selection.sparse_indices):
        parts.append(tokens[slot].mean(dim=0, keepdim=True))
        kinds.append(KIND_POOLED)
        frames.append(frame_idx)
        if slot in dense:
            parts.append(tokens[slot])
            kinds.extend([KIND_DENSE] * L)
            frames.extend([frame_idx] * L)
    layout = SparseDenseLayout(
        sequence=torch.cat(parts, dim=0),
        kinds=tuple(kinds),
        frame_of_token=tuple(frames),
    )
    layout.validate()
    return layout


def _pool_grid(grid_tokens: torch.Tensor, grid_shape: tuple[int, int],
               n_out: int) -> torch.Tensor:
    """Average-pool one frame's (L, d) raster-ordered tokens to n_out tokens."""
    side = int(round(n_out**0.5))
    if side * side != n_out:
        raise ValueError(f"pooled token count {n_out} must be a perfect square")
    gh, gw = grid_shape
    d = grid_tokens.shape[1]
    img = grid_tokens.reshape(gh, gw, d).permute(2, 0, 1).unsqueeze(0)
    pooled = F.adaptive_avg_pool2d(img, (side, side))
    return pooled.squeeze(0).permute(1, 2, 0).reshape(n_out, d)


def token_budget(strategy: str, T_sparse: int, T_dense: int, L: int,
                 params: dict | None = None) -> int:
    """Documented token count for each reduction strategy."""
    params = params or {}
    if strategy == "sparse_dense":
        return T_sparse + T_dense * L
    if strategy == "n_frame":
        return params.get("n", T_dense) * L
    if strategy == "st_pool":
        return T_sparse * params.get("L_s", 1) + params.get("T_p", T_dense) * L
    if strategy == "slow_fast":
        k = params.get("k", T_dense)
        return k * L + (T_sparse - k) * params.get("L_f", 4)
    raise ValueError(f"unknown strategy {strategy!r}")


def baseline_reduce(
    frame_tokens: FrameTokens,
    strategy: str,
    selection: FrameSelection,
    params: dict | None = None,
) -> SparseDenseLayout:
    """Ablation baselines, emitted in source frame order.

    n_frame    full grids of the selection's dense frames; count n * L.
    st_pool    per-frame spatial pooling to L_s tokens plus T_p temporal
               group means of full grids (each group mean is inserted at the
               group's first frame); count T_sparse * L_s + T_p * L.
    slow_fast  full grids at the dense (slow) slots, every other frame pooled
               to L_f tokens; count k * L + (T_sparse - k) * L_f.
    """
    params = dict(params or {})
    tokens = frame_tokens.tokens
    if tokens.shape[0] != selection.t_sparse:
        raise ValueError(
            f"expected {selection.t_sparse} frame grids, got {tokens.shape[0]}"
        )
    T_sparse, L = tokens.shape[0], tokens.shape[1]
    grid = frame_tokens.grid_shape
    parts, kinds, frames = [], [], []

    if strategy == "sparse_dense":
        return sparse_dense_reduce(frame_tokens, selection)

    if strategy == "n_frame":
        n = params.get("n", selection.t_dense)
        if not 1 <= n <= T_sparse:
            raise ValueError(f"n_frame needs 1 <= n <= {T_sparse}, got {n}")
        slots = selection.dense_slots if n == selection.t_dense else tuple(
            j * T_sparse // n for j in range(n)
        )
        for slot in slots:
            parts.append(tokens[slot])
            kinds.extend([KIND_DENSE] * L)
            frames.extend([selection.sparse_indices[slot]] * L)

    elif strategy == "st_pool":
        L_s = params.get("L_s", 1)
        T_p = params.get("T_p", selection.t_dense)
        if not 1 <= T_p <= T_sparse:
            raise ValueError(f"st_pool needs 1 <= T_p <= {T_sparse}, got {T_p}")
        if not 1 <= L_s <= L:
            raise ValueError(f"st_pool needs 1 <= L_s <= {L}, got {L_s}")
        group_start = [g * T_sparse // T_p for g in range(T_p)]
        group_end = [(g + 1) * T_sparse // T_p for g in range(T_p)]
        for slot, frame_idx in enumerate(selection.sparse_indices):
            if slot in group_start:
                g = group_start.index(slot)
                parts.append(tokens[slot:group_end[g]].mean(dim=0))
                kinds.extend([KIND_DENSE] * L)
                frames.extend([frame_idx] * L)
            spatial = _pool_grid(tokens[slot], grid, L_s)
            parts.append(spatial)
            kinds.extend([KIND_POOLED] * L_s)
            frames.extend([frame_idx] * L_s)

    elif strategy == "slow_fast":
        k = params.get("k", selection.t_dense)
        L_f = params.get("L_f", 4)
        if not 1 <= k <= T_sparse:
            raise ValueError(f"slow_fast needs 1 <= k <= {T_sparse}, got {k}")
        if not 1 <= L_f <= L:
            raise ValueError(f"slow_fast needs 1 <= L_f <= {L}, got {L_f}")
        slow = set(
            selection.dense_slots if k == selection.t_dense
            else (j * T_sparse // k for j in range(k))
        )
        for slot, frame_idx in enumerate(selection.sparse_indices):
            if slot in slow:
                parts.append(tokens[slot])
                kinds.extend([KIND_DENSE] * L)
                frames.extend([frame_idx] * L)
            else:
                parts.append(_pool_grid(tokens[slot], grid, L_f))
                kinds.extend([KIND_POOLED] * L_f)
                frames.extend([frame_idx] * L_f)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    layout = SparseDenseLayout(
        sequence=torch.cat(parts, dim=0),
        kinds=tuple(kinds),
        frame_of_token=tuple(frames),
    )
    layout.validate()
    return layout


def reduce_tokens(
    frame_tokens: FrameTokens,
    selection: FrameSelection,
    strategy: str = "sparse_dense",
    params: dict | None = None,
) -> SparseDenseLayout:
    if strategy == "sparse_dense":
        return sparse_dense_reduce(frame_tokens, selection)
    return baseline_reduce(frame_tokens, strategy, selection, params)


class KindEmbedding(nn.Module):
    """Learned pooled-vs-dense marker added to each reduced token."""

    def __init__(self, d_vis: int):
        super().__init__()
        self.emb = nn.Embedding(2, d_vis)
        nn.init.normal_(self.emb.weight, std=0.02)

    def forward(self, layout: SparseDenseLayout) -> torch.Tensor:
        kinds = torch.as_tensor(layout.kinds, dtype=torch.long,
                                device=layout.sequence.device)
        return layout.sequence + self.emb(kinds).to(layout.sequence.dtype)
