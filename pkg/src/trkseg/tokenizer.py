"""Text vocabulary and per-frame visual patch tokenization.

Text uses a word-level closed vocabulary: whitespace splits words,
punctuation marks are their own tokens, and angle-bracket specials
(`<VIDEO>`, `<TRK>`, ...) stay intact. The canonical text form is the
token stream joined by single spaces; encode/decode round-trip exactly
on that form.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .errors import OOVError

PAD, EOS, VIDEO, TRK = "<PAD>", "<EOS>", "<VIDEO>", "<TRK>"
SPECIAL_TOKENS = (PAD, EOS, VIDEO, TRK)

_TOKEN_RE = re.compile(r"<[A-Z]+>|\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Vocab:
    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def video_id(self) -> int:
        return self.token_to_id[VIDEO]

    @property
    def trk_id(self) -> int:
        return self.token_to_id[TRK]

    @classmethod
    def build(cls, corpus: list[str]) -> "Vocab":
        """Specials first (fixed order), then unique corpus words sorted."""
        if not corpus:
            raise ValueError("corpus must be non-empty")
        words = sorted(
            {w for text in corpus for w in split_words(text)} - set(SPECIAL_TOKENS)
        )
        id_to_token = SPECIAL_TOKENS + tuple(words)
        return cls(
            token_to_id={t: i for i, t in enumerate(id_to_token)},
            id_to_token=id_to_token,
        )

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in split_words(text):
            if word not in self.token_to_id:
                raise OOVError(word)
            ids.append(self.token_to_id[word])
        return ids

    def decode(self, ids: list[int]) -> str:
        tokens = []
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise ValueError(f"token id {i} out of range [0, {len(self)})")
            tokens.append(self.id_to_token[i])
        return " ".join(tokens)

    def canonical(self, text: str) -> str:
        return " ".join(split_words(text))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.token_to_id, indent=2) + "\n")

    @classmethod
    def from_token_to_id(cls, token_to_id: dict[str, int]) -> "Vocab":
        items = sorted(token_to_id.items(), key=lambda kv: kv[1])
        ids = [i for _, i in items]
        if ids != list(range(len(items))):
            raise ValueError("token ids must be a contiguous 0-based range")
        for s in SPECIAL_TOKENS:
            if s not in token_to_id:
                raise ValueError(f"missing special token {s}")
        return cls(
            token_to_id=dict(token_to_id),
            id_to_token=tuple(t for t, _ in items),
        )

    @classmethod
    def load(cls, path: Path | str) -> "Vocab":
        return cls.from_token_to_id(json.loads(Path(path).read_text()))


def build_text_vocab(corpus: list[str]) -> Vocab:
    return Vocab.build(corpus)


@dataclass
class FrameTokens:
    """Per-frame visual token grids: tokens (T, L, d_vis), raster order."""

    tokens: torch.Tensor
    grid_shape: tuple[int, int]

    @property
    def num_tokens_per_frame(self) -> int:
        return self.tokens.shape[1]

    def validate(self) -> None:
        gh, gw = self.grid_shape
        if gh * gw != self.tokens.shape[1]:
            raise ValueError(
                f"grid {self.grid_shape} does not match L={self.tokens.shape[1]}"
            )
        if not torch.isfinite(self.tokens).all():
            raise ValueError("frame tokens contain non-finite values")


class PatchTokenizer(nn.Module):
    """Linear projection of flattened patches plus a learned 2-D positional
    embedding. The grid size is fixed at construction."""

    def __init__(self, frame_hw: tuple[int, int], patch_size: int, channels: int,
                 d_vis: int):
        super().__init__()
        H, W = frame_hw
        if H % patch_size or W % patch_size:
            raise ValueError(
                f"frame {H}x{W} not divisible by patch_size {patch_size}"
            )
        self.patch_size = patch_size
        self.channels = channels
        self.grid_shape = (H // patch_size, W // patch_size)
        self.d_vis = d_vis
        self.proj = nn.Linear(patch_size * patch_size * channels, d_vis)
        gh, gw = self.grid_shape
        self.pos = nn.Parameter(torch.randn(gh * gw, d_vis) * 0.02)

    def forward(self, frames: torch.Tensor) -> FrameTokens:
        """frames: (T, H, W, C) in [0, 1] -> FrameTokens (T, L, d_vis)."""
        if frames.ndim != 4:
            raise ValueError(f"expected (T,H,W,C), got shape {tuple(frames.shape)}")
        T, H, W, C = frames.shape
        ps = self.patch_size
        if H % ps or W % ps:
            raise ValueError(f"frame {H}x{W} not divisible by patch_size {ps}")
        gh, gw = H // ps, W // ps
        if (gh, gw) != self.grid_shape or C != self.channels:
            raise ValueError(
                f"tokenizer built for grid {self.grid_shape} x{self.channels}ch, "
                f"got {(gh, gw)} x{C}ch"
            )
        patches = (
            frames.reshape(T, gh, ps, gw, ps, C)
            .permute(0, 1, 3, 2, 4, 5)  # (T, gh, gw, ps, ps, C)
            .reshape(T, gh * gw, ps * ps * C)
        )
        tokens = self.proj(patches) + self.pos.to(patches.dtype)
        return FrameTokens(tokens=tokens, grid_shape=(gh, gw))
