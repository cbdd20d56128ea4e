"""Promptable per-frame mask decoding.

A small convolutional pyramid encodes each frame to a stride-4 feature grid;
the decoder runs two rounds of bidirectional cross-attention between the
single prompt token and the flattened features, then scores every cell by a
dot product with the updated prompt and upsamples bilinearly to full
resolution. Fixed 2-D sinusoidal positional encodings make the features
location-aware (the prompt must be able to select among lookalike objects by
where they are).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class FrameFeatures:
    features: torch.Tensor  # (h, w, d_feat)
    stride: int


@dataclass
class MaskLogits:
    logits: torch.Tensor  # (H, W)


@lru_cache(maxsize=32)
def _sine_pos_2d(h: int, w: int, d: int) -> torch.Tensor:
    """(h*w, d) sinusoidal embedding; first half encodes y, second half x."""
    def axis(n: int, dim: int) -> torch.Tensor:
        pos = torch.arange(n, dtype=torch.float64).unsqueeze(1)
        idx = torch.arange(0, dim, 2, dtype=torch.float64)
        rates = torch.exp(-math.log(10000.0) * idx / max(dim, 1))
        ang = pos * rates
        out = torch.zeros(n, dim, dtype=torch.float64)
        out[:, 0::2] = torch.sin(ang)
        out[:, 1::2] = torch.cos(ang[:, : out[:, 1::2].shape[1]])
        return out

    dy = d // 2
    ey = axis(h, dy)  # (h, dy)
    ex = axis(w, d - dy)  # (w, d-dy)
    full = torch.cat(
        [
            ey.unsqueeze(1).expand(h, w, dy),
            ex.unsqueeze(0).expand(h, w, d - dy),
        ],
        dim=-1,
    )
    return full.reshape(h * w, d)


class FrameEncoder(nn.Module):
    """Convolutional pyramid: (H, W, C) -> (H/4, W/4, d_feat)."""

    stride = 4

    def __init__(self, channels: int = 3, d_feat: int = 64):
        super().__init__()
        self.d_feat = d_feat
        self.net = nn.Sequential(
            nn.Conv2d(channels, d_feat // 2, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(d_feat // 2, d_feat, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(d_feat, d_feat, 3, padding=1),
        )

    def forward(self, frame: torch.Tensor) -> FrameFeatures:
        """frame: (H, W, C) float in [0, 1]."""
        if frame.ndim != 3:
            raise ValueError(f"expected (H,W,C), got shape {tuple(frame.shape)}")
        H, W, C = frame.shape
        if H % self.stride or W % self.stride:
            raise ValueError(f"frame {H}x{W} not divisible by stride {self.stride}")
        x = frame.permute(2, 0, 1).unsqueeze(0)
        y = self.net(x).squeeze(0).permute(1, 2, 0)
        return FrameFeatures(features=y, stride=self.stride)

    def forward_batch(self, frames: torch.Tensor) -> torch.Tensor:
        """frames: (T, H, W, C) -> features (T, h, w, d_feat)."""
        if frames.ndim != 4:
            raise ValueError(f"expected (T,H,W,C), got shape {tuple(frames.shape)}")
        H, W = frames.shape[1:3]
        if H % self.stride or W % self.stride:
            raise ValueError(f"frames {H}x{W} not divisible by stride {self.stride}")
        return self.net(frames.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)


class _DecoderRound(nn.Module):
    def __init__(self, d_feat: int, n_heads: int):
        super().__init__()
        self.p2f = nn.MultiheadAttention(d_feat, n_heads, batch_first=True)
        self.f2p = nn.MultiheadAttention(d_feat, n_heads, batch_first=True)
        self.ln_p1 = nn.LayerNorm(d_feat)
        self.ln_p2 = nn.LayerNorm(d_feat)
        self.ln_f = nn.LayerNorm(d_feat)
        self.mlp = nn.Sequential(
            nn.Linear(d_feat, 2 * d_feat), nn.GELU(), nn.Linear(2 * d_feat, d_feat)
        )

    def forward(
        self, prompt: torch.Tensor, feats: torch.Tensor, pe: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        attn_out, _ = self.p2f(prompt, feats + pe, feats, need_weights=False)
        prompt = self.ln_p1(prompt + attn_out)
        prompt = self.ln_p2(prompt + self.mlp(prompt))
        attn_out, _ = self.f2p(feats + pe, prompt, prompt, need_weights=False)
        feats = self.ln_f(feats + attn_out)
        return prompt, feats


class MaskDecoder(nn.Module):
    """Two-way attention between one prompt token and the feature grid."""

    def __init__(self, d_prompt: int, d_feat: int, n_heads: int = 4,
                 rounds: int = 2):
        super().__init__()
        self.d_feat = d_feat
        self.prompt_in = nn.Linear(d_prompt, d_feat)
        self.feat_in = nn.Linear(d_feat, d_feat)
        self.rounds = nn.ModuleList(
            _DecoderRound(d_feat, n_heads) for _ in range(rounds)
        )
        self.prompt_out = nn.Sequential(
            nn.Linear(d_feat, d_feat), nn.GELU(), nn.Linear(d_feat, d_feat)
        )

    def forward(self, feat: FrameFeatures, prompt_vector: torch.Tensor) -> MaskLogits:
        logits = self.forward_batch(
            feat.features.unsqueeze(0), prompt_vector, feat.stride
        )
        return MaskLogits(logits=logits.squeeze(0))

    def forward_batch(
        self, feats: torch.Tensor, prompt_vector: torch.Tensor, stride: int
    ) -> torch.Tensor:
        """feats: (B, h, w, d_feat), one shared prompt -> logits (B, H, W)."""
        if feats.ndim != 4 or feats.shape[-1] != self.d_feat:
            raise ValueError(
                f"expected (B,h,w,{self.d_feat}) features, got {tuple(feats.shape)}"
            )
        B, h, w, d = feats.shape
        pe = _sine_pos_2d(h, w, d).to(feats.dtype).unsqueeze(0)
        f = self.feat_in(feats.reshape(B, h * w, d)) + pe
        p = self.prompt_in(prompt_vector).reshape(1, 1, d).expand(B, 1, d)
        for rnd in self.rounds:
            p, f = rnd(p, f, pe)
        p = self.prompt_out(p)
        lowres = (f @ p.transpose(1, 2)).reshape(B, 1, h, w)
        H, W = h * stride, w * stride
        logits = F.interpolate(
            lowres, size=(H, W), mode="bilinear", align_corners=False
        )
        return logits.reshape(B, H, W)


def binarize(m: MaskLogits | torch.Tensor, threshold: float = 0.0) -> np.ndarray:
    """Binary mask (H, W) uint8: pixel = 1 iff logit > threshold."""
    logits = m.logits if isinstance(m, MaskLogits) else m
    if not torch.isfinite(logits).all():
        raise ValueError("mask logits contain non-finite values")
    return (logits > threshold).cpu().numpy().astype(np.uint8)
