"""Tiny decoder-only causal LM over the assembled visual+text sequence.

The conversation's single `<VIDEO>` placeholder is replaced by the reduced
visual token sequence (projected to the LM width); the last-layer hidden
state at the first `<TRK>` position, passed through a two-layer MLP, becomes
the prompt embedding that drives the mask decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import MissingTokenError
from .tokenizer import Vocab

VISUAL_FILLER_ID = -1  # stands in for visual positions in aligned id sequences


@dataclass
class LMConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq: int = 256
    vocab_size: int = 64

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_seq", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


class _Block(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.mlp = nn.Sequential(
            nn.Linear(d, cfg.d_ff), nn.GELU(), nn.Linear(cfg.d_ff, d)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, S, D = x.shape
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        shape = (B, S, self.n_heads, D // self.n_heads)
        q, k, v = (t.view(shape).transpose(1, 2) for t in (q, k, v))
        attn = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.out(attn.transpose(1, 2).reshape(B, S, D))
        return x + self.mlp(self.ln2(x))


class TinyCausalLM(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.token_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Parameter(torch.randn(cfg.max_seq, cfg.d_model) * 0.02)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        nn.init.normal_(self.token_emb.weight, std=0.02)

    def embed_ids(self, ids: torch.Tensor) -> torch.Tensor:
        return self.token_emb(ids)

    def forward(self, embedded: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """embedded: (S, d_model) -> (logits (S, vocab), hidden (S, d_model))."""
        S = embedded.shape[0]
        if S > self.cfg.max_seq:
            raise ValueError(f"sequence length {S} exceeds max_seq {self.cfg.max_seq}")
        x = (embedded + self.pos_emb[:S].to(embedded.dtype)).unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        hidden = self.ln_f(x).squeeze(0)
        return self.head(hidden), hidden


@dataclass
class AssembledSequence:
    embedded: torch.Tensor  # (S, d_model)
    token_ids: torch.Tensor  # (S,) long; VISUAL_FILLER_ID at visual positions
    role_mask: torch.Tensor  # (S,) bool; True at assistant-answer positions
    visual_span: tuple[int, int]  # (start, length) of the spliced visual block


def find_answer_start(conversation_ids: list[int], vocab: Vocab) -> int | None:
    """Index of the first token after the 'ASSISTANT :' marker, if present."""
    assistant = vocab.token_to_id.get("ASSISTANT")
    colon = vocab.token_to_id.get(":")
    if assistant is None or colon is None:
        return None
    for i in range(len(conversation_ids) - 1):
        if conversation_ids[i] == assistant and conversation_ids[i + 1] == colon:
            return i + 2
    return None


def assemble_sequence(
    visual_tokens: torch.Tensor,
    conversation_ids: list[int],
    vocab: Vocab,
    text_embed,
    answer_start: int | None = None,
) -> AssembledSequence:
    """Splice the visual block over the `<VIDEO>` placeholder.

    visual_tokens: (N_tok, d_model), already projected to the LM width.
    text_embed: callable mapping a long tensor of ids to (n, d_model).
    answer_start: index into conversation_ids where the assistant answer
    begins; autodetected from the 'ASSISTANT :' marker when omitted.
    """
    placeholders = [i for i, t in enumerate(conversation_ids) if t == vocab.video_id]
    if len(placeholders) != 1:
        raise ValueError(
            f"conversation must contain exactly one {vocab.id_to_token[vocab.video_id]}, "
            f"found {len(placeholders)}"
        )
    split = placeholders[0]
    if answer_start is None:
        answer_start = find_answer_start(conversation_ids, vocab)

    ids = torch.as_tensor(conversation_ids, dtype=torch.long)
    before, after = ids[:split], ids[split + 1:]
    n_vis = visual_tokens.shape[0]
    embedded = torch.cat(
        [text_embed(before), visual_tokens, text_embed(after)], dim=0
    )
    token_ids = torch.cat(
        [before, torch.full((n_vis,), VISUAL_FILLER_ID, dtype=torch.long), after]
    )
    role_mask = torch.zeros(embedded.shape[0], dtype=torch.bool)
    if answer_start is not None and answer_start <= len(conversation_ids):
        # conversation index -> assembled index (placeholder became n_vis tokens)
        offset = n_vis - 1
        start = answer_start + (offset if answer_start > split else 0)
        role_mask[start:] = True
    return AssembledSequence(
        embedded=embedded,
        token_ids=token_ids,
        role_mask=role_mask,
        visual_span=(split, n_vis),
    )


def extract_trk_embedding(
    hidden: torch.Tensor, token_ids: torch.Tensor, vocab: Vocab
) -> tuple[torch.Tensor, int]:
    """Last-layer hidden state at the first `<TRK>` position."""
    positions = (token_ids == vocab.trk_id).nonzero(as_tuple=True)[0]
    if positions.numel() == 0:
        raise MissingTokenError("no <TRK> token in sequence")
    pos = int(positions[0])
    return hidden[pos], pos


@dataclass
class PromptEmbedding:
    """The MLP-projected `<TRK>` hidden state; one per video."""

    vector: torch.Tensor  # (d_prompt,)
    source_position: int
    forced: bool = False


class PromptProjector(nn.Module):
    """Two-layer MLP d_model -> d_model -> d_prompt.

    `forward_calls` counts invocations so inference can assert the
    one-prompt-per-video law. `activation='identity'` exists for linearity
    tests only.
    """

    def __init__(self, d_model: int, d_prompt: int, activation: str = "relu"):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_model)
        self.fc2 = nn.Linear(d_model, d_prompt)
        if activation == "relu":
            self.act: nn.Module = nn.ReLU()
        elif activation == "identity":
            self.act = nn.Identity()
        else:
            raise ValueError(f"unknown activation {activation!r}")
        self.forward_calls = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise ValueError("prompt projector input is not finite")
        self.forward_calls += 1
        return self.fc2(self.act(self.fc1(x)))


def project_prompt(
    projector: PromptProjector, raw: torch.Tensor, source_position: int,
    forced: bool = False,
) -> PromptEmbedding:
    return PromptEmbedding(
        vector=projector(raw), source_position=source_position, forced=forced
    )


@torch.no_grad()
def greedy_generate(
    lm: TinyCausalLM,
    prefix_embedded: torch.Tensor,
    vocab: Vocab,
    max_new: int,
) -> list[int]:
    """Greedy decoding from an embedded prefix; stops at `<EOS>` or max_new."""
    if prefix_embedded.shape[0] + max_new > lm.cfg.max_seq:
        raise ValueError(
            f"prefix {prefix_embedded.shape[0]} + max_new {max_new} exceeds "
            f"max_seq {lm.cfg.max_seq}"
        )
    embedded = prefix_embedded
    out: list[int] = []
    for _ in range(max_new):
        logits, _ = lm(embedded)
        next_id = int(logits[-1].argmax())
        out.append(next_id)
        if next_id == vocab.eos_id:
            break
        embedded = torch.cat(
            [embedded, lm.embed_ids(torch.tensor([next_id]))], dim=0
        )
    return out
