"""The full pipeline as one module, plus checkpoint save/load.

Checkpoint format (version 1): a single torch archive holding the model
config as a JSON-compatible dict, the vocabulary mapping, the state dict,
and free-form metadata.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .datakit import grammar_corpus
from .errors import DataError
from .maskdec import FrameEncoder, MaskDecoder, MaskLogits
from .reasoner import (
    AssembledSequence,
    LMConfig,
    PromptEmbedding,
    PromptProjector,
    TinyCausalLM,
    assemble_sequence,
    extract_trk_embedding,
    greedy_generate,
)
from .sampler import FrameSelection, KindEmbedding, reduce_tokens
from .tokenizer import PatchTokenizer, Vocab

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    frame_h: int = 64
    frame_w: int = 64
    channels: int = 3
    patch_size: int = 8
    d_vis: int = 128
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq: int = 256
    d_prompt: int = 64
    d_feat: int = 64
    dec_heads: int = 4
    dec_rounds: int = 2
    T_sparse: int = 8
    T_dense: int = 2
    strategy: str = "sparse_dense"
    strategy_params: dict = field(default_factory=dict)

    def lm_config(self, vocab_size: int) -> LMConfig:
        return LMConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            max_seq=self.max_seq,
            vocab_size=vocab_size,
        )


class VideoSegModel(nn.Module):
    """Visual tokenizer + causal LM + prompt MLP + frame encoder + mask decoder."""

    def __init__(self, cfg: ModelConfig, vocab: Vocab):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.patch_tok = PatchTokenizer(
            (cfg.frame_h, cfg.frame_w), cfg.patch_size, cfg.channels, cfg.d_vis
        )
        self.kind_emb = KindEmbedding(cfg.d_vis)
        self.vis_proj = nn.Linear(cfg.d_vis, cfg.d_model)
        self.lm = TinyCausalLM(cfg.lm_config(len(vocab)))
        self.prompt_proj = PromptProjector(cfg.d_model, cfg.d_prompt)
        self.encoder = FrameEncoder(cfg.channels, cfg.d_feat)
        self.decoder = MaskDecoder(
            cfg.d_prompt, cfg.d_feat, cfg.dec_heads, cfg.dec_rounds
        )

    # ---- language side ----

    def visual_sequence(
        self, frames: torch.Tensor, selection: FrameSelection
    ) -> torch.Tensor:
        """Tokenize the selected sparse frames and reduce to (N_tok, d_model)."""
        idx = torch.as_tensor(selection.sparse_indices, dtype=torch.long)
        frame_tokens = self.patch_tok(frames[idx])
        layout = reduce_tokens(
            frame_tokens, selection, self.cfg.strategy, self.cfg.strategy_params
        )
        return self.vis_proj(self.kind_emb(layout))

    def assemble(
        self,
        frames: torch.Tensor,
        selection: FrameSelection,
        conversation_ids: list[int],
        answer_start: int | None = None,
    ) -> AssembledSequence:
        visual = self.visual_sequence(frames, selection)
        return assemble_sequence(
            visual, conversation_ids, self.vocab, self.lm.embed_ids, answer_start
        )

    def teacher_forward(
        self,
        frames: torch.Tensor,
        selection: FrameSelection,
        conversation_ids: list[int],
    ) -> tuple[torch.Tensor, AssembledSequence, PromptEmbedding]:
        """Teacher-forced pass returning logits, the assembly, and the prompt."""
        assembled = self.assemble(frames, selection, conversation_ids)
        logits, hidden = self.lm(assembled.embedded)
        raw, pos = extract_trk_embedding(hidden, assembled.token_ids, self.vocab)
        prompt = PromptEmbedding(
            vector=self.prompt_proj(raw), source_position=pos, forced=False
        )
        return logits, assembled, prompt

    @torch.no_grad()
    def predict_prompt(
        self,
        frames: torch.Tensor,
        selection: FrameSelection,
        prompt_ids: list[int],
        max_new: int = 12,
    ) -> tuple[PromptEmbedding, list[int]]:
        """Generate the answer greedily and extract the `<TRK>` prompt.

        Falls back to forced decoding of the canonical answer when generation
        never emits `<TRK>`; the returned embedding is flagged forced=True.
        """
        assembled = self.assemble(frames, selection, prompt_ids)
        generated = greedy_generate(self.lm, assembled.embedded, self.vocab, max_new)
        forced = self.vocab.trk_id not in generated
        if forced:
            answer = self.vocab.encode("Sure, it is <TRK>.") + [self.vocab.eos_id]
            full_ids = prompt_ids + answer
        else:
            full_ids = prompt_ids + generated
        full = self.assemble(frames, selection, full_ids)
        _, hidden = self.lm(full.embedded)
        raw, pos = extract_trk_embedding(hidden, full.token_ids, self.vocab)
        prompt = PromptEmbedding(
            vector=self.prompt_proj(raw), source_position=pos, forced=forced
        )
        return prompt, generated

    # ---- segmentation side ----

    def decode_frame(
        self, frame: torch.Tensor, prompt: PromptEmbedding
    ) -> MaskLogits:
        return self.decoder(self.encoder(frame), prompt.vector)

    def decode_frames(
        self, frames: torch.Tensor, prompt: PromptEmbedding
    ) -> torch.Tensor:
        """Decode a stack of frames (T, H, W, C) with one shared prompt.

        Batched convenience around decode_frame; returns logits (T, H, W).
        """
        feats = self.encoder.forward_batch(frames)
        return self.decoder.forward_batch(feats, prompt.vector, self.encoder.stride)


def build_model(cfg: ModelConfig, vocab: Vocab | None = None,
                seed: int | None = None) -> VideoSegModel:
    """Construct a model (deterministically when `seed` is given)."""
    if vocab is None:
        vocab = Vocab.build(grammar_corpus())
    if seed is not None:
        torch.manual_seed(seed)
    return VideoSegModel(cfg, vocab)


def save_checkpoint(path: Path | str, model: VideoSegModel,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "model_config": asdict(model.cfg),
            "vocab": model.vocab.token_to_id,
            "state_dict": model.state_dict(),
            "meta": dict(meta or {}),
        },
        path,
    )
    return path


def load_checkpoint(path: Path | str) -> tuple[VideoSegModel, dict]:
    import pickle
    import zipfile

    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError,
            zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(
            f"checkpoint {path} has format_version {version}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    cfg = ModelConfig(**payload["model_config"])
    vocab = Vocab.from_token_to_id(payload["vocab"])
    model = VideoSegModel(cfg, vocab)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise DataError(f"checkpoint {path} does not match its config: {exc}") from exc
    model.eval()
    return model, payload.get("meta", {})
