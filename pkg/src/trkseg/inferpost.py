"""End-to-end inference and mask propagation.

`segment_video` obtains one prompt embedding from the LM (infer-mode frame
selection) and decodes every frame of the full video with it. The optional
`post_optimize` stage treats the dense frames' masks as references and
re-estimates the remaining frames by top-k cosine matching between encoder
feature cells, which usually improves frames the language model never saw in
full resolution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .datakit import VideoSample, prompt_text
from .maskdec import binarize
from .model import VideoSegModel
from .sampler import FrameSelection, sample_frames

PROVENANCE_MODEL = "model"
PROVENANCE_REFERENCE = "reference"
PROVENANCE_PROPAGATED = "propagated"

PROPAGATION_TOP_K = 8
PROPAGATION_TAU = 0.1


@dataclass
class MaskSet:
    """Binary masks for every frame of one video."""

    masks: np.ndarray  # (T, H, W) uint8 in {0, 1}
    logits_available: bool
    provenance: tuple[str, ...]

    def validate(self, num_frames: int | None = None) -> None:
        if self.masks.ndim != 3:
            raise ValueError(f"masks must be (T,H,W), got {self.masks.shape}")
        if len(self.provenance) != self.masks.shape[0]:
            raise ValueError("provenance length disagrees with mask count")
        if num_frames is not None and self.masks.shape[0] != num_frames:
            raise ValueError(
                f"mask count {self.masks.shape[0]} != video length {num_frames}"
            )


@dataclass
class InferenceResult:
    maskset: MaskSet
    selection: FrameSelection
    forced: bool
    generated_text: str


def segment_video(
    model: VideoSegModel, video: VideoSample, instruction: str
) -> InferenceResult:
    """One prompt embedding, then a mask for every frame of the video."""
    model.eval()
    frames = torch.from_numpy(video.frames)
    T = frames.shape[0]
    cfg = model.cfg
    selection = sample_frames(T, cfg.T_sparse, cfg.T_dense, mode="infer")
    prompt_ids = model.vocab.encode(prompt_text(instruction))
    prompt, generated = model.predict_prompt(frames, selection, prompt_ids)
    with torch.no_grad():
        logits = model.decode_frames(frames, prompt)
        masks = np.stack([binarize(logits[t]) for t in range(T)])
    maskset = MaskSet(
        masks=masks,
        logits_available=True,
        provenance=tuple([PROVENANCE_MODEL] * T),
    )
    maskset.validate(T)
    return InferenceResult(
        maskset=maskset,
        selection=selection,
        forced=prompt.forced,
        generated_text=model.vocab.decode(generated),
    )


def _downsample_mask(mask: np.ndarray, stride: int) -> torch.Tensor:
    """Average-pool a full-resolution binary mask onto the feature grid."""
    H, W = mask.shape
    m = mask.astype(np.float32).reshape(H // stride, stride, W // stride, stride)
    return torch.from_numpy(m.mean(axis=(1, 3)))


def propagate_masks(
    query_feats: torch.Tensor,
    ref_feats: torch.Tensor,
    ref_masks_grid: torch.Tensor,
    top_k: int = PROPAGATION_TOP_K,
    tau: float = PROPAGATION_TAU,
) -> torch.Tensor:
    """Readout probabilities (h, w) for one query frame.

    query_feats: (h, w, d); ref_feats: (R, h, w, d); ref_masks_grid: (R, h, w)
    with values in [0, 1]. Every query cell takes the softmax over its top-k
    cosine similarities against all reference cells and averages the
    reference mask values under those weights.
    """
    h, w, d = query_feats.shape
    q = F.normalize(query_feats.reshape(-1, d), dim=-1, eps=1e-8)
    r = F.normalize(ref_feats.reshape(-1, d), dim=-1, eps=1e-8)
    sim = q @ r.T  # (h*w, R*h*w)
    k = min(top_k, sim.shape[1])
    vals, idx = sim.topk(k, dim=1)
    weights = torch.softmax(vals / tau, dim=1)
    mask_vals = ref_masks_grid.reshape(-1)[idx]
    return (weights * mask_vals).sum(dim=1).reshape(h, w)


def post_optimize(
    video: VideoSample,
    model_maskset: MaskSet,
    selection: FrameSelection,
    model: VideoSegModel,
) -> MaskSet:
    """Propagate the dense frames' masks to all remaining frames.

    Dense frames pass through unchanged (provenance=reference); every other
    frame is re-estimated from the references by feature matching.
    """
    T = video.num_frames
    model_maskset.validate(T)
    ref_frames = sorted(set(selection.dense_frame_indices()))
    if not ref_frames or max(ref_frames) >= T:
        raise ValueError(f"selection references frames outside the video (T={T})")

    model.eval()
    frames = torch.from_numpy(video.frames)
    stride = model.encoder.stride
    with torch.no_grad():
        feats = model.encoder.forward_batch(frames)
    ref_feat_stack = torch.stack([feats[t] for t in ref_frames])
    ref_mask_grid = torch.stack(
        [_downsample_mask(model_maskset.masks[t], stride) for t in ref_frames]
    )

    H, W = video.frames.shape[1:3]
    out = model_maskset.masks.copy()
    provenance = list(model_maskset.provenance)
    for t in range(T):
        if t in ref_frames:
            provenance[t] = PROVENANCE_REFERENCE
            continue
        prob = propagate_masks(feats[t], ref_feat_stack, ref_mask_grid)
        upsampled = F.interpolate(
            prob.reshape(1, 1, *prob.shape), size=(H, W),
            mode="bilinear", align_corners=False,
        ).reshape(H, W)
        out[t] = (upsampled > 0.5).numpy().astype(np.uint8)
        provenance[t] = PROVENANCE_PROPAGATED
    result = MaskSet(
        masks=out, logits_available=False, provenance=tuple(provenance)
    )
    result.validate(T)
    return result


def _overlay_color(video_id: str) -> np.ndarray:
    palette = np.array(
        [
            (255, 64, 64),
            (64, 255, 64),
            (64, 128, 255),
            (255, 224, 32),
            (255, 64, 255),
            (64, 255, 255),
        ],
        dtype=np.float32,
    )
    digest = int(hashlib.sha256(video_id.encode()).hexdigest(), 16)
    return palette[digest % len(palette)]


def render_overlays(
    video: VideoSample, maskset: MaskSet, out_dir: Path | str
) -> list[Path]:
    """Write one PNG per frame with the mask alpha-blended at 0.5."""
    maskset.validate(video.num_frames)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    color = _overlay_color(video.video_id)
    paths = []
    for t in range(video.num_frames):
        frame = video.frames[t] * 255.0
        alpha = maskset.masks[t].astype(np.float32)[..., None] * 0.5
        blended = frame * (1.0 - alpha) + color * alpha
        path = out_dir / f"{t:05d}.png"
        Image.fromarray(np.round(blended).astype(np.uint8), mode="RGB").save(path)
        paths.append(path)
    return paths


def save_predictions(
    video: VideoSample,
    result: InferenceResult,
    maskset: MaskSet,
    out_dir: Path | str,
    expression: str,
) -> Path:
    """Write per-frame mask PNGs plus the prediction.json sidecar."""
    out_dir = Path(out_dir)
    mask_dir = out_dir / video.video_id
    mask_dir.mkdir(parents=True, exist_ok=True)
    for t in range(maskset.masks.shape[0]):
        Image.fromarray(maskset.masks[t] * 255, mode="L").save(
            mask_dir / f"{t:05d}.png"
        )
    sidecar = {
        "video_id": video.video_id,
        "expr": expression,
        "forced": result.forced,
        "provenance": list(maskset.provenance),
    }
    sidecar_path = mask_dir / "prediction.json"
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return sidecar_path
