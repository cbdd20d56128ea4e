"""Finite-difference gradient checks through the full pipeline."""

import numpy as np
import torch

from trkseg.datakit import fill_template
from trkseg.reasoner import PromptEmbedding
from trkseg.sampler import sample_frames
from trkseg.trainer import (
    LossWeights,
    segmentation_loss,
    text_loss,
    total_loss,
)

FD_STEP = 1e-5  # central differences in float64: roundoff ~1e-11, truncation ~1e-10


def make_case(model, seed=0):
    """Random double-precision frames, masks, and a conversation."""
    rng = np.random.default_rng(seed)
    cfg = model.cfg
    T = 4
    frames = torch.from_numpy(
        rng.random((T, cfg.frame_h, cfg.frame_w, cfg.channels))
    )
    gts = torch.from_numpy(
        (rng.random((T, cfg.frame_h, cfg.frame_w)) < 0.4).astype(np.float64)
    )
    conv = model.vocab.encode(fill_template("the red circle")) + [model.vocab.eos_id]
    sel = sample_frames(T, cfg.T_sparse, cfg.T_dense, mode="infer")
    return frames, gts, conv, sel


def pipeline_loss(model, frames, gts, conv, sel, w=None):
    w = w or LossWeights()
    logits, assembled, prompt = model.teacher_forward(frames, sel, conv)
    txt = text_loss(logits[:-1], assembled.token_ids[1:], assembled.role_mask[1:])
    dense = sel.dense_frame_indices()
    seg = segmentation_loss(
        [model.decode_frame(frames[t], prompt) for t in dense],
        [gts[t] for t in dense],
        w,
    )
    return total_loss(txt, seg, w)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_param_entries(model, param: torch.Tensor, frames, gts, conv, sel,
                        n_entries: int = 6, seed: int = 0):
    """Compare autograd and central differences on random entries of `param`.

    Returns the worst relative error across the checked entries.
    """
    model.zero_grad(set_to_none=True)
    loss = pipeline_loss(model, frames, gts, conv, sel)
    loss.backward()
    assert param.grad is not None, "parameter received no gradient"
    flat_grad = param.grad.reshape(-1)
    rng = np.random.default_rng(seed)
    idx = rng.choice(param.numel(), size=min(n_entries, param.numel()),
                     replace=False)
    worst = 0.0
    flat_param = param.data.reshape(-1)
    for i in idx:
        orig = float(flat_param[i])
        with torch.no_grad():
            flat_param[i] = orig + FD_STEP
            up = float(pipeline_loss(model, frames, gts, conv, sel))
            flat_param[i] = orig - FD_STEP
            down = float(pipeline_loss(model, frames, gts, conv, sel))
            flat_param[i] = orig
        fd = (up - down) / (2 * FD_STEP)
        worst = max(worst, rel_err(fd, float(flat_grad[i])))
    return worst


def check_prompt_vector(model, frames, gts, conv, sel):
    """FD check of total_loss w.r.t. the prompt embedding vector itself."""
    w = LossWeights()
    logits, assembled, prompt = model.teacher_forward(frames, sel, conv)
    txt = text_loss(
        logits[:-1], assembled.token_ids[1:], assembled.role_mask[1:]
    ).detach()
    dense = sel.dense_frame_indices()
    vec = prompt.vector.detach().clone().requires_grad_(True)

    def loss_of(v):
        p = PromptEmbedding(vector=v, source_position=prompt.source_position)
        seg = segmentation_loss(
            [model.decode_frame(frames[t], p) for t in dense],
            [gts[t] for t in dense],
            w,
        )
        return total_loss(txt, seg, w)

    loss_of(vec).backward()
    analytic = vec.grad.clone()
    worst = 0.0
    for i in range(vec.numel()):
        vp, vm = vec.detach().clone(), vec.detach().clone()
        vp[i] += FD_STEP
        vm[i] -= FD_STEP
        with torch.no_grad():
            fd = (float(loss_of(vp)) - float(loss_of(vm))) / (2 * FD_STEP)
        worst = max(worst, rel_err(fd, float(analytic[i])))
    return worst
