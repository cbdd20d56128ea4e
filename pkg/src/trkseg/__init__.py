"""Desk-scale language-instructed video object segmentation.

A tiny causal language model watches a sparse-dense reduced token stream of
the video, answers with a special `<TRK>` token, and that token's projected
hidden state prompts a mask decoder to segment the referred object in every
frame.
"""

from .datakit import (
    DatasetManifest,
    SynthConfig,
    VideoSample,
    fill_template,
    generate_synthetic_dataset,
    image_to_pseudo_video,
    load_sample,
    merge_class_masks,
)
from .model import ModelConfig, VideoSegModel, build_model, load_checkpoint, save_checkpoint
from .sampler import FrameSelection, SparseDenseLayout, sample_frames, sparse_dense_reduce
from .tokenizer import Vocab, build_text_vocab
from .trainer import LossWeights, TrainConfig, train

__all__ = [
    "DatasetManifest",
    "FrameSelection",
    "LossWeights",
    "ModelConfig",
    "SparseDenseLayout",
    "SynthConfig",
    "TrainConfig",
    "VideoSample",
    "VideoSegModel",
    "Vocab",
    "build_model",
    "build_text_vocab",
    "fill_template",
    "generate_synthetic_dataset",
    "image_to_pseudo_video",
    "load_checkpoint",
    "load_sample",
    "merge_class_masks",
    "sample_frames",
    "save_checkpoint",
    "sparse_dense_reduce",
    "train",
]

__version__ = "0.1.0"
