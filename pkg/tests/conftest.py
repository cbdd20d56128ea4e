import numpy as np
import pytest
import torch

from trkseg.datakit import SynthConfig, generate_synthetic_dataset, load_sample
from trkseg.model import ModelConfig, build_model


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 videos, 8 frames, 64x64, all three expression families."""
    root = tmp_path_factory.mktemp("tiny_data")
    cfg = SynthConfig(num_videos=8, T=8, H=64, W=64, seed=11)
    manifest = generate_synthetic_dataset(cfg, root, split="train")
    return cfg, manifest


@pytest.fixture(scope="session")
def tiny_sample(tiny_dataset):
    _, manifest = tiny_dataset
    return load_sample(manifest, manifest.entries[0].video_id)


def small_model_config(**overrides) -> ModelConfig:
    """A fast desk model for unit tests (64x64 frames)."""
    base = dict(
        patch_size=16,
        d_vis=32,
        d_model=64,
        n_layers=2,
        n_heads=2,
        d_ff=128,
        max_seq=128,
        d_prompt=32,
        d_feat=32,
        T_sparse=4,
        T_dense=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture()
def small_model():
    return build_model(small_model_config(), seed=0)


def grad_check_config(**overrides) -> ModelConfig:
    """8x8 frames, minimal widths, for finite-difference tests."""
    base = dict(
        frame_h=8,
        frame_w=8,
        patch_size=4,
        d_vis=12,
        d_model=16,
        n_layers=1,
        n_heads=2,
        d_ff=32,
        max_seq=64,
        d_prompt=8,
        d_feat=8,
        dec_heads=2,
        T_sparse=2,
        T_dense=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_binary_mask(rng: np.random.Generator, h: int = 16, w: int = 16,
                       p: float = 0.3) -> np.ndarray:
    return (rng.random((h, w)) < p).astype(np.uint8)
