import numpy as np
import pytest
import torch

from conftest import small_model_config
from trkseg.datakit import fill_template
from trkseg.errors import DataError
from trkseg.model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from trkseg.sampler import sample_frames


@pytest.fixture()
def frames():
    rng = np.random.default_rng(0)
    return torch.from_numpy(rng.random((8, 64, 64, 3), dtype=np.float32))


class TestComposition:
    def test_teacher_forward_one_prompt(self, small_model, frames):
        sel = sample_frames(8, 4, 2, mode="infer")
        conv = small_model.vocab.encode(fill_template("the red circle"))
        before = small_model.prompt_proj.forward_calls
        logits, assembled, prompt = small_model.teacher_forward(frames, sel, conv)
        assert small_model.prompt_proj.forward_calls == before + 1
        assert logits.shape[0] == assembled.embedded.shape[0]
        assert prompt.vector.shape == (small_model.cfg.d_prompt,)
        assert not prompt.forced

    def test_strategies_share_interface(self, frames):
        for strategy in ("sparse_dense", "n_frame", "st_pool", "slow_fast"):
            model = build_model(
                small_model_config(strategy=strategy), seed=0
            )
            sel = sample_frames(8, 4, 2, mode="infer")
            visual = model.visual_sequence(frames, sel)
            assert visual.shape[1] == model.cfg.d_model
            assert torch.isfinite(visual).all()

    def test_layout_token_counts_by_strategy(self, frames):
        L = 16  # 64/16 grid at patch 16
        sel = sample_frames(8, 4, 2, mode="infer")
        expected = {
            "sparse_dense": 4 + 2 * L,
            "n_frame": 2 * L,
            "st_pool": 4 * 1 + 2 * L,
            "slow_fast": 2 * L + 2 * 4,
        }
        for strategy, n in expected.items():
            model = build_model(small_model_config(strategy=strategy), seed=0)
            assert model.visual_sequence(frames, sel).shape[0] == n


class TestCheckpoint:
    def test_roundtrip_preserves_outputs(self, small_model, frames, tmp_path):
        sel = sample_frames(8, 4, 2, mode="infer")
        conv = small_model.vocab.encode(fill_template("the blue square"))
        small_model.eval()
        with torch.no_grad():
            logits, _, prompt = small_model.teacher_forward(frames, sel, conv)
        path = save_checkpoint(tmp_path / "ckpt.pt", small_model, meta={"note": "t"})
        reloaded, meta = load_checkpoint(path)
        assert meta["note"] == "t"
        assert reloaded.vocab.token_to_id == small_model.vocab.token_to_id
        with torch.no_grad():
            logits2, _, prompt2 = reloaded.teacher_forward(frames, sel, conv)
        torch.testing.assert_close(logits, logits2)
        torch.testing.assert_close(prompt.vector, prompt2.vector)

    def test_version_mismatch_rejected(self, small_model, tmp_path):
        path = save_checkpoint(tmp_path / "ckpt.pt", small_model)
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(DataError, match="format_version"):
            load_checkpoint(path)

    def test_corrupt_file_rejected(self, tmp_path):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(DataError):
            load_checkpoint(bad)

    def test_seeded_build_deterministic(self):
        a = build_model(small_model_config(), seed=5)
        b = build_model(small_model_config(), seed=5)
        for (na, pa), (nb, pb) in zip(
            a.named_parameters(), b.named_parameters()
        ):
            assert na == nb
            torch.testing.assert_close(pa, pb)


class TestConfig:
    def test_lm_config_vocab_size(self):
        cfg = ModelConfig(d_model=32, n_heads=2)
        lm_cfg = cfg.lm_config(vocab_size=77)
        assert lm_cfg.vocab_size == 77
        assert lm_cfg.d_model == 32

    def test_invalid_heads(self):
        cfg = ModelConfig(d_model=30, n_heads=4)
        with pytest.raises(ValueError):
            cfg.lm_config(10).validate()
