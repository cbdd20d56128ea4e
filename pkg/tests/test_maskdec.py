import numpy as np
import pytest
import torch

from trkseg.maskdec import FrameEncoder, MaskDecoder, MaskLogits, binarize


@pytest.fixture()
def encoder():
    torch.manual_seed(0)
    return FrameEncoder(channels=3, d_feat=32)


@pytest.fixture()
def decoder():
    torch.manual_seed(1)
    return MaskDecoder(d_prompt=16, d_feat=32, n_heads=2, rounds=2)


class TestEncoder:
    def test_output_shape(self, encoder):
        feat = encoder(torch.rand(64, 64, 3))
        assert feat.features.shape == (16, 16, 32)
        assert feat.stride == 4

    def test_identical_inputs_identical_features(self, encoder):
        frame = torch.rand(32, 32, 3)
        a = encoder(frame).features
        b = encoder(frame.clone()).features
        torch.testing.assert_close(a, b)

    def test_indivisible_rejected(self, encoder):
        with pytest.raises(ValueError):
            encoder(torch.rand(30, 30, 3))

    def test_translation_equivariance_interior(self, encoder):
        # shifting the frame by one stride shifts interior features by one cell
        torch.manual_seed(2)
        frame = torch.rand(64, 64, 3)
        shifted = torch.roll(frame, shifts=4, dims=1)
        with torch.no_grad():
            f = encoder(frame).features
            fs = encoder(shifted).features
        # brute-force expectation on the interior crop (borders excluded)
        torch.testing.assert_close(fs[3:-3, 4:-3], f[3:-3, 3:-4])


class TestDecoder:
    def test_output_shape(self, encoder, decoder):
        feat = encoder(torch.rand(64, 64, 3))
        out = decoder(feat, torch.randn(16))
        assert out.logits.shape == (64, 64)

    def test_deterministic(self, encoder, decoder):
        decoder.eval()
        feat = encoder(torch.rand(32, 32, 3))
        prompt = torch.randn(16)
        with torch.no_grad():
            a = decoder(feat, prompt).logits
            b = decoder(feat, prompt).logits
        torch.testing.assert_close(a, b)

    def test_distinct_prompts_distinct_logits(self, encoder, decoder):
        torch.manual_seed(5)
        feat = encoder(torch.rand(32, 32, 3))
        with torch.no_grad():
            a = decoder(feat, torch.randn(16)).logits
            b = decoder(feat, torch.randn(16)).logits
        assert (a - b).abs().max() > 0

    def test_frame_independence(self, encoder, decoder):
        # decoding frame t never reads other frames
        torch.manual_seed(6)
        frames = torch.rand(3, 32, 32, 3)
        prompt = torch.randn(16)
        with torch.no_grad():
            before = decoder(encoder(frames[1]), prompt).logits
            frames[0].fill_(0.123)
            frames[2].fill_(0.987)
            after = decoder(encoder(frames[1]), prompt).logits
        torch.testing.assert_close(before, after)

    def test_prompt_gradient_matches_finite_differences(self):
        torch.manual_seed(7)
        encoder = FrameEncoder(channels=3, d_feat=8).double()
        decoder = MaskDecoder(d_prompt=8, d_feat=8, n_heads=2, rounds=2).double()
        frame = torch.rand(8, 8, 3, dtype=torch.float64)
        feat = encoder(frame)
        prompt = torch.randn(8, dtype=torch.float64, requires_grad=True)
        decoder(feat, prompt).logits.mean().backward()
        analytic = prompt.grad.clone()
        assert analytic.abs().max() > 0
        h = 1e-6
        for i in range(8):
            pp, pm = prompt.detach().clone(), prompt.detach().clone()
            pp[i] += h
            pm[i] -= h
            with torch.no_grad():
                fd = (decoder(feat, pp).logits.mean()
                      - decoder(feat, pm).logits.mean()) / (2 * h)
            rel = abs(fd - analytic[i]) / max(abs(analytic[i]), 1e-12)
            assert rel < 1e-4

    def test_lowres_upsample_containment(self, encoder, decoder):
        # the binarized low-res map, nearest-upsampled, overlaps the final
        # mask; holds for confident (trained-like) logits, so push the output
        # head away from the threshold-noise regime
        import torch.nn.functional as F

        from trkseg.metrics import iou

        with torch.no_grad():
            decoder.prompt_out[-1].weight *= 50.0
        checked = 0
        for seed in range(40):
            if checked >= 3:
                break
            torch.manual_seed(seed + 100)
            frame = torch.rand(32, 32, 3)
            prompt = torch.randn(16)
            feat = encoder(frame)
            with torch.no_grad():
                final = binarize(decoder(feat, prompt))
                # recompute the low-res logits through the same decoder pieces
                h, w, d = feat.features.shape
                from trkseg.maskdec import _sine_pos_2d

                pe = _sine_pos_2d(h, w, d).to(feat.features.dtype).unsqueeze(0)
                f = decoder.feat_in(feat.features.reshape(1, h * w, d)) + pe
                p = decoder.prompt_in(prompt).reshape(1, 1, d)
                for rnd in decoder.rounds:
                    p, f = rnd(p, f, pe)
                p = decoder.prompt_out(p)
                lowres = (f @ p.transpose(1, 2)).reshape(1, 1, h, w)
                nearest = F.interpolate(lowres, scale_factor=4, mode="nearest")
            near_mask = (nearest.reshape(32, 32) > 0).numpy().astype(np.uint8)
            if final.sum() < 30 or near_mask.sum() < 30:  # object-scale masks
                continue
            assert iou(near_mask, final) > 0.5
            checked += 1
        assert checked >= 3


class TestBinarize:
    def test_all_negative(self):
        mask = binarize(MaskLogits(logits=torch.full((8, 8), -5.0)))
        assert mask.sum() == 0

    def test_exact_pixels(self):
        logits = torch.full((8, 8), -1.0)
        logits[0, 0] = logits[3, 4] = logits[7, 7] = 1.0
        mask = binarize(MaskLogits(logits=logits))
        assert mask.sum() == 3
        assert mask[0, 0] == mask[3, 4] == mask[7, 7] == 1

    def test_threshold_monotone(self):
        torch.manual_seed(3)
        logits = torch.randn(16, 16)
        low = binarize(logits, threshold=-0.5)
        high = binarize(logits, threshold=0.5)
        assert ((high == 1) & (low == 0)).sum() == 0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            binarize(torch.tensor([[float("inf")]]))
