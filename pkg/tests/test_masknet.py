import numpy as np
import pytest

from polyrefine import autodiff as ad
from polyrefine import losses
from polyrefine import masknet as mn
from polyrefine.autodiff import Tensor

from gradcheck import check_gradients, check_gradients_sampled


@pytest.fixture(scope="module")
def default_weights():
    return mn.init_weights(mn.MaskNetConfig(), seed=11)


class TestInit:
    def test_deterministic(self):
        cfg = mn.MaskNetConfig()
        a = mn.init_weights(cfg, 42)
        b = mn.init_weights(cfg, 42)
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].data.tobytes() == b[k].data.tobytes()

    def test_seeds_differ(self):
        cfg = mn.MaskNetConfig()
        a = mn.init_weights(cfg, 1)
        b = mn.init_weights(cfg, 2)
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_classifier_shape(self, default_weights):
        assert default_weights["cls.w"].shape == (128, 8)

    def test_biases_zero(self, default_weights):
        for name, t in default_weights.items():
            if name.endswith(".b"):
                assert not t.data.any()

    def test_config_validation(self):
        with pytest.raises(ValueError, match="ascend"):
            mn.MaskNetConfig(residual_channels=(64, 32, 128))
        with pytest.raises(ValueError, match="sum"):
            mn.MaskNetConfig(fusion_channels=(64, 40, 8))
        with pytest.raises(ValueError, match="descend"):
            mn.MaskNetConfig(fusion_channels=(40, 40, 40))


class TestAttentionGate:
    def test_zero_psi_halves_skip(self, default_weights):
        rng = np.random.default_rng(0)
        skip = Tensor(rng.standard_normal((64, 6, 9)))
        gating = Tensor(rng.standard_normal((128, 6, 9)))
        w = {k: Tensor(v.data.copy()) for k, v in default_weights.items()}
        w["fuse0.gate.psi.w"] = Tensor(np.zeros_like(w["fuse0.gate.psi.w"].data))
        out = mn.attention_gate(skip, gating, w, "fuse0.gate")
        np.testing.assert_allclose(out.data, 0.5 * skip.data, atol=1e-12)

    def test_alpha_bounded(self, default_weights):
        rng = np.random.default_rng(1)
        skip = Tensor(np.abs(rng.standard_normal((64, 5, 7))) + 0.1)
        gating = Tensor(rng.standard_normal((128, 5, 7)) * 10)
        out = mn.attention_gate(skip, gating, default_weights, "fuse0.gate")
        alpha = out.data / skip.data
        assert (alpha >= 0).all() and (alpha <= 1).all()

    def test_spatial_mismatch_rejected(self, default_weights):
        with pytest.raises(ValueError, match="spatial"):
            mn.attention_gate(
                Tensor(np.zeros((64, 4, 4))), Tensor(np.zeros((128, 5, 4))),
                default_weights, "fuse0.gate",
            )

    def test_gate_gradient(self):
        rng = np.random.default_rng(2)
        skip = rng.standard_normal((3, 4, 5))
        gating = rng.standard_normal((5, 4, 5))
        ws = rng.standard_normal((2, 3, 1, 1))
        wg = rng.standard_normal((2, 5, 1, 1))
        psi = rng.standard_normal((1, 2, 1, 1))
        proj = rng.standard_normal((3, 4, 5))

        def build(arrays):
            s, g, a, b, c = (Tensor(x, requires_grad=True) for x in arrays)
            w = {
                "g.ws.w": a, "g.ws.b": Tensor(np.zeros(2)),
                "g.wg.w": b, "g.wg.b": Tensor(np.zeros(2)),
                "g.psi.w": c, "g.psi.b": Tensor(np.zeros(1)),
            }
            out = mn.attention_gate(s, g, w, "g")
            return ad.tsum(ad.hadamard(out, proj)), [s, g, a, b, c]

        check_gradients(build, [skip, gating, ws, wg, psi], tol=1e-4)


class TestFusionChain:
    def test_output_channels(self, default_weights):
        rng = np.random.default_rng(3)
        img = Tensor(rng.random((3, 16, 16)))
        out = mn.forward(img, default_weights)
        assert out.skip_features.shape == (120, 8, 8)

    def test_spatial_dims_preserved_inside_fusion(self, default_weights):
        rng = np.random.default_rng(4)
        prev = Tensor(rng.standard_normal((128, 7, 11)))
        skip = Tensor(rng.standard_normal((64, 7, 11)))
        out = mn.fusion_block(prev, skip, default_weights, "fuse0")
        assert out.shape == (64, 7, 11)


class TestForward:
    def test_shapes_64x512(self, default_weights):
        img = Tensor(np.random.default_rng(5).random((3, 64, 512)))
        out = mn.forward(img, default_weights)
        assert out.mask_prob.shape == (64, 512)
        assert out.skip_features.shape == (120, 32, 256)
        assert out.class_logits.shape == (8,)

    def test_extreme_aspect_ratio(self, default_weights):
        img = Tensor(np.random.default_rng(6).random((3, 40, 900)))
        out = mn.forward(img, default_weights)
        assert out.mask_prob.shape == (40, 900)

    def test_odd_dims_cropped(self, default_weights):
        img = Tensor(np.random.default_rng(7).random((3, 41, 99)))
        out = mn.forward(img, default_weights)
        assert out.mask_prob.shape == (41, 99)
        assert out.skip_features.shape == (120, 21, 50)

    def test_mask_in_unit_interval(self, default_weights):
        img = Tensor(np.random.default_rng(8).standard_normal((3, 16, 24)) * 5)
        out = mn.forward(img, default_weights)
        assert (out.mask_prob.data >= 0).all() and (out.mask_prob.data <= 1).all()

    def test_small_input_rejected(self, default_weights):
        with pytest.raises(ValueError, match="small"):
            mn.forward(Tensor(np.zeros((3, 7, 64))), default_weights)

    def test_width_doubling_doubles_mask_width(self, default_weights):
        rng = np.random.default_rng(9)
        a = mn.forward(Tensor(rng.random((3, 16, 32))), default_weights)
        b = mn.forward(Tensor(rng.random((3, 16, 64))), default_weights)
        assert b.mask_prob.shape[1] == 2 * a.mask_prob.shape[1]

    def test_forward_deterministic(self, default_weights):
        img = np.random.default_rng(10).random((3, 16, 40))
        a = mn.forward(Tensor(img), default_weights)
        b = mn.forward(Tensor(img.copy()), default_weights)
        assert a.mask_prob.data.tobytes() == b.mask_prob.data.tobytes()
        assert a.class_logits.data.tobytes() == b.class_logits.data.tobytes()


class TestRegionClassify:
    def test_uniform_logits(self):
        label, probs = mn.region_classify(Tensor(np.zeros(8)))
        np.testing.assert_allclose(probs.data, 0.125, atol=1e-15)
        assert label == mn.REGION_CLASSES[0]

    def test_confident_line_segment(self):
        logits = np.zeros(8)
        logits[1] = 100.0
        label, probs = mn.region_classify(Tensor(logits))
        assert label == "Line Segment"
        assert probs.data[1] > 0.999

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            _, probs = mn.region_classify(Tensor(rng.standard_normal(8) * 7))
            assert abs(probs.data.sum() - 1.0) < 1e-12


class TestEndToEndGradients:
    def test_mask_loss_gradients_all_weights(self):
        # small ladder keeps the sampled finite-difference sweep fast; the
        # skip-fusion head keeps its full 120-channel contract
        cfg = mn.MaskNetConfig(residual_channels=(4, 6, 8), decoder_channels=4)
        weights = mn.init_weights(cfg, 3)
        rng = np.random.default_rng(12)
        img = rng.random((3, 16, 24))
        gt = np.zeros((16, 24))
        gt[4:12, 6:18] = 1.0
        from polyrefine import geometry as geo

        psi = geo.fast_marching_map(gt.astype(bool))
        alpha = losses.alpha_c(gt.astype(bool))
        names = sorted(weights.keys())
        arrays = [weights[n].data for n in names]

        def build(arrays):
            ws = {n: Tensor(a, requires_grad=True) for n, a in zip(names, arrays)}
            out = mn.forward(Tensor(img), ws, cfg)
            lmap = losses.focal_loss_map(out.mask_prob, gt, alpha, 2.0)
            return losses.fm_weighted_loss(lmap, psi), [ws[n] for n in names]

        check_gradients_sampled(build, arrays, n_per_array=2, tol=1e-3, seed=0)

    def test_classifier_step_leaves_backbone_untouched(self):
        cfg = mn.MaskNetConfig(residual_channels=(4, 6, 8), decoder_channels=4)
        weights = mn.init_weights(cfg, 4)
        mn.set_requires_grad(weights, False)
        mn.set_requires_grad(weights, True, prefix="cls.")
        before = {k: v.data.copy() for k, v in weights.items()}
        img = Tensor(np.random.default_rng(13).random((3, 12, 16)))
        out = mn.forward(img, weights, cfg)
        loss = losses.cross_entropy(out.class_logits, 2)
        loss.backward()
        for name, t in weights.items():
            if name.startswith("cls."):
                assert t.grad is not None
                t.data -= 0.1 * t.grad
            else:
                assert t.grad is None
        for name in weights:
            if not name.startswith("cls."):
                assert weights[name].data.tobytes() == before[name].tobytes()
            else:
                assert weights[name].data.tobytes() != before[name].tobytes()
