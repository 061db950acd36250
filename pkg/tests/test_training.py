import numpy as np
import pytest
from scipy import stats

from polyrefine import contour_gcn as cg
from polyrefine import losses
from polyrefine import masknet as mn
from polyrefine import synthetic as syn
from polyrefine import training as tr
from polyrefine.autodiff import Tensor


@pytest.fixture(scope="module")
def tiny_corpus():
    spec = syn.SyntheticSpec(count=12, max_height=28, max_width=96)
    ds = syn.gen_synthetic(spec, 4)
    return ds[:9], ds[9:]


TINY_MASK = mn.MaskNetConfig(residual_channels=(6, 8, 10), decoder_channels=6)
TINY_REFINER = dict(hidden_dim=12, num_res_blocks=2)


class TestSchedule:
    def test_base_rate(self):
        cfg = tr.TrainConfig.phase1(epochs=30)
        assert tr.schedule_lr(cfg, 0) == 3e-5
        assert tr.schedule_lr(cfg, 9) == 3e-5

    def test_restart_window_times_five(self):
        cfg = tr.TrainConfig.phase1(epochs=30)
        for epoch in (10, 11, 12):
            assert tr.schedule_lr(cfg, epoch) == pytest.approx(1.5e-4)
        assert tr.schedule_lr(cfg, 13) == 3e-5
        for epoch in (20, 21, 22):
            assert tr.schedule_lr(cfg, epoch) == pytest.approx(1.5e-4)

    def test_two_halvings_after_fourteen_epochs(self):
        cfg = tr.TrainConfig(lr=3e-5, epochs=40)
        engaged = 5
        assert tr.schedule_lr(cfg, engaged + 14, engaged) == pytest.approx(7.5e-6)
        assert tr.schedule_lr(cfg, engaged + 7, engaged) == pytest.approx(1.5e-5)
        assert tr.schedule_lr(cfg, engaged, engaged) == pytest.approx(3e-5)


class TestResampling:
    def _dataset(self, sizes):
        out = []
        for cls, n in sizes.items():
            for i in range(n):
                out.append(
                    syn.Sample(
                        image_id=f"x{cls}-{i}",
                        image=np.zeros((3, 8, 8)),
                        gt_mask=np.ones((8, 8), dtype=bool),
                        gt_polygon=np.array([[0.0, 0.0], [8.0, 0.0], [8.0, 8.0]]),
                        class_index=cls,
                    )
                )
        return out

    def test_single_class_plain_shuffle(self):
        ds = self._dataset({3: 20})
        order = tr.resample_by_class(ds, 0)
        assert sorted(order) == list(range(20))

    def test_imbalanced_classes_balanced_in_expectation(self):
        ds = self._dataset({0: 90, 1: 10})
        counts = np.zeros(2)
        for epoch in range(100):
            order = tr.resample_by_class(ds, epoch)
            assert len(order) == 100
            for idx in order:
                counts[ds[idx].class_index] += 1
        # chi-squared test against the 50/50 expectation
        chi2, p = stats.chisquare(counts)
        assert p > 0.001, f"class balance rejected: counts {counts}, p={p}"

    def test_deterministic_per_seed(self):
        ds = self._dataset({0: 30, 1: 6})
        assert tr.resample_by_class(ds, 7) == tr.resample_by_class(ds, 7)
        assert tr.resample_by_class(ds, 7) != tr.resample_by_class(ds, 8)


class TestSgdStep:
    def test_zero_lr_no_change(self):
        w = {"a": Tensor(np.ones(3), requires_grad=True)}
        w["a"].grad = np.ones(3)
        tr.sgd_step(w, {}, lr=0.0, momentum=0.9)
        np.testing.assert_array_equal(w["a"].data, np.ones(3))

    def test_momentum_accumulates(self):
        w = {"a": Tensor(np.zeros(1), requires_grad=True)}
        vel = {}
        w["a"].grad = np.array([1.0])
        tr.sgd_step(w, vel, lr=1.0, momentum=0.5)
        np.testing.assert_allclose(w["a"].data, [-1.0])
        w["a"].grad = np.array([1.0])
        tr.sgd_step(w, vel, lr=1.0, momentum=0.5)
        np.testing.assert_allclose(w["a"].data, [-2.5])  # v = 0.5*1 + 1

    def test_clip_rescales_global_norm(self):
        w = {
            "a": Tensor(np.zeros(1), requires_grad=True),
            "b": Tensor(np.zeros(1), requires_grad=True),
        }
        w["a"].grad = np.array([3.0])
        w["b"].grad = np.array([4.0])
        tr.sgd_step(w, {}, lr=1.0, momentum=0.0, clip_norm=1.0)
        np.testing.assert_allclose(w["a"].data, [-0.6])
        np.testing.assert_allclose(w["b"].data, [-0.8])


class TestPhase1:
    def test_zero_lr_leaves_weights_unchanged(self, tiny_corpus):
        train, val = tiny_corpus
        cfg = tr.TrainConfig.phase1(epochs=1, seed=3, lr=0.0, gamma_switch_epoch=0)
        w, _ = tr.phase1_train_masknet(train, [], cfg, TINY_MASK)
        fresh = mn.init_weights(TINY_MASK, 3)
        for k in fresh:
            assert w[k].data.tobytes() == fresh[k].data.tobytes()

    def test_first_epoch_beats_initialization(self, tiny_corpus):
        # identical seed means identical epoch-0 sample ordering, so the
        # lr=0 run measures the average loss at initialization
        train, val = tiny_corpus
        frozen = tr.TrainConfig.phase1(epochs=1, seed=3, lr=0.0, gamma_switch_epoch=None)
        _, hist0 = tr.phase1_train_masknet(train, val, frozen, TINY_MASK)
        cfg = tr.TrainConfig.phase1(epochs=1, seed=3, lr=2e-4, gamma_switch_epoch=None)
        _, hist1 = tr.phase1_train_masknet(train, val, cfg, TINY_MASK)
        assert hist1.rows[0]["train_loss"] < hist0.rows[0]["train_loss"]
        assert hist1.rows[0]["val_loss"] < hist0.rows[0]["val_loss"]

    def test_seeded_determinism(self, tiny_corpus):
        train, val = tiny_corpus
        cfg = tr.TrainConfig.phase1(epochs=2, seed=5, lr=1e-4, gamma_switch_epoch=1)
        w1, _ = tr.phase1_train_masknet(train, val, cfg, TINY_MASK)
        w2, _ = tr.phase1_train_masknet(train, val, cfg, TINY_MASK)
        for k in w1:
            assert w1[k].data.tobytes() == w2[k].data.tobytes()

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            tr.phase1_train_masknet([], [], tr.TrainConfig.phase1(epochs=1), TINY_MASK)

    def test_logs_written(self, tiny_corpus, tmp_path):
        train, val = tiny_corpus
        cfg = tr.TrainConfig.phase1(epochs=2, seed=3, lr=1e-4, log_dir=tmp_path, gamma_switch_epoch=1)
        tr.phase1_train_masknet(train, val, cfg, TINY_MASK)
        text = (tmp_path / "phase1.csv").read_text()
        header = text.splitlines()[0]
        for col in ("epoch", "train_loss", "val_loss", "lr"):
            assert col in header
        assert len(text.splitlines()) == 3

    def test_every_phase_logs(self, tiny_corpus, tmp_path):
        train, val = tiny_corpus
        cfg1 = tr.TrainConfig.phase1(epochs=1, seed=3, lr=1e-4, log_dir=tmp_path, gamma_switch_epoch=0)
        mask_net, _ = tr.phase1_train_masknet(train, val, cfg1, TINY_MASK)
        rcfg = cg.RefinerConfig(**TINY_REFINER)
        cfg2 = tr.TrainConfig.phase2(epochs=1, seed=3, log_dir=tmp_path)
        refiner, _ = tr.phase2_train_refiner(train, val, cfg2, mask_net, TINY_MASK, rcfg)
        cfg3 = tr.TrainConfig.phase3(epochs=1, seed=3, log_dir=tmp_path)
        tr.phase3_finetune(train, val, cfg3, mask_net, refiner, TINY_MASK, rcfg)
        cfgc = tr.TrainConfig.classifier(epochs=1, seed=3, log_dir=tmp_path)
        tr.train_classifier(train, val, cfgc, mask_net, TINY_MASK)
        for name in ("phase1", "phase2", "phase3", "classifier"):
            text = (tmp_path / f"{name}.csv").read_text()
            assert "train_loss" in text.splitlines()[0]
            assert len(text.splitlines()) >= 2


@pytest.fixture(scope="module")
def mask_net(tiny_corpus):
    train, val = tiny_corpus
    cfg = tr.TrainConfig.phase1(epochs=2, seed=6, lr=2e-4, gamma_switch_epoch=1)
    w, _ = tr.phase1_train_masknet(train, val, cfg, TINY_MASK)
    return w


class TestPhase2:

    def test_mask_net_frozen_bit_exact(self, tiny_corpus, mask_net):
        train, val = tiny_corpus
        before = {k: v.data.tobytes() for k, v in mask_net.items()}
        cfg = tr.TrainConfig.phase2(epochs=2, seed=6)
        tr.phase2_train_refiner(train, val, cfg, mask_net, TINY_MASK, cg.RefinerConfig(**TINY_REFINER))
        for k, v in mask_net.items():
            assert v.data.tobytes() == before[k]

    def test_zero_head_initial_loss_equals_unrefined(self, tiny_corpus, mask_net):
        train, val = tiny_corpus
        rcfg = cg.RefinerConfig(**TINY_REFINER)
        # the returned best weights at epoch 0 start from a zero head, so the
        # first validation loss must equal the loss of the unrefined contour
        cfg = tr.TrainConfig.phase2(epochs=1, seed=6, lr=0.0)
        _, hist = tr.phase2_train_refiner(train, val, cfg, mask_net, TINY_MASK, rcfg)
        cache = tr._RefinerSample(val[0], mask_net, TINY_MASK, {})
        manual = tr._contour_loss(Tensor(cache.points0), cache.gt_unit, cache.dims, rcfg.interp_factor)
        total = 0.0
        for s in val:
            c = tr._RefinerSample(s, mask_net, TINY_MASK, {})
            total += float(tr._contour_loss(Tensor(c.points0), c.gt_unit, c.dims, rcfg.interp_factor).data)
        np.testing.assert_allclose(hist.rows[0]["val_loss"], total / len(val), rtol=1e-12)

    def test_validation_improves(self, tiny_corpus, mask_net):
        train, val = tiny_corpus
        cfg = tr.TrainConfig.phase2(epochs=4, seed=6)
        _, hist = tr.phase2_train_refiner(train, val, cfg, mask_net, TINY_MASK, cg.RefinerConfig(**TINY_REFINER))
        vals = [r["val_loss"] for r in hist.rows]
        assert min(vals) < vals[0] or hist.best_epoch >= 0


class TestPhase3:
    def test_both_networks_move_and_lambda_zero(self, tiny_corpus):
        train, val = tiny_corpus
        cfg1 = tr.TrainConfig.phase1(epochs=1, seed=7, lr=2e-4, gamma_switch_epoch=0)
        mask_net, _ = tr.phase1_train_masknet(train, [], cfg1, TINY_MASK)
        rcfg = cg.RefinerConfig(**TINY_REFINER)
        cfg2 = tr.TrainConfig.phase2(epochs=1, seed=7)
        refiner, _ = tr.phase2_train_refiner(train, [], cfg2, mask_net, TINY_MASK, rcfg)

        m_before = {k: v.data.copy() for k, v in mask_net.items()}
        r_before = {k: v.data.copy() for k, v in refiner.items()}
        cfg3 = tr.TrainConfig.phase3(epochs=1, seed=7, lr=1e-4)
        m2, r2, _ = tr.phase3_finetune(train, [], cfg3, mask_net, refiner, TINY_MASK, rcfg)
        assert any(not np.array_equal(m2[k].data, m_before[k]) for k in m_before if not k.startswith("cls."))
        assert any(not np.array_equal(r2[k].data, r_before[k]) for k in r_before)

        # lambda = 0: mask head gets no gradient from the mask loss term
        cfg0 = tr.TrainConfig.phase3(epochs=1, seed=7, lr=1e-4, lambda_joint=0.0)
        m3, _, _ = tr.phase3_finetune(train, [], cfg0, mask_net, refiner, TINY_MASK, rcfg)
        # decoder weights only receive gradient through the mask loss, so
        # with lambda = 0 they must stay exactly put
        assert np.array_equal(m3["dec.out.w"].data, mask_net["dec.out.w"].data)


class TestClassifierPhase:
    def test_backbone_frozen_and_accuracy_improves(self, tiny_corpus):
        train, val = tiny_corpus
        cfg1 = tr.TrainConfig.phase1(epochs=1, seed=8, lr=2e-4, gamma_switch_epoch=0)
        mask_net, _ = tr.phase1_train_masknet(train, [], cfg1, TINY_MASK)
        before = {k: v.data.tobytes() for k, v in mask_net.items()}
        cfg = tr.TrainConfig.classifier(epochs=15, seed=8, lr=0.05)
        out, hist = tr.train_classifier(train, val, cfg, mask_net, TINY_MASK)
        for k in before:
            if not k.startswith("cls."):
                assert out[k].data.tobytes() == before[k]
        assert hist.rows[-1]["train_loss"] < hist.rows[0]["train_loss"]
