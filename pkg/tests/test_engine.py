import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsf.engine import (
    Adam,
    AttackConfig,
    NumericalAbortError,
    adv_loss,
    area_loss,
    associate_proposals,
    box_iou,
    config_from_dict,
    config_to_dict,
    evaluate_asr,
    max_associated_score,
    optimize,
    total_loss,
)
from fsf.objectives import (
    DetectionObjective,
    MaskMatchObjective,
    MeanIntensityObjective,
    Proposal,
)
from fsf.placement import (
    PlacementParams,
    TargetBox,
    apply_patch,
    place_mask_multi,
)
from fsf.raster import GridSpec, rasterize
from fsf.shapes import (
    CurveSampling,
    InvalidInputError,
    init_coefficients,
    theta_to_vector,
)

from conftest import check_gradient_against_fd


def small_config(**over):
    defaults = dict(K=4, grid=GridSpec(32, 32), sampling=CurveSampling(96),
                    alpha=1.0, beta=0.1, max_iters=20, seed=0, threads=1)
    defaults.update(over)
    return AttackConfig(**defaults)


def warm_scene(rng, box=None):
    img = np.clip(0.25 + 0.05 * rng.standard_normal((64, 64)), 0, 1)
    box = box or TargetBox(31.5, 31.5, 16, 24)
    r0, c0 = int(box.cy - box.h / 2), int(box.cx - box.w / 2)
    img[r0:r0 + int(box.h), c0:c0 + int(box.w)] += 0.5
    return np.clip(img, 0, 1), [box]


class TestBoxIoU:
    def test_identical(self):
        b = TargetBox(5, 5, 4, 4)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        assert box_iou(TargetBox(0, 0, 2, 2), TargetBox(10, 10, 2, 2)) == 0.0

    def test_half_shift_is_one_third(self):
        # equal boxes shifted by w/2: intersection wh/2, union 3wh/2
        a = TargetBox(0, 0, 4, 6)
        b = TargetBox(2, 0, 4, 6)
        assert box_iou(a, b) == pytest.approx(1 / 3)


class TestAssociation:
    def test_threshold_behavior(self):
        a = TargetBox(0, 0, 4, 6)
        props = [Proposal(box=TargetBox(2, 0, 4, 6), score=0.5)]
        assert associate_proposals(props, [a], 1 / 3 - 1e-9) == [[0]]
        assert associate_proposals(props, [a], 1 / 3 + 1e-9) == [[]]

    def test_proposal_may_serve_multiple_targets(self):
        t1 = TargetBox(10, 10, 8, 8)
        t2 = TargetBox(11, 10, 8, 8)
        props = [Proposal(box=TargetBox(10.5, 10, 8, 8), score=0.9)]
        assoc = associate_proposals(props, [t1, t2], 0.5)
        assert assoc == [[0], [0]]


class TestAdvLoss:
    def test_single_half_score(self):
        loss, grad = adv_loss([0.5])
        assert loss == pytest.approx(0.6931471805599453)
        assert grad[0] == pytest.approx(2.0)

    def test_empty_is_zero(self):
        loss, grad = adv_loss([])
        assert loss == 0.0 and grad.size == 0

    def test_two_high_scores(self):
        loss, _ = adv_loss([0.9, 0.9])
        assert loss == pytest.approx(2 * -np.log(0.1), rel=1e-12)

    def test_clamp_keeps_finite(self):
        loss, grad = adv_loss([1.0])
        assert np.isfinite(loss) and np.isfinite(grad).all()

    @given(st.lists(st.floats(0, 0.999), min_size=1, max_size=8),
           st.integers(0, 7), st.floats(0.0005, 0.05))
    @settings(max_examples=40, deadline=None)
    def test_monotone_increasing_in_each_score(self, scores, idx, eps):
        idx = idx % len(scores)
        bumped = list(scores)
        bumped[idx] = min(bumped[idx] + eps, 0.9999)
        assert adv_loss(bumped)[0] >= adv_loss(scores)[0]
        assert np.all(adv_loss(scores)[1] > 0)


class TestAreaLoss:
    @pytest.mark.parametrize("fill,expected", [(1.0, 1.0), (0.0, 0.0)])
    def test_constant_masks(self, fill, expected):
        loss, grad = area_loss(np.full((10, 10), fill))
        assert loss == expected
        assert np.allclose(grad, 0.01)

    def test_half(self):
        mask = np.zeros((4, 4))
        mask[:2] = 1.0
        assert area_loss(mask)[0] == 0.5


class TestTotalLoss:
    def test_breakdown_identity(self, rng):
        img, boxes = warm_scene(rng)
        cfg = small_config(alpha=0.7, beta=0.23)
        theta = init_coefficients((0, 0, 0.8, 0.8), 4, seed=1)
        bd, _ = total_loss(img, boxes, theta, MeanIntensityObjective(boxes), cfg)
        assert bd.total == pytest.approx(bd.adv + 0.7 * bd.area + 0.23 * bd.reg,
                                         abs=1e-12)

    def test_no_association_zero_loss(self, rng):
        img, boxes = warm_scene(rng)
        cfg = small_config(alpha=0.0, beta=0.0)

        class NoProposals(DetectionObjective):
            def forward(self, image):
                return []

            def scores_at(self, image, proposals):
                return np.zeros(0)

            def backward(self, image, proposals, score_grads):
                return np.zeros_like(image)

        theta = init_coefficients((0, 0, 0.6, 0.6), 4, seed=1)
        bd, grad = total_loss(img, boxes, theta, NoProposals(), cfg)
        assert bd.total == 0.0
        assert np.all(grad == 0.0)

    def test_gradient_matches_fd_mean_intensity(self, rng):
        img, boxes = warm_scene(rng)
        cfg = small_config()
        obj = MeanIntensityObjective(boxes)
        theta = init_coefficients((0, 0, 0.7, 0.7), 4, seed=3)
        bd, grad = total_loss(img, boxes, theta, obj, cfg)
        vec = theta_to_vector(theta)

        from fsf.shapes import vector_to_theta

        def fd_fn(vp, vm, h):
            fp, _ = total_loss(img, boxes, vector_to_theta(vp, 4), obj, cfg)
            fm, _ = total_loss(img, boxes, vector_to_theta(vm, 4), obj, cfg)
            return (fp.total - fm.total) / (2 * h), False

        n_checked, _ = check_gradient_against_fd(grad, fd_fn, vec)
        assert n_checked == vec.size

    def test_gradient_matches_fd_mask_match(self, rng):
        cfg = small_config(alpha=0.0, beta=0.0)
        target = rasterize(init_coefficients((0, 0, 0.5, 0.5), 4, seed=9),
                           cfg.grid, cfg.sampling) > 0.5
        obj = MaskMatchObjective(target.astype(float))
        theta = init_coefficients((0, 0, 0.7, 0.7), 4, seed=4)
        bd, grad = total_loss(None, [], theta, obj, cfg)
        vec = theta_to_vector(theta)

        from fsf.shapes import vector_to_theta

        def fd_fn(vp, vm, h):
            fp, _ = total_loss(None, [], vector_to_theta(vp, 4), obj, cfg)
            fm, _ = total_loss(None, [], vector_to_theta(vm, 4), obj, cfg)
            return (fp.total - fm.total) / (2 * h), False

        n_checked, _ = check_gradient_against_fd(grad, fd_fn, vec)
        assert n_checked == vec.size


class TestAdam:
    def test_first_step_size_is_lr(self):
        adam = Adam(lr=0.01)
        p = adam.step(np.zeros(3), np.array([1.0, -2.0, 0.5]))
        # bias-corrected first step moves by ~lr in the gradient sign
        assert np.allclose(np.abs(p), 0.01, atol=1e-6)

    def test_moments_accumulate(self):
        adam = Adam(lr=0.1)
        p = np.zeros(2)
        for _ in range(10):
            p = adam.step(p, np.array([1.0, 1.0]))
        assert np.all(p < 0)


class TestOptimize:
    def test_early_stop_exact_iteration_count(self, rng):
        img, boxes = warm_scene(rng)

        class AlwaysLow(DetectionObjective):
            def forward(self, image):
                return [Proposal(box=boxes[0], score=0.01)]

            def scores_at(self, image, proposals):
                return np.array([0.01])

            def backward(self, image, proposals, score_grads):
                return np.zeros_like(image)

        cfg = small_config(max_iters=50, early_stop_threshold=0.1,
                           early_stop_patience=7)
        res = optimize(img, boxes, AlwaysLow(), cfg)
        assert res.stop_reason == "early_stop"
        assert res.iterations == 7

    def test_deterministic_given_seed(self, rng):
        img, boxes = warm_scene(rng)
        cfg = small_config(max_iters=8, augment=True)
        obj = MeanIntensityObjective(boxes)
        r1 = optimize(img, boxes, obj, cfg)
        r2 = optimize(img, boxes, obj, cfg)
        assert np.array_equal(r1.theta.coeffs, r2.theta.coeffs)
        assert [t.breakdown for t in r1.trace] == [t.breakdown for t in r2.trace]

    def test_mask_match_descends(self, rng):
        cfg = small_config(alpha=0.0, beta=0.0, max_iters=10,
                           learning_rate=0.002, early_stop_threshold=0.0)
        target = rasterize(init_coefficients((0.05, 0.05, 0.6, 0.5), 4, seed=2),
                           cfg.grid, cfg.sampling)
        res = optimize(None, [], MaskMatchObjective(target), cfg)
        losses = [t.breakdown.total for t in res.trace]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_schedule_fires_once(self, rng):
        img, boxes = warm_scene(rng)

        class FixedScores(DetectionObjective):
            def __init__(self):
                self.calls = 0

            def forward(self, image):
                self.calls += 1
                s = 0.9 if self.calls < 3 else 0.15
                return [Proposal(box=boxes[0], score=s)]

            def scores_at(self, image, proposals):
                return np.array([p.score for p in proposals])

            def backward(self, image, proposals, score_grads):
                return np.zeros_like(image)

        cfg = small_config(max_iters=6, schedule_trigger=0.2, schedule_factor=0.5,
                           early_stop_threshold=0.0, learning_rate=0.01)
        res = optimize(img, boxes, FixedScores(), cfg)
        lrs = [t.lr for t in res.trace]
        assert lrs[:3] == [0.01, 0.01, 0.01]
        assert lrs[3:] == [0.005] * 3  # decays once, never again

    def test_nonfinite_aborts_with_trace(self, rng):
        img, boxes = warm_scene(rng)

        class Exploding(DetectionObjective):
            def __init__(self):
                self.calls = 0

            def forward(self, image):
                self.calls += 1
                return [Proposal(box=boxes[0], score=0.5)]

            def scores_at(self, image, proposals):
                return np.array([0.5])

            def backward(self, image, proposals, score_grads):
                g = np.zeros_like(image)
                if self.calls >= 4:
                    # finite here, but the scatter accumulation overflows
                    g[:] = 1e308
                return g

        cfg = small_config(max_iters=10)
        with np.errstate(all="ignore"), pytest.raises(NumericalAbortError) as err:
            optimize(img, boxes, Exploding(), cfg)
        assert len(err.value.trace) == 3


class TestMultiTargetJointOptimization:
    def test_one_shared_shape_suppresses_all_targets(self, rng):
        # two warm blobs, one shared theta placed at both boxes
        img = np.clip(0.25 + 0.04 * rng.standard_normal((96, 96)), 0, 1)
        boxes = [TargetBox(24, 28, 14, 20), TargetBox(68, 64, 14, 20)]
        for b in boxes:
            r0, c0 = int(b.cy - b.h / 2), int(b.cx - b.w / 2)
            img[r0:r0 + int(b.h), c0:c0 + int(b.w)] += 0.5
        img = np.clip(img, 0, 1)
        obj = MeanIntensityObjective(boxes)
        cfg = small_config(max_iters=60, learning_rate=0.01,
                           placement=PlacementParams(rho=1.2, gray=0.0))
        res = optimize(img, boxes, obj, cfg)
        clean = [p.score for p in obj.forward(img)]
        mask = rasterize(res.theta, cfg.grid, cfg.sampling, 1)
        patched_img = apply_patch(
            img, place_mask_multi(mask, boxes, 1.2, img.shape), 0.0)
        patched = [p.score for p in obj.forward(patched_img)]
        assert all(c > 0.9 for c in clean)
        assert all(p < 0.25 for p in patched)
        assert all(p < c for p, c in zip(patched, clean))


class TestEvaluateAsr:
    def _scene(self, rng, theta_extent=0.8):
        img, boxes = warm_scene(rng)
        theta = init_coefficients((0, 0, theta_extent, theta_extent), 4, seed=0)
        return img, boxes, theta

    def test_perfect_attack(self, rng):
        img, boxes, theta = self._scene(rng)
        cfg = small_config(placement=PlacementParams(rho=1.4, gray=0.0))
        report = evaluate_asr([(img, boxes, theta)], MeanIntensityObjective(boxes),
                              [0.3, 0.5, 0.7], cfg)
        assert report["asr"] == [1.0, 1.0, 1.0]
        assert report["mean_confidence_drop"] > 0.5

    def test_null_patch(self, rng):
        img, boxes = warm_scene(rng)
        theta = init_coefficients((0, 0, 0.3, 0.3), 4, seed=0)
        zero = type(theta)(4, np.zeros(9, dtype=complex))
        cfg = small_config()
        report = evaluate_asr([(img, boxes, zero)], MeanIntensityObjective(boxes),
                              [0.3, 0.5], cfg)
        assert report["asr"] == [0.0, 0.0]
        assert report["mean_confidence_drop"] == pytest.approx(0.0, abs=1e-9)
        assert not report["vacuous"]

    def test_asr_nondecreasing_in_threshold(self, rng):
        img, boxes, theta = self._scene(rng, theta_extent=0.5)
        cfg = small_config()
        report = evaluate_asr([(img, boxes, theta)], MeanIntensityObjective(boxes),
                              [0.1, 0.3, 0.5, 0.7, 0.9], cfg)
        assert report["asr"] == sorted(report["asr"])

    def test_vacuous_flag(self, rng):
        img = np.zeros((64, 64))  # nothing warm anywhere
        boxes = [TargetBox(31.5, 31.5, 16, 24)]
        theta = init_coefficients((0, 0, 0.5, 0.5), 4, seed=0)
        cfg = small_config()
        report = evaluate_asr([(img, boxes, theta)], MeanIntensityObjective(boxes),
                              [0.3, 0.5], cfg)
        assert report["vacuous"]
        assert report["asr"] == [1.0, 1.0]

    def test_thresholds_validated(self, rng):
        img, boxes, theta = self._scene(rng)
        with pytest.raises(InvalidInputError):
            evaluate_asr([(img, boxes, theta)], MeanIntensityObjective(boxes),
                         [0.0, 0.5], small_config())

    def test_counting_rule(self, rng):
        # patched scores {0.2, 0.6} at tau=0.5: exactly half the targets pass
        img = np.zeros((64, 64))
        boxes = [TargetBox(16, 16, 10, 10), TargetBox(48, 48, 10, 10)]
        fixed = {boxes[0]: 0.2, boxes[1]: 0.6}

        class FixedScores(DetectionObjective):
            def forward(self, image):
                return [Proposal(box=b, score=s) for b, s in fixed.items()]

            def scores_at(self, image, proposals):
                return np.array([p.score for p in proposals])

            def backward(self, image, proposals, score_grads):
                return np.zeros_like(image)

        theta = init_coefficients((0, 0, 0.3, 0.3), 4, seed=0)
        report = evaluate_asr([(img, boxes, theta)], FixedScores(), [0.5],
                              small_config())
        assert report["asr"] == [0.5]


class TestConfigDict:
    def test_round_trip(self):
        cfg = small_config(alpha=0.5, schedule_trigger=0.2)
        back = config_from_dict(config_to_dict(cfg))
        assert config_to_dict(back) == config_to_dict(cfg)

    def test_unknown_keys_rejected(self):
        with pytest.raises(InvalidInputError):
            config_from_dict({"learning_rat": 0.01})

    def test_partial_override(self):
        cfg = config_from_dict({"k": 3, "grid": 48}, base=small_config())
        assert cfg.K == 3
        assert cfg.grid.h == 48 and cfg.grid.w == 48
        assert cfg.sampling.n_samples == 96  # untouched

    def test_invariants_enforced(self):
        with pytest.raises(InvalidInputError):
            config_from_dict({"alpha": -1.0})
        with pytest.raises(InvalidInputError):
            config_from_dict({"learning_rate": 0.0})


class TestMaxAssociatedScore:
    def test_empty(self):
        assert max_associated_score([], []) == 0.0

    def test_picks_max_across_targets(self):
        props = [Proposal(box=TargetBox(0, 0, 2, 2), score=0.3),
                 Proposal(box=TargetBox(0, 0, 2, 2), score=0.8)]
        assert max_associated_score(props, [[0], [0, 1]]) == 0.8
