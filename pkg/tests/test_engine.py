import numpy as np
import pytest

from proben import (
    BBox,
    CalibrationParams,
    ClassPrior,
    ClassScores,
    ConfigurationError,
    Detection,
    FusionConfig,
    MissingVarianceError,
    fuse,
    fuse_all,
    iou,
    pool,
)


def det(image_id, modality, box, p, det_id, variance=None, posteriors=None):
    scores = (
        ClassScores.from_posteriors(posteriors)
        if posteriors is not None
        else ClassScores.from_posteriors([1.0 - p, p])
    )
    return Detection(image_id, modality, box, scores, box_variance=variance, det_id=det_id)


def random_detections(rng, n, image_id="img0", num_classes=2, modalities=("rgb", "thermal")):
    out = []
    for i in range(n):
        box = BBox(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(5, 40), rng.uniform(5, 40))
        logits = rng.normal(0, 2, size=num_classes + 1)
        out.append(
            Detection(
                image_id,
                modalities[rng.integers(len(modalities))],
                box,
                ClassScores.from_logits(logits),
                det_id=i,
            )
        )
    return out


def greedy_nms_oracle(detections, threshold):
    """Brute force: explicit overlap matrix, same greedy order, keep seeds."""
    dets = sorted(detections, key=lambda d: d.sort_key)
    overlap = {
        (a.det_id, b.det_id): iou(a.box, b.box) for a in dets for b in dets
    }
    alive = list(dets)
    kept = []
    while alive:
        seed = alive[0]
        kept.append(seed)
        alive = [
            d
            for d in alive[1:]
            if d.class_id != seed.class_id
            or overlap[(seed.det_id, d.det_id)] <= threshold
        ]
    return kept


class TestPool:
    def test_concatenates_without_suppression(self):
        b = BBox(0, 0, 10, 10)
        set1 = [det("i", "rgb", b, 0.9, 0), det("i", "rgb", b, 0.8, 1), det("i", "rgb", b, 0.7, 2)]
        set2 = [det("i", "thermal", b, 0.6, 3 + k) for k in range(4)]
        assert len(pool([set1, set2])) == 7

    def test_empty_modality_is_noop(self):
        b = BBox(0, 0, 10, 10)
        set1 = [det("i", "rgb", b, 0.9, 0)]
        assert pool([set1, []]) == set1

    def test_duplicates_retained_and_sorted(self):
        b = BBox(0, 0, 10, 10)
        d1 = det("i", "rgb", b, 0.6, 0)
        d2 = det("i", "thermal", b, 0.9, 1)
        assert pool([[d1], [d2]]) == [d2, d1]


class TestFusionConfig:
    def test_threshold_bounds(self):
        with pytest.raises(ConfigurationError):
            FusionConfig(iou_threshold=0.0)
        with pytest.raises(ConfigurationError):
            FusionConfig(iou_threshold=1.0)

    def test_unknown_modes(self):
        with pytest.raises(ConfigurationError):
            FusionConfig(score_fusion="median")
        with pytest.raises(ConfigurationError):
            FusionConfig(box_fusion="median")

    def test_linear_requires_weights(self):
        with pytest.raises(ConfigurationError):
            FusionConfig(score_fusion="linear")


class TestFuse:
    def test_lone_detection_passes_through(self):
        d = det("i", "rgb", BBox(0, 0, 10, 20), 0.85, 0)
        out = fuse([[d]], FusionConfig(score_fusion="proben"))
        assert len(out) == 1
        assert out[0].score == pytest.approx(0.85, abs=1e-12)

    def test_fig3_ranking_against_single_modal(self):
        obj = BBox(0, 0, 10, 20)
        lone = BBox(50, 50, 10, 20)
        dets_rgb = [det("i", "rgb", obj, 0.80, 0), det("i", "rgb", lone, 0.85, 1)]
        dets_thermal = [det("i", "thermal", BBox(1, 1, 10, 20), 0.70, 2)]
        out = fuse([dets_rgb, dets_thermal], FusionConfig(score_fusion="proben"))
        assert len(out) == 2
        assert out[0].score == pytest.approx(0.9032, abs=5e-4)
        assert out[1].score == pytest.approx(0.85, abs=1e-12)
        assert out[0].modality == "rgb+thermal"

    def test_max_mode_is_single_modal_nms(self):
        b1 = BBox(0, 0, 10, 10)
        b2 = BBox(1, 1, 10, 10)
        dets = [det("i", "rgb", b1, 0.9, 0), det("i", "rgb", b2, 0.8, 1)]
        out = fuse([dets], FusionConfig(score_fusion="max"))
        assert out == [dets[0]]

    def test_max_mode_matches_oracle_on_random_instances(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            dets = random_detections(rng, int(rng.integers(1, 21)))
            threshold = 0.5
            got = fuse([dets], FusionConfig(score_fusion="max", iou_threshold=threshold))
            want = greedy_nms_oracle(dets, threshold)
            assert [d.det_id for d in got] == [d.det_id for d in want], f"seed {seed}"

    def test_same_modality_overlaps_fuse_to_identity(self):
        # per-modality selection keeps one member, so scores pass through
        b = BBox(0, 0, 10, 10)
        dets = [det("i", "rgb", b, 0.9, 0), det("i", "rgb", BBox(1, 1, 10, 10), 0.8, 1)]
        out = fuse([dets], FusionConfig(score_fusion="proben", box_fusion="avg"))
        assert len(out) == 1
        assert out[0].score == pytest.approx(0.9, abs=1e-12)
        assert out[0].box == b

    def test_deterministic_under_permutation(self):
        rng = np.random.default_rng(7)
        dets = random_detections(rng, 15)
        config = FusionConfig(score_fusion="proben", box_fusion="avg")
        baseline = fuse([dets], config)
        for perm_seed in range(5):
            perm = np.random.default_rng(perm_seed).permutation(len(dets))
            shuffled = [dets[i] for i in perm]
            out = fuse([shuffled], config)
            assert [d.det_id for d in out] == [d.det_id for d in baseline]
            for a, b in zip(out, baseline):
                assert np.array_equal(a.scores.posteriors, b.scores.posteriors)
                assert a.box == b.box

    def test_outputs_do_not_overlap_above_threshold(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            dets = random_detections(rng, 20)
            out = fuse([dets], FusionConfig(score_fusion="max", iou_threshold=0.5))
            for i, a in enumerate(out):
                for b in out[i + 1 :]:
                    if a.class_id == b.class_id:
                        assert iou(a.box, b.box) <= 0.5

    def test_output_never_grows(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            dets = random_detections(rng, 12)
            out = fuse([dets], FusionConfig(score_fusion="proben"))
            assert len(out) <= len(dets)

    def test_cross_class_overlap_not_suppressed(self):
        b = BBox(0, 0, 10, 10)
        d1 = det("i", "rgb", b, 0.9, 0, posteriors=[0.05, 0.9, 0.05])
        d2 = det("i", "rgb", b, 0.8, 1, posteriors=[0.05, 0.15, 0.8])
        out = fuse([[d1], [d2]], FusionConfig(score_fusion="max"))
        assert len(out) == 2

    def test_calibration_applied_before_clustering(self):
        b = BBox(0, 0, 10, 10)
        d1 = det("i", "rgb", b, 0.8, 0)
        d2 = det("i", "thermal", BBox(0.5, 0.5, 10, 10), 0.7, 1)
        config = FusionConfig(
            score_fusion="max",
            calibration={"rgb": CalibrationParams(temperature=10.0)},
        )
        out = fuse([[d1], [d2]], config)
        # rgb logit shrunk toward 0.5, so thermal wins the cluster
        assert out[0].modality == "thermal"
        assert out[0].score == pytest.approx(0.7, abs=1e-12)

    def test_vavg_missing_variance_names_detection(self):
        b = BBox(0, 0, 10, 10)
        d1 = det("i", "rgb", b, 0.8, 0, variance=1.0)
        d2 = det("i", "thermal", BBox(1, 1, 10, 10), 0.7, 41)
        config = FusionConfig(score_fusion="proben", box_fusion="v-avg")
        with pytest.raises(MissingVarianceError, match="41"):
            fuse([[d1], [d2]], config)

    def test_mixed_image_ids_rejected(self):
        d1 = det("a", "rgb", BBox(0, 0, 1, 1), 0.5, 0)
        d2 = det("b", "rgb", BBox(0, 0, 1, 1), 0.5, 1)
        with pytest.raises(ConfigurationError):
            fuse([[d1, d2]], FusionConfig())

    def test_three_modalities_m_effective(self):
        b = BBox(0, 0, 10, 10)
        members = [
            det("i", m, b, 0.8, k)
            for k, m in enumerate(("rgb", "thermal", "mid"))
        ]
        out = fuse([[m] for m in members], FusionConfig(score_fusion="proben"))
        assert len(out) == 1
        # three agreeing 0.8s: 0.8^3 / (0.8^3 + 0.2^3)
        assert out[0].score == pytest.approx(0.512 / (0.512 + 0.008), abs=1e-9)

    def test_fused_variance_combines_inverse_variances(self):
        b = BBox(0, 0, 10, 10)
        d1 = det("i", "rgb", b, 0.8, 0, variance=1.0)
        d2 = det("i", "thermal", BBox(1, 1, 10, 10), 0.7, 1, variance=3.0)
        out = fuse([[d1], [d2]], FusionConfig(score_fusion="proben", box_fusion="v-avg"))
        assert out[0].box_variance == pytest.approx(0.75)


class TestFuseAll:
    def test_groups_by_image(self):
        d1 = det("a", "rgb", BBox(0, 0, 10, 10), 0.9, 0)
        d2 = det("b", "rgb", BBox(0, 0, 10, 10), 0.8, 1)
        d3 = det("a", "thermal", BBox(1, 1, 10, 10), 0.7, 2)
        out = fuse_all([[d1, d2], [d3]], FusionConfig(score_fusion="proben"))
        assert len(out) == 2
        assert {d.image_id for d in out} == {"a", "b"}
