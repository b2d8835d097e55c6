import math

import numpy as np
import pytest

from proben import (
    BBox,
    ClassScores,
    Detection,
    GroundTruth,
    average_precision,
    breakdown,
    lamr,
    match,
    match_all,
)
from proben.metrics import FP, IGNORED, TP, REFERENCE_FPPI


def det(image_id, box, p, det_id, posteriors=None):
    scores = (
        ClassScores.from_posteriors(posteriors)
        if posteriors is not None
        else ClassScores.from_posteriors([1.0 - p, p])
    )
    return Detection(image_id, "rgb", box, scores, det_id=det_id)


def gt(image_id, box, class_id=1, ignore=False):
    return GroundTruth(image_id, box, class_id, ignore=ignore)


B = BBox(0, 0, 10, 20)
B_FAR = BBox(100, 100, 10, 20)


def ap_oracle(records, npos):
    """All-point AP via explicit interpolation at every reachable recall level.

    records: (score, is_tp) pairs; integrates max-precision-at-recall>=r over
    the recall grid k/npos. Independent of the envelope/cumsum implementation.
    """
    ordered = sorted(records, key=lambda r: -r[0])
    points = []
    tp = fp = 0
    for _, is_tp in ordered:
        tp, fp = tp + is_tp, fp + (not is_tp)
        points.append((tp / npos, tp / (tp + fp)))
    total = 0.0
    for k in range(1, npos + 1):
        r = k / npos
        candidates = [p for rec, p in points if rec >= r - 1e-12]
        total += max(candidates) if candidates else 0.0
    return total / npos


def lamr_oracle(records, npos, image_count):
    """Recompute FP/miss from scratch at every distinct score threshold."""
    scores = sorted({s for s, _ in records}, reverse=True)
    curve = []
    for threshold in scores:
        kept = [(s, t) for s, t in records if s >= threshold]
        fp = sum(1 for _, t in kept if not t)
        tp = sum(1 for _, t in kept if t)
        curve.append((fp / image_count, 1.0 - tp / npos))
    sampled = []
    for ref in REFERENCE_FPPI:
        under = [m for f, m in curve if f <= ref]
        if not curve:
            value = 1.0
        elif under:
            value = under[-1]
        else:
            value = curve[-1][1]
        sampled.append(max(value, 1e-10))
    return math.exp(sum(math.log(v) for v in sampled) / len(sampled))


class TestMatch:
    def test_single_tp(self):
        result = match([det("i", B, 0.9, 0)], [gt("i", B)])
        assert [d.label for d in result.detections] == [TP]
        assert result.num_gt == {1: 1}

    def test_double_detection_second_is_fp(self):
        dets = [det("i", B, 0.9, 0), det("i", BBox(1, 1, 10, 20), 0.8, 1)]
        result = match(dets, [gt("i", B)])
        assert [d.label for d in result.detections] == [TP, FP]

    def test_ignored_gt_absorbs_detection(self):
        result = match([det("i", B, 0.9, 0)], [gt("i", B, ignore=True)])
        assert [d.label for d in result.detections] == [IGNORED]
        assert result.num_gt == {}

    def test_prefers_real_gt_over_ignored(self):
        gts = [gt("i", B, ignore=True), gt("i", BBox(0.5, 0.5, 10, 20))]
        result = match([det("i", B, 0.9, 0)], gts)
        assert [d.label for d in result.detections] == [TP]

    def test_class_mismatch_is_fp(self):
        d = det("i", B, 0.9, 0, posteriors=[0.05, 0.9, 0.05])
        result = match([d], [gt("i", B, class_id=2)])
        assert [d.label for d in result.detections] == [FP]

    def test_takes_highest_iou_gt(self):
        near = gt("i", BBox(0.2, 0.2, 10, 20))
        far = gt("i", BBox(4, 4, 10, 20))
        result = match([det("i", B, 0.9, 0), det("i", BBox(4, 4, 10, 20), 0.8, 1)], [far, near])
        assert [d.label for d in result.detections] == [TP, TP]

    def test_below_threshold_is_fp(self):
        result = match([det("i", B_FAR, 0.9, 0)], [gt("i", B)])
        assert [d.label for d in result.detections] == [FP]

    def test_strictly_greater_than_threshold(self):
        # two unit boxes overlapping exactly half: IoU = 1/3, not > 1/3
        a = BBox(0, 0, 2, 1)
        result = match([det("i", a, 0.9, 0)], [gt("i", BBox(1, 0, 2, 1))], iou_threshold=1 / 3)
        assert [d.label for d in result.detections] == [FP]


class TestAveragePrecision:
    def test_single_tp_no_fp(self):
        result = match_all([det("i", B, 0.9, 0)], [gt("i", B)])
        assert average_precision(result, 1) == 1.0

    def test_fp_above_tp_halves_ap(self):
        dets = [det("i", B_FAR, 0.9, 0), det("i", B, 0.8, 1)]
        result = match_all(dets, [gt("i", B)])
        assert average_precision(result, 1) == pytest.approx(0.5)

    def test_no_gt_returns_none_with_warning(self):
        result = match_all([det("i", B, 0.9, 0)], [gt("i", B)])
        with pytest.warns(UserWarning):
            assert average_precision(result, 2) is None

    def test_no_detections_gives_zero(self):
        result = match_all([], [gt("i", B)])
        assert average_precision(result, 1) == 0.0

    def test_matches_enumeration_oracle_on_random_instances(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            n_gt = int(rng.integers(1, 11))
            n_det = int(rng.integers(0, 21))
            gts, dets, det_id = [], [], 0
            for j in range(n_gt):
                gts.append(gt(f"im{j % 3}", BBox(20 * j, 0, 10, 20)))
            for _ in range(n_det):
                j = int(rng.integers(0, n_gt))
                hit = rng.random() < 0.6
                box = (
                    BBox(20 * j + rng.uniform(-2, 2), rng.uniform(-2, 2), 10, 20)
                    if hit
                    else BBox(1000 + rng.uniform(0, 500), 500, 10, 20)
                )
                dets.append(det(f"im{j % 3}", box, float(rng.uniform(0.05, 0.95)), det_id))
                det_id += 1
            result = match_all(dets, gts)
            got = average_precision(result, 1)
            records = [
                (d.score, d.label == TP) for d in result.detections if d.label != IGNORED
            ]
            want = ap_oracle(records, n_gt)
            assert got == pytest.approx(want, abs=1e-9), f"seed {seed}"


class TestLamr:
    def test_perfect_detector_floors_to_zero(self):
        dets = [det(f"im{j}", B, 0.9, j) for j in range(3)]
        gts = [gt(f"im{j}", B) for j in range(3)]
        result = match_all(dets, gts)
        assert round(lamr(result, 3), 4) == 0.0

    def test_constant_miss_rate_is_identity(self):
        # 1 of 2 GTs found, zero FPs: miss rate 0.5 across all nine points
        dets = [det("im0", B, 0.9, 0)]
        gts = [gt("im0", B), gt("im0", B_FAR)]
        result = match_all(dets, gts)
        assert lamr(result, 1) == pytest.approx(0.5, abs=1e-12)

    def test_empty_detections_misses_everything(self):
        result = match_all([], [gt("im0", B)])
        assert lamr(result, 1) == 1.0

    def test_hand_enumerable_three_image_scenario(self):
        gts = [gt("a", B), gt("b", B), gt("c", B)]
        dets = [
            det("a", B, 0.95, 0),  # TP
            det("b", B_FAR, 0.90, 1),  # FP
            det("b", B, 0.85, 2),  # TP
            det("c", B_FAR, 0.40, 3),  # FP
        ]
        result = match_all(dets, gts)
        got = lamr(result, 3)
        records = [(d.score, d.label == TP) for d in result.detections]
        want = lamr_oracle(records, 3, 3)
        assert got == pytest.approx(want, abs=1e-9)
        # threshold sweep by hand: fppi 0, 1/3, 1/3, 2/3; miss 2/3, 2/3, 1/3, 1/3
        # refs < 1/3 take the fppi-0 point (miss 2/3), refs >= 1/3 take miss 1/3,
        # ref 1.0 takes the loosest point (miss 1/3)
        n_below = sum(1 for r in REFERENCE_FPPI if r < 1 / 3)
        expected = math.exp((n_below * math.log(2 / 3) + (9 - n_below) * math.log(1 / 3)) / 9)
        assert got == pytest.approx(expected, abs=1e-9)

    def test_matches_enumeration_oracle_on_random_instances(self):
        for seed in range(200):
            rng = np.random.default_rng(1000 + seed)
            n_gt = int(rng.integers(1, 11))
            n_det = int(rng.integers(0, 21))
            n_img = int(rng.integers(1, 5))
            gts = [gt(f"im{j % n_img}", BBox(25 * j, 0, 10, 20)) for j in range(n_gt)]
            dets = []
            for i in range(n_det):
                j = int(rng.integers(0, n_gt))
                hit = rng.random() < 0.5
                box = (
                    BBox(25 * j + rng.uniform(-2, 2), rng.uniform(-2, 2), 10, 20)
                    if hit
                    else BBox(2000 + rng.uniform(0, 500), 500, 10, 20)
                )
                dets.append(det(f"im{j % n_img}", box, float(rng.uniform(0.05, 0.95)), i))
            result = match_all(dets, gts, image_ids=[f"im{k}" for k in range(n_img)])
            got = lamr(result, n_img)
            records = [
                (d.score, d.label == TP) for d in result.detections if d.label != IGNORED
            ]
            want = lamr_oracle(records, n_gt, n_img)
            assert got == pytest.approx(want, abs=1e-9), f"seed {seed}"


class TestMetricInvariances:
    def _random_instance(self, seed):
        rng = np.random.default_rng(seed)
        gts = [gt(f"im{j % 2}", BBox(30 * j, 0, 10, 20)) for j in range(4)]
        dets = []
        for i in range(12):
            j = int(rng.integers(0, 4))
            hit = rng.random() < 0.5
            box = (
                BBox(30 * j + rng.uniform(-1, 1), rng.uniform(-1, 1), 10, 20)
                if hit
                else BBox(900 + 40 * i, 300, 10, 20)
            )
            dets.append(det(f"im{j % 2}", box, float(rng.uniform(0.1, 0.9)), i))
        return dets, gts

    @pytest.mark.parametrize("seed", range(20))
    def test_monotone_rescaling_leaves_metrics_unchanged(self, seed):
        dets, gts = self._random_instance(seed)
        result = match_all(dets, gts)

        def squash(p):  # strictly increasing map on (0, 1)
            return p ** 3 / (p ** 3 + (1 - p) ** 3)

        rescaled = [
            det(d.image_id, d.box, squash(d.score), d.det_id) for d in dets
        ]
        result2 = match_all(rescaled, gts)
        assert average_precision(result, 1) == average_precision(result2, 1)
        assert lamr(result, 2) == lamr(result2, 2)

    @pytest.mark.parametrize("seed", range(10))
    def test_extra_fp_never_increases_ap(self, seed):
        dets, gts = self._random_instance(seed)
        base = average_precision(match_all(dets, gts), 1)
        extra = dets + [det("im0", BBox(5000, 5000, 10, 20), 0.99, 999)]
        worse = average_precision(match_all(extra, gts), 1)
        assert worse <= base + 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_metrics_in_unit_interval(self, seed):
        dets, gts = self._random_instance(seed)
        result = match_all(dets, gts)
        assert 0.0 <= average_precision(result, 1) <= 1.0
        assert 0.0 <= lamr(result, 2) <= 1.0


class TestBreakdown:
    def _dataset(self):
        gts = [gt("d0", B), gt("d1", B), gt("n0", B)]
        dets = [det("d0", B, 0.9, 0), det("n0", B, 0.8, 1), det("n0", B_FAR, 0.7, 2)]
        tags = {"d0": "day", "d1": "day", "n0": "night"}
        return dets, gts, tags

    def test_all_day_equals_all(self):
        dets, gts, _ = self._dataset()
        tags = {"d0": "day", "d1": "day", "n0": "day"}
        report = breakdown(dets, gts, tags)
        assert report.subsets["day"].lamr == report.subsets["all"].lamr
        assert report.subsets["day"].ap == report.subsets["all"].ap

    def test_counts_partition_across_tags(self):
        dets, gts, tags = self._dataset()
        report = breakdown(dets, gts, tags)
        day, night, full = report.subsets["day"], report.subsets["night"], report.subsets["all"]
        assert day.tp + night.tp == full.tp
        assert day.fp + night.fp == full.fp

    def test_untagged_images_count_only_in_all(self):
        dets, gts, tags = self._dataset()
        del tags["d1"]
        report = breakdown(dets, gts, tags)
        assert report.subsets["all"].num_images == 3
        assert report.subsets["day"].num_images == 1

    def test_empty_subset_marked_absent(self):
        dets, gts, _ = self._dataset()
        report = breakdown(dets, gts, {"zz": "night"} if False else {})
        assert "night" not in report.subsets  # no tags at all: only 'all'
        # a tag pointing at no known image is still a subset with that image
        report2 = breakdown(dets, gts, {"extra": "night"})
        assert report2.subsets["night"].num_images == 1

    def test_report_serializes(self):
        dets, gts, tags = self._dataset()
        report = breakdown(dets, gts, tags, class_names=["person"])
        payload = report.to_dict()
        assert set(payload["subsets"]) == {"all", "day", "night"}
        text = report.to_text()
        assert "AP[person]" in text
