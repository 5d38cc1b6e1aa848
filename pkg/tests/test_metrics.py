import csv
import json

import numpy as np
import pytest

from relfuse.metrics import (ConfusionMatrix, compute_metrics, confusion,
                             multiclass_mcc, render_report)

KVASIR_CLASSES = [
    "dyed-lifted-polyps", "dyed-resection-margins", "esophagitis", "normal-cecum",
    "normal-pylorus", "normal-z-line", "polyps", "ulcerative-colitis",
]


def brute_force_report(labels, predictions, k):
    """Recompute every metric from the raw per-sample lists, independently of
    the confusion-matrix implementation."""
    labels = list(labels)
    predictions = list(predictions)
    n = len(labels)
    accuracy = sum(1 for t, p in zip(labels, predictions) if t == p) / n
    per = {}
    for c in range(k):
        tp = sum(1 for t, p in zip(labels, predictions) if t == c and p == c)
        fp = sum(1 for t, p in zip(labels, predictions) if t != c and p == c)
        fn = sum(1 for t, p in zip(labels, predictions) if t == c and p != c)
        tn = n - tp - fp - fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        specificity = tn / (tn + fp) if tn + fp else 0.0
        per[c] = (precision, recall, f1, specificity)
    macro = [float(np.mean([per[c][i] for c in range(k)])) for i in range(4)]

    # MCC straight from the covariance definition over one-hot indicators
    T = np.zeros((n, k))
    P = np.zeros((n, k))
    for i, (t, p) in enumerate(zip(labels, predictions)):
        T[i, t] = 1.0
        P[i, p] = 1.0
    Tc = T - T.mean(axis=0)
    Pc = P - P.mean(axis=0)
    cov_tp = (Tc * Pc).sum()
    cov_tt = (Tc * Tc).sum()
    cov_pp = (Pc * Pc).sum()
    mcc = cov_tp / np.sqrt(cov_tt * cov_pp) if cov_tt > 0 and cov_pp > 0 else 0.0
    return {"accuracy": accuracy, "precision": macro[0], "recall": macro[1],
            "f1": macro[2], "specificity": macro[3], "mcc": float(mcc)}


class TestConfusion:
    def test_perfect_predictions_are_diagonal(self):
        labels = np.array([0, 1, 2, 2, 1, 0])
        cm = confusion(labels, labels, 3)
        assert np.array_equal(cm.counts, np.diag([2, 2, 2]))
        assert cm.total == 6

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            confusion([], [], 2)

    def test_direct_count_oracle(self):
        cm = confusion([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert np.array_equal(cm.counts, np.array([[1, 1], [0, 2]]))

    def test_out_of_range_reports_index(self):
        with pytest.raises(ValueError, match="index 2"):
            confusion([0, 1, 5], [0, 1, 1], 2)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0], 2)


class TestComputeMetrics:
    def test_perfect_matrix_gives_all_ones(self):
        cm = ConfusionMatrix(np.diag([5, 3, 7]).astype(np.int64), ["a", "b", "c"])
        rep = compute_metrics(cm)
        for name in ("accuracy", "precision", "recall", "f1", "mcc", "specificity"):
            assert getattr(rep, name) == 1.0, name

    def test_binary_closed_form_oracle(self):
        # accuracy = 85/100; MCC = (45*40 - 10*5)/sqrt(55*50*45*50)
        cm = ConfusionMatrix(np.array([[45, 5], [10, 40]], dtype=np.int64), ["neg", "pos"])
        rep = compute_metrics(cm)
        assert np.isclose(rep.accuracy, 0.85)
        tp, fn, fp, tn = 45, 5, 10, 40
        closed = (tp * tn - fp * fn) / np.sqrt(
            (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
        assert np.isclose(rep.mcc, closed, rtol=1e-12)
        assert np.isclose(rep.mcc, 0.7035, atol=5e-5)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            k = int(rng.choice([2, 4, 8]))
            n = int(rng.integers(10, 200))
            labels = rng.integers(0, k, size=n)
            preds = rng.integers(0, k, size=n)
            rep = compute_metrics(confusion(labels, preds, k))
            oracle = brute_force_report(labels, preds, k)
            for name, expected in oracle.items():
                assert abs(getattr(rep, name) - expected) < 1e-12, (trial, name)

    def test_accuracy_equals_micro_recall(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 4, size=100)
        preds = rng.integers(0, 4, size=100)
        cm = confusion(labels, preds, 4)
        rep = compute_metrics(cm)
        micro_recall = np.trace(cm.counts) / cm.counts.sum()
        assert rep.accuracy == micro_recall

    def test_permutation_invariance_of_macro_and_mcc(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 5, size=300)
        preds = rng.integers(0, 5, size=300)
        rep = compute_metrics(confusion(labels, preds, 5))
        perm = rng.permutation(5)
        inv = np.argsort(perm)
        rep_p = compute_metrics(confusion(inv[labels], inv[preds], 5))
        for name in ("accuracy", "precision", "recall", "f1", "mcc", "specificity"):
            assert abs(getattr(rep, name) - getattr(rep_p, name)) < 1e-12

    def test_mcc_bounds_and_diagonal_condition(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            counts = rng.integers(0, 30, size=(3, 3)).astype(np.int64)
            if counts.sum() == 0:
                continue
            mcc = multiclass_mcc(counts)
            assert -1.0 <= mcc <= 1.0
            if mcc == 1.0:
                off = counts - np.diag(np.diag(counts))
                assert not off.any() and np.trace(counts) > 0

    def test_anti_diagonal_binary_is_minus_one(self):
        assert multiclass_mcc(np.array([[0, 5], [5, 0]])) == -1.0

    def test_zero_denominator_flagged_not_nan(self):
        # class 2 never appears in labels or predictions
        cm = confusion([0, 1, 0, 1], [0, 1, 1, 0], 3)
        rep = compute_metrics(cm)
        cls = rep.per_class[2]
        assert cls.precision == 0.0 and cls.recall == 0.0
        assert "precision" in cls.undefined and "recall" in cls.undefined
        assert np.isfinite(rep.mcc)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics(ConfusionMatrix(np.zeros((2, 2), dtype=np.int64), ["a", "b"]))


class TestRenderReport:
    def _sample(self, k=8, names=None):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, k, size=200)
        preds = np.where(rng.uniform(size=200) < 0.7, labels, rng.integers(0, k, size=200))
        cm = confusion(labels, preds, k, names)
        return compute_metrics(cm), cm

    def test_files_written_and_json_roundtrips(self, tmp_path):
        rep, cm = self._sample()
        json_path, csv_path, txt_path = render_report(rep, cm, tmp_path)
        assert json_path.exists() and csv_path.exists() and txt_path.exists()
        loaded = json.loads(json_path.read_text())
        assert loaded == rep.to_dict()

    def test_kvasir_class_names_in_csv_header(self, tmp_path):
        rep, cm = self._sample(names=KVASIR_CLASSES)
        _, csv_path, _ = render_report(rep, cm, tmp_path)
        with open(csv_path, newline="") as fh:
            header = next(csv.reader(fh))
        assert header[1:] == KVASIR_CLASSES

    def test_csv_cells_match_matrix(self, tmp_path):
        rep, cm = self._sample(k=4)
        _, csv_path, _ = render_report(rep, cm, tmp_path)
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        for i in range(4):
            for j in range(4):
                assert int(rows[1 + i][1 + j]) == cm.counts[i, j]

    def test_text_report_mirrors_metric_columns(self, tmp_path):
        rep, cm = self._sample(k=2)
        _, _, txt_path = render_report(rep, cm, tmp_path)
        text = txt_path.read_text()
        for col in ("Accuracy", "Precision", "Recall", "F1-score", "MCC", "Specificity"):
            assert col in text

    def test_unwritable_path_rejected(self, tmp_path):
        rep, cm = self._sample(k=2)
        with pytest.raises(FileNotFoundError):
            render_report(rep, cm, tmp_path / "missing" / "deeper")
