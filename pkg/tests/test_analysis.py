import numpy as np
import pytest

from smoothcert.analysis import (
    certified_accuracy,
    fd_from_moments,
    fit_logistic_head,
    head_accuracy,
    latency_summary,
    linear_probe,
    representation_fd,
)
from smoothcert.certify import ABSTAIN, CertificationRecord
from smoothcert.rng import gaussian, stream


def rec(predicted, label, radius, abstain=False, ms=1.0, sid=0):
    return CertificationRecord(
        sample_id=sid,
        label=label,
        predicted=predicted,
        abstain=abstain,
        pa_lower=0.9 if not abstain else 0.4,
        radius=radius,
        wall_clock_ms=ms,
    )


def ten_record_fixture():
    # hand-counted: 10 records; 6 correct non-abstaining with radii
    # [0.1, 0.2, 0.3, 0.3, 0.6, 0.9]; 2 abstain; 2 wrong class
    records = [
        rec(0, 0, 0.1),
        rec(1, 1, 0.2),
        rec(2, 2, 0.3),
        rec(0, 0, 0.3),
        rec(1, 1, 0.6),
        rec(2, 2, 0.9),
        rec(ABSTAIN, 0, 0.0, abstain=True),
        rec(ABSTAIN, 1, 0.0, abstain=True),
        rec(1, 0, 0.5),
        rec(2, 0, 0.8),
    ]
    # accuracy at r: 0.0->0.6, 0.25->0.4, 0.5->0.2, 0.7->0.1, 1.0->0.0
    return records


def test_certified_accuracy_hand_counted_fixture():
    table = certified_accuracy(ten_record_fixture(), [0.0, 0.25, 0.5, 0.7, 1.0])
    assert np.allclose(table.accuracy, [0.6, 0.4, 0.2, 0.1, 0.0])


def test_certified_accuracy_all_abstain_is_zero():
    records = [rec(ABSTAIN, 0, 0.0, abstain=True, sid=i) for i in range(5)]
    table = certified_accuracy(records, [0.0, 0.5])
    assert np.array_equal(table.accuracy, [0.0, 0.0])


def test_certified_accuracy_step_function():
    records = [rec(0, 0, 0.5, sid=i) for i in range(4)]
    table = certified_accuracy(records, [0.0, 0.25, 0.5, 0.500001, 1.0])
    assert np.allclose(table.accuracy, [1.0, 1.0, 1.0, 0.0, 0.0])


def test_certified_accuracy_nonincreasing_dense_grid():
    rng = stream(0, "grid")
    records = [
        rec(i % 3, i % 3 if rng.uniform() < 0.7 else (i + 1) % 3, float(rng.uniform(0, 1)), sid=i)
        for i in range(50)
    ]
    table = certified_accuracy(records, np.linspace(0, 1.2, 200))
    assert all(b <= a for a, b in zip(table.accuracy, table.accuracy[1:]))


def test_certified_accuracy_rejects_empty():
    with pytest.raises(ValueError):
        certified_accuracy([], [0.0])


def test_fd_identical_sets_is_zero():
    a = gaussian(stream(1), (64, 6))
    assert representation_fd(a, a) == pytest.approx(0.0, abs=1e-8)


def test_fd_shifted_copy_is_squared_distance():
    a = gaussian(stream(2), (128, 5))
    d = 1.7
    b = a.copy()
    b[:, 0] += d
    assert representation_fd(a, b) == pytest.approx(d * d, abs=1e-8)


def test_fd_commuting_diagonal_closed_form():
    va = np.array([1.0, 4.0, 0.25])
    vb = np.array([2.25, 1.0, 9.0])
    fd = fd_from_moments(np.zeros(3), np.diag(va), np.zeros(3), np.diag(vb))
    expected = np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)
    assert fd == pytest.approx(expected, abs=1e-10)


def test_fd_symmetric_and_nonnegative():
    a = gaussian(stream(3), (80, 4))
    b = gaussian(stream(4), (90, 4)) * 1.3 + 0.2
    ab = representation_fd(a, b)
    ba = representation_fd(b, a)
    assert ab == pytest.approx(ba, abs=1e-8)
    assert ab >= 0.0


def test_fd_small_sample_shrinkage_applies():
    # fewer than 4*dim rows: shrinkage keeps the product PSD without errors
    a = gaussian(stream(5), (6, 5))
    b = gaussian(stream(6), (6, 5))
    assert np.isfinite(representation_fd(a, b))
    with pytest.raises(ValueError):
        representation_fd(a[:1], b)


def test_probe_separable_reps_reach_full_accuracy():
    rng = stream(7, "probe")
    centers = np.eye(3) * 10.0
    labels = np.repeat(np.arange(3), 40)
    reps = centers[labels] + gaussian(rng, (120, 3)) * 0.1
    accs = linear_probe(reps, labels, {0.0: (reps, labels)}, num_classes=3)
    assert accs[0.0] == 1.0


def test_probe_random_labels_at_chance():
    rng = stream(8, "chance")
    reps = gaussian(rng, (600, 4))
    labels = stream(9).integers(0, 3, 600)
    train = fit_logistic_head(reps[:400], labels[:400], 3)
    acc = head_accuracy(*train, reps[400:], labels[400:])
    # 3-sigma binomial band around 1/3 on 200 evals
    assert abs(acc - 1 / 3) < 3 * np.sqrt((1 / 3) * (2 / 3) / 200)


def test_probe_rejects_single_class():
    reps = gaussian(stream(10), (20, 3))
    with pytest.raises(ValueError):
        fit_logistic_head(reps, np.zeros(20, dtype=int), 3)


def test_probe_deterministic():
    rng = stream(11, "det")
    reps = gaussian(rng, (60, 4))
    labels = stream(12).integers(0, 2, 60)
    w1, b1 = fit_logistic_head(reps, labels, 2)
    w2, b2 = fit_logistic_head(reps, labels, 2)
    assert np.array_equal(w1, w2) and np.array_equal(b1, b2)


def test_latency_single_record():
    summary = latency_summary([rec(0, 0, 0.5, ms=100.0)], n=10_000)
    assert summary["mean_ms"] == 100.0
    assert summary["per_noise_ms"] == pytest.approx(0.01)


def test_latency_percentile_ordering():
    records = [rec(0, 0, 0.5, ms=float(m), sid=i) for i, m in enumerate([10, 20, 30, 80, 500])]
    summary = latency_summary(records, n=100)
    assert summary["p50_ms"] <= summary["p95_ms"]
    with pytest.raises(ValueError):
        latency_summary([], n=10)
