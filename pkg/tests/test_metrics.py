"""Evaluation-pipeline unit tests: ambiguity alignment, BMI, SER, SNR
estimation, and the run/frame aggregation protocol."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaeq.metrics import RunRecord, aggregate, align, bmi, ser, snr_est
from vaeq.signal import make_qam


def _records(runs, frames, value=1.0):
    out = []
    for r in range(runs):
        for f in range(frames):
            out.append(RunRecord(run=r, frame=f,
                                 bmi=np.array([value]), ser=np.array([0.0]),
                                 snr_est_db=np.array([20.0]),
                                 loss_a=0.0, loss_c=0.0))
    return out


def test_align_recovers_known_ambiguity():
    c = make_qam(16)
    rng = np.random.default_rng(0)
    tx = c.points[rng.integers(0, 16, size=(4, 2000))]
    perm = np.array([2, 0, 3, 1])
    rot = np.array([1, 3, 0, 2])
    delay = np.array([5, 0, 2, 7])
    x = np.empty_like(tx)
    for j in range(4):
        x[perm[j]] = np.roll(tx[j], delay[j]) * np.exp(1j * np.pi / 2 * rot[j])
    # output channel perm[j] carries tx channel j
    a = align(x, tx, max_delay=16)
    assert not a.failed
    assert np.array_equal(a.assignment, perm)
    restored = a.apply(x)
    assert np.max(np.abs(restored - tx)) < 1e-10


def test_align_flags_garbage():
    rng = np.random.default_rng(1)
    c = make_qam(4)
    tx = c.points[rng.integers(0, 4, size=(2, 1000))]
    noise = rng.normal(size=(2, 1000)) + 1j * rng.normal(size=(2, 1000))
    assert align(noise, tx, max_delay=8).failed


def test_bmi_perfect_llrs_reach_bit_count():
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, size=(2, 500, 4))
    llrs = (1.0 - 2.0 * bits) * 40.0     # confident and always right
    val = bmi(llrs, bits, 4)
    assert np.all(np.abs(val - 4.0) < 1e-9)


def test_bmi_zero_llrs_give_zero():
    bits = np.zeros((1, 100, 2), dtype=np.int64)
    assert np.allclose(bmi(np.zeros((1, 100, 2)), bits, 2), 0.0, atol=1e-12)


def test_bmi_wrong_llrs_clip_at_zero():
    rng = np.random.default_rng(3)
    bits = rng.integers(0, 2, size=(1, 200, 2))
    llrs = (2.0 * bits - 1.0) * 30.0     # confidently wrong
    assert np.all(bmi(llrs, bits, 2) == 0.0)


def test_bmi_shape_check():
    with pytest.raises(ValueError):
        bmi(np.zeros((1, 10, 2)), np.zeros((1, 9, 2)), 2)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_bmi_bounded(seed):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(2, 50, 3))
    llrs = rng.normal(scale=5.0, size=(2, 50, 3))
    val = bmi(llrs, bits, 3)
    assert np.all(val >= 0.0) and np.all(val <= 3.0 + 1e-12)


def test_ser_counts_mismatches():
    dec = np.array([[0, 1, 2, 3], [0, 0, 0, 0]])
    tx = np.array([[0, 1, 2, 0], [1, 1, 1, 1]])
    assert np.allclose(ser(dec, tx), [0.25, 1.0])


def test_snr_est_formula_and_zero_c():
    # C equal to the true noise energy recovers the configured SNR
    p_sig, n, snr_db = 2.0, 1000, 17.0
    c = p_sig * n * 10 ** (-snr_db / 10)
    assert abs(snr_est(np.array([c]), np.array([p_sig]), n)[0] - snr_db) < 1e-9
    assert np.isposinf(snr_est(np.array([0.0]), np.array([1.0]), 10)[0])


def test_aggregate_pools_last_20_per_run():
    summary, partial = aggregate(_records(3, 100), frames_per_run=100, keep_last=20)
    assert not partial
    for m in ("bmi", "ser", "snr_est_db"):
        assert summary[m]["n"] == 60


def test_aggregate_flags_partial_runs():
    summary, partial = aggregate(_records(2, 40), frames_per_run=100, keep_last=20)
    assert partial
    assert summary["bmi"]["n"] == 40


def test_aggregate_uses_final_frames_only():
    recs = _records(1, 100, value=0.0)
    for r in recs[-20:]:
        r.bmi[:] = 7.0
    summary, _ = aggregate(recs, frames_per_run=100, keep_last=20)
    assert summary["bmi"]["min"] == 7.0 and summary["bmi"]["max"] == 7.0


def test_aggregate_ignores_nonfinite():
    recs = _records(1, 5)
    recs[-1].bmi[:] = np.nan
    summary, _ = aggregate(recs, frames_per_run=5, keep_last=5)
    assert summary["bmi"]["n"] == 5
    assert abs(summary["bmi"]["mean"] - 1.0) < 1e-12
