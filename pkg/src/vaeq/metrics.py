"""Evaluation: blind-ambiguity alignment, bit-wise mutual information,
symbol error rate, channel-SNR estimation, and the min/mean/max aggregation
protocol over runs and frames."""

from dataclasses import dataclass, field

import numpy as np

QUARTER = np.pi / 2


@dataclass
class Alignment:
    """Resolves the blind equalizer's permutation / pi/2-rotation / delay
    ambiguity against the known transmit channels."""

    assignment: np.ndarray       # tx channel j <- output channel assignment[j]
    rotation: np.ndarray         # per tx channel, multiple of pi/2 (int 0..3)
    delay: np.ndarray            # per tx channel, symbols
    score: np.ndarray            # normalized |cross-correlation| per tx channel
    failed: bool = False

    def apply(self, x):
        """Reorder, de-rotate, and delay-compensate equalized symbols."""
        x = np.asarray(x)
        out = np.empty_like(x)
        for j in range(x.shape[0]):
            ch = np.roll(x[self.assignment[j]], -self.delay[j])
            out[j] = ch * np.exp(-1j * QUARTER * self.rotation[j])
        return out


def align(x_eq, tx_symbols, max_delay, min_score=0.1):
    """Find the output→transmit channel assignment, per-channel rotation
    (multiple of pi/2) and circular delay maximizing |cross-correlation|.

    Greedy maximum matching on the normalized correlation matrix; a best
    correlation below min_score flags the alignment as failed.
    """
    x = np.asarray(x_eq)
    t = np.asarray(tx_symbols)
    n_ch, n = x.shape
    fx = np.fft.fft(x, axis=1)
    ft = np.fft.fft(t, axis=1)
    norm = np.sqrt(np.sum(np.abs(x) ** 2, axis=1)[:, None] * np.sum(np.abs(t) ** 2, axis=1)[None, :])

    lags = np.r_[np.arange(0, max_delay + 1), np.arange(-max_delay, 0)]
    best_corr = np.zeros((n_ch, n_ch), dtype=np.complex128)
    best_delay = np.zeros((n_ch, n_ch), dtype=np.int64)
    for i in range(n_ch):
        # circular cross-correlation of x_i against every tx channel
        cc = np.fft.ifft(fx[i][None, :] * np.conj(ft), axis=1)
        cc_window = cc[:, lags % n]
        k = np.argmax(np.abs(cc_window), axis=1)
        best_corr[i] = cc_window[np.arange(n_ch), k]
        best_delay[i] = lags[k]
    score_mat = np.abs(best_corr) / np.where(norm > 0, norm, 1.0)

    assignment = np.full(n_ch, -1, dtype=np.int64)
    rotation = np.zeros(n_ch, dtype=np.int64)
    delay = np.zeros(n_ch, dtype=np.int64)
    score = np.zeros(n_ch)
    remaining = score_mat.copy()
    for _ in range(n_ch):
        i, j = np.unravel_index(np.argmax(remaining), remaining.shape)
        assignment[j] = i
        score[j] = score_mat[i, j]
        # x_i[n] ~ tx_j[n - d] * exp(j*rho): undoing needs roll by -d and -rho
        delay[j] = best_delay[i, j]
        rotation[j] = int(np.round(np.angle(best_corr[i, j]) / QUARTER)) % 4
        remaining[i, :] = -np.inf
        remaining[:, j] = -np.inf
    return Alignment(
        assignment=assignment,
        rotation=rotation,
        delay=delay,
        score=score,
        failed=bool(np.any(score < min_score)),
    )


def bmi(llrs, tx_bits, m):
    """Achievable-rate estimate from per-bit LLRs against the known bits.

    LLR convention L = ln(P(b=0)/P(b=1)); per channel,
    BMI = m - mean_n sum_i log2(1 + exp((2b-1)*L)). Clipped below at 0.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    bits = np.asarray(tx_bits)
    if llrs.shape != bits.shape:
        raise ValueError("LLR and bit arrays must have equal shape")
    penalty = np.logaddexp(0.0, (2.0 * bits - 1.0) * llrs) / np.log(2.0)
    val = m - np.mean(np.sum(penalty, axis=-1), axis=-1)
    return np.maximum(val, 0.0)


def ser(decisions, tx_indices):
    """Fraction of hard symbol decisions differing from the transmitted points."""
    decisions = np.asarray(decisions)
    tx_indices = np.asarray(tx_indices)
    return np.mean(decisions != tx_indices, axis=-1)


def snr_est(c_per_channel, p_sig, n_samples):
    """Channel-SNR estimate 10*log10(P_sig*N/C) per channel (dB).

    C = 0 reports +inf rather than raising.
    """
    c_per_channel = np.asarray(c_per_channel, dtype=np.float64)
    p_sig = np.asarray(p_sig, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.where(c_per_channel > 0, p_sig * n_samples / c_per_channel, np.inf))


@dataclass
class RunRecord:
    run: int
    frame: int
    bmi: np.ndarray            # per channel, bits
    ser: np.ndarray            # per channel
    snr_est_db: np.ndarray     # per channel
    loss_a: float
    loss_c: float
    diverged: bool = False


AGGREGATED_METRICS = ("bmi", "ser", "snr_est_db")


def aggregate(records, frames_per_run=100, keep_last=20):
    """Pool the last `keep_last` per-frame estimates of every run and report
    {min, mean, max} per metric (channel-averaged per frame).

    Returns (summary dict, partial flag); partial is set when any run
    contributed fewer than frames_per_run frames.
    """
    by_run = {}
    for r in records:
        by_run.setdefault(r.run, []).append(r)
    partial = False
    pools = {m: [] for m in AGGREGATED_METRICS}
    for run_records in by_run.values():
        run_records = sorted(run_records, key=lambda r: r.frame)
        if len(run_records) < frames_per_run:
            partial = True
        for rec in run_records[-keep_last:]:
            pools["bmi"].append(float(np.mean(rec.bmi)))
            pools["ser"].append(float(np.mean(rec.ser)))
            pools["snr_est_db"].append(float(np.mean(rec.snr_est_db)))
    summary = {}
    for name, vals in pools.items():
        arr = np.asarray(vals, dtype=np.float64)
        finite = arr[np.isfinite(arr)]
        if len(finite) == 0:
            summary[name] = {"min": None, "mean": None, "max": None, "n": 0}
        else:
            summary[name] = {
                "min": float(finite.min()),
                "mean": float(finite.mean()),
                "max": float(finite.max()),
                "n": int(len(arr)),
            }
    return summary, partial
