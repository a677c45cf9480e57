"""Simulated multi-core dual-polarization link: PMD, residual CD, polarization
rotation, channel permutation, Wiener phase noise, and AWGN."""

from dataclasses import dataclass, field

import numpy as np

from .signal import ComplexSequence


@dataclass
class CoreChannelParams:
    gamma_hv: float          # polarization rotation angle, rad
    tau_pmd: float           # differential group delay, s
    beta_cd_L: float         # accumulated dispersion, s^2
    symbol_rate: float       # baud

    def __post_init__(self):
        if self.tau_pmd < 0:
            raise ValueError("tau_pmd must be >= 0")
        if self.symbol_rate <= 0:
            raise ValueError("symbol_rate must be > 0")


@dataclass
class PhaseNoiseParams:
    linewidth_hz: float
    symbol_rate: float

    @property
    def per_symbol_variance(self):
        """Wiener increment variance per symbol: 2*pi*linewidth/R_S."""
        return 2.0 * np.pi * self.linewidth_hz / self.symbol_rate


@dataclass
class LinkConfig:
    cores: int
    core_params: list          # CoreChannelParams per core
    permutation: np.ndarray    # bijection on 2*cores channel indices
    snr_db: float
    phase_noise: PhaseNoiseParams
    seed: int = 0

    def __post_init__(self):
        self.permutation = np.asarray(self.permutation, dtype=np.int64)
        n = 2 * self.cores
        if sorted(self.permutation.tolist()) != list(range(n)):
            raise ValueError("permutation must be a bijection on channel indices")
        if len(self.core_params) != self.cores:
            raise ValueError("need one CoreChannelParams per core")


def random_permutation(n_channels, rng):
    return rng.permutation(n_channels)


def core_frequency_response(p: CoreChannelParams, f):
    """2x2 channel matrix H(f) per frequency: rotation * PMD diagonal * CD phase.

    Returns shape (len(f), 2, 2); unitary at every frequency by construction.
    """
    f = np.asarray(f, dtype=np.float64)
    c, s = np.cos(p.gamma_hv), np.sin(p.gamma_hv)
    rot = np.array([[c, -s], [s, c]], dtype=np.complex128)
    pmd = np.exp(1j * np.pi * p.tau_pmd * f)
    cd = np.exp(-2j * np.pi ** 2 * p.beta_cd_L * f ** 2)
    h = np.zeros((len(f), 2, 2), dtype=np.complex128)
    h[:, 0, 0] = pmd
    h[:, 1, 1] = np.conj(pmd)
    return (rot[None, :, :] @ h) * cd[:, None, None]


def wiener_phase(n, var_per_sample, rng, start=None):
    """Random-walk phase: uniform start (or given), Gaussian increments."""
    if var_per_sample < 0:
        raise ValueError("variance must be >= 0")
    inc = rng.normal(0.0, np.sqrt(var_per_sample), size=n)
    phi0 = rng.uniform(0.0, 2.0 * np.pi) if start is None else start
    inc[0] = 0.0 if start is None else inc[0]
    return phi0 + np.cumsum(inc)


def awgn(x: ComplexSequence, snr_db, rng):
    """Add circular complex Gaussian noise per channel at the given SNR.

    The per-channel signal power is measured, not assumed.
    """
    if x.data.size == 0:
        raise ValueError("empty input")
    p_sig = np.mean(np.abs(x.data) ** 2, axis=1)
    n_var = p_sig * 10.0 ** (-snr_db / 10.0)
    sigma = np.sqrt(n_var / 2.0)[:, None]
    noise = sigma * (rng.standard_normal(x.data.shape) + 1j * rng.standard_normal(x.data.shape))
    return ComplexSequence(x.data + noise, sps=x.sps)


class LinkSimulator:
    """Streaming link model; Wiener phase state persists across frames."""

    def __init__(self, cfg: LinkConfig, rng=None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self._phase_state = [None] * (2 * cfg.cores)

    def transmit(self, tx: ComplexSequence):
        cfg = self.cfg
        n_ch = 2 * cfg.cores
        if tx.n_channels != n_ch:
            raise ValueError(f"expected {n_ch} channels, got {tx.n_channels}")
        sps = tx.sps
        n = tx.data.shape[1]

        # carrier phase noise enters at the transmit laser, per channel,
        # ahead of the channel matrix: the end-to-end inverse then factors
        # into static butterfly taps and one phase track per output
        var_per_sample = cfg.phase_noise.per_symbol_variance / sps
        self.last_phase = np.empty((n_ch, n))
        rotated = np.empty_like(tx.data)
        for ch in range(n_ch):
            start = self._phase_state[ch]
            if start is None and cfg.phase_noise.linewidth_hz == 0:
                start = 0.0          # a zero-linewidth laser is a phase reference
            phi = wiener_phase(n, var_per_sample, self.rng, start=start)
            self._phase_state[ch] = phi[-1]
            self.last_phase[ch] = phi
            rotated[ch] = tx.data[ch] * np.exp(1j * phi)

        out = np.empty_like(tx.data)
        for core in range(cfg.cores):
            p = cfg.core_params[core]
            f = np.fft.fftfreq(n, d=1.0 / (sps * p.symbol_rate))
            h = core_frequency_response(p, f)             # (n, 2, 2)
            pair = rotated[2 * core:2 * core + 2]
            spec = np.fft.fft(pair, axis=1)
            mixed = np.einsum("fij,jf->if", h, spec)
            out[2 * core:2 * core + 2] = np.fft.ifft(mixed, axis=1)

        out = out[cfg.permutation]

        return awgn(ComplexSequence(out, sps=sps), cfg.snr_db, self.rng)


def apply_link(tx: ComplexSequence, cfg: LinkConfig):
    """One-shot transmission through a freshly seeded link."""
    return LinkSimulator(cfg).transmit(tx)
