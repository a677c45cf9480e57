"""Complex N×N butterfly FIR banks (equalizer and channel estimator),
batch-overlap windowing, and a from-scratch Adam optimizer."""

from dataclasses import dataclass, field

import numpy as np
import torch

CDTYPE = torch.complex128


@dataclass
class ButterflyFilterBank:
    """n_ch × n_ch bank of complex FIR tap vectors of odd length M."""

    taps: torch.Tensor       # complex128, shape (n_ch, n_ch, M)
    sps_in: int = 2
    sps_out: int = 1

    def __post_init__(self):
        if self.taps.shape[-1] % 2 == 0:
            raise ValueError("tap count M must be odd")
        if self.taps.shape[0] != self.taps.shape[1]:
            raise ValueError("bank must be square")

    @property
    def n_ch(self):
        return self.taps.shape[0]

    @property
    def n_taps(self):
        return self.taps.shape[-1]

    @property
    def center(self):
        return (self.n_taps - 1) // 2

    def to_bytes(self):
        """Flat little-endian float64 interleaved re/im, row-major [i][j][m]."""
        t = self.taps.detach().cpu().numpy().astype(np.complex128)
        flat = np.empty(t.size * 2, dtype="<f8")
        flat[0::2] = t.real.ravel()
        flat[1::2] = t.imag.ravel()
        return flat.tobytes()

    @classmethod
    def from_bytes(cls, raw, n_ch, n_taps, sps_in=2, sps_out=1):
        flat = np.frombuffer(raw, dtype="<f8")
        if flat.size != n_ch * n_ch * n_taps * 2:
            raise ValueError("byte length does not match bank shape")
        t = (flat[0::2] + 1j * flat[1::2]).reshape(n_ch, n_ch, n_taps)
        return cls(torch.tensor(t, dtype=CDTYPE), sps_in=sps_in, sps_out=sps_out)


def init_bank(n_ch, n_taps, mode="center-spike", sps_in=2, sps_out=1, requires_grad=False):
    """'center-spike': identity bank (diagonal center taps 1); 'zeros': all zero."""
    if n_taps % 2 == 0:
        raise ValueError("tap count M must be odd")
    taps = torch.zeros(n_ch, n_ch, n_taps, dtype=CDTYPE)
    if mode == "center-spike":
        taps[torch.arange(n_ch), torch.arange(n_ch), (n_taps - 1) // 2] = 1.0
    elif mode != "zeros":
        raise ValueError(f"unknown init mode {mode!r}")
    taps.requires_grad_(requires_grad)
    return ButterflyFilterBank(taps, sps_in=sps_in, sps_out=sps_out)


@dataclass
class BatchPlan:
    batch_symbols: int              # N_b: valid output symbols per batch
    frame_symbols: int
    overlap_samples: int = 0        # M-1, informational

    def __post_init__(self):
        if self.frame_symbols % self.batch_symbols != 0:
            raise ValueError("frame must be an integer number of batches")

    @property
    def n_batches(self):
        return self.frame_symbols // self.batch_symbols


def _circ_gather(x, start, length):
    """x[..., start:start+length] with circular wrap (start may be negative)."""
    n = x.shape[-1]
    idx = torch.arange(start, start + length) % n
    return x.index_select(-1, idx)


def equalize_symbols(bank: ButterflyFilterBank, y: torch.Tensor, k0, n_sym):
    """Equalize symbols k0 .. k0+n_sym-1 of the 2-sps frame y (circular).

    Output x[i,k] = sum_{j,m} taps[i,j,m] * y[j, sps*(k0+k) - m + center],
    i.e. a centered T/2-spaced butterfly filter decimated to 1 sps.
    """
    sps = bank.sps_in
    m = bank.n_taps
    c = bank.center
    # samples needed: sps*k0 - c .. sps*(k0+n_sym-1) + c
    seg = _circ_gather(y, sps * k0 - c, sps * (n_sym - 1) + m)
    win = seg.unfold(-1, m, sps)                      # (n_ch, n_sym, m)
    return torch.einsum("ijm,jkm->ik", bank.taps.flip(-1), win)


def equalize_batch(bank: ButterflyFilterBank, y: torch.Tensor, plan: BatchPlan, index):
    """One N_b-symbol batch of the frame; context wraps circularly."""
    if not 0 <= index < plan.n_batches:
        raise ValueError("batch index out of range")
    return equalize_symbols(bank, y, index * plan.batch_symbols, plan.batch_symbols)


def estimate_channel_project(est: ButterflyFilterBank, mean, var=None):
    """Project posterior symbol statistics through the channel estimator.

    mean: (n_ch, n_sym) complex symbol means; var: (n_ch, n_sym) real
    variances or None. Returns (y_hat at sps_out, v_hat at sps_out);
    circular, centered. v_hat uses |taps|^2 since symbols are independent.
    """
    n_ch, n_sym = mean.shape
    if n_ch != est.n_ch:
        raise ValueError("channel count mismatch")
    sps = est.sps_out
    n = n_sym * sps
    up = mean.new_zeros(n_ch, n)
    up[:, ::sps] = mean
    y_hat = _circ_filter(est.taps, up, est.center)
    if var is None:
        return y_hat, None
    var = torch.as_tensor(var)
    if var.shape != mean.shape:
        raise ValueError("variance shape mismatch")
    upv = var.new_zeros(n_ch, n)
    upv[:, ::sps] = var
    v_hat = _circ_filter(torch.abs(est.taps) ** 2, upv, est.center)
    return y_hat, v_hat


def _circ_filter(taps, x, center):
    """out[i,l] = sum_{j,m} taps[i,j,m] * x[j, l-m+center], circular."""
    m = taps.shape[-1]
    seg = _circ_gather(x, -center, x.shape[-1] + m - 1)
    win = seg.unfold(-1, m, 1)
    return torch.einsum("ijm,jkm->ik", taps.flip(-1), win)


class AdamState:
    """Bias-corrected Adam; complex tensors update as independent re/im pairs."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [torch.zeros_like(self._real_view(p)) for p in self.params]
        self.v = [torch.zeros_like(self._real_view(p)) for p in self.params]

    @staticmethod
    def _real_view(t):
        return torch.view_as_real(t) if t.is_complex() else t


def adam_step(grads, state: AdamState):
    """One in-place Adam update of state.params given matching gradients."""
    if len(grads) != len(state.params):
        raise ValueError("gradient count mismatch")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    with torch.no_grad():
        for p, g, m, v in zip(state.params, grads, state.m, state.v):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            gr = state._real_view(torch.as_tensor(g))
            m.mul_(b1).add_(gr, alpha=1 - b1)
            v.mul_(b2).addcmul_(gr, gr, value=1 - b2)
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            state._real_view(p).sub_(state.lr * m_hat / (torch.sqrt(v_hat) + state.eps))
    return state
