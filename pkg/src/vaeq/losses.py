"""Soft demapping and training objectives: the two-term variational loss
(KL against the prior + expected reconstruction MSE), its phase-rotated
variant for in-loop carrier recovery, the constant-modulus loss, and the
pilot-aided pre-convergence loss."""

from dataclasses import dataclass

import numpy as np
import torch

from . import cpr as cpr_mod
from .butterfly import ButterflyFilterBank, equalize_symbols, estimate_channel_project
from .signal import Constellation

VARIANTS = ("plain", "trailing_cpr", "trained_cpr", "cm")


@dataclass
class PosteriorGrid:
    """Per-channel, per-symbol categorical posterior over constellation points."""

    q: torch.Tensor          # (n_ch, n_sym, order) real
    mean: torch.Tensor       # (n_ch, n_sym) complex
    var: torch.Tensor        # (n_ch, n_sym) real
    llrs: torch.Tensor       # (n_ch, n_sym, m) real, ln(P(b=0)/P(b=1))
    log_q: torch.Tensor | None = None


@dataclass
class LossBreakdown:
    kl: float                         # A, nats
    recon: float                      # C, signal-power units
    total: float
    recon_per_channel: np.ndarray     # for SNR estimation


def soft_demap(x, c: Constellation, noise_var):
    """Gaussian posterior with the constellation prior.

    q_n(c) ∝ prior(c) * exp(-|x_n - c|^2 / noise_var); LLRs come from the
    same categorical via log-sums over the bit cosets. Differentiable in x.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be > 0")
    x = torch.as_tensor(x)
    pts = torch.as_tensor(c.points, dtype=x.dtype)
    prior = torch.as_tensor(c.prior, dtype=torch.float64)
    logits = torch.log(prior) - torch.abs(x.unsqueeze(-1) - pts) ** 2 / noise_var
    logits = logits - logits.max(dim=-1, keepdim=True).values
    logq = logits - torch.logsumexp(logits, dim=-1, keepdim=True)
    q = torch.exp(logq)
    mean = torch.sum(q * pts, dim=-1)
    var = torch.sum(q * torch.abs(pts) ** 2, dim=-1) - torch.abs(mean) ** 2
    labels = torch.as_tensor(np.asarray(c.labels, dtype=np.float64))
    llrs = torch.stack(
        [
            torch.logsumexp(logq.masked_fill(labels[:, b] > 0.5, -torch.inf), dim=-1)
            - torch.logsumexp(logq.masked_fill(labels[:, b] < 0.5, -torch.inf), dim=-1)
            for b in range(c.bits_per_symbol)
        ],
        dim=-1,
    )
    return PosteriorGrid(q=q, mean=mean, var=var, llrs=llrs, log_q=logq)


def kl_term_A(grid: PosteriorGrid, c: Constellation):
    """Relative entropy sum_n D(q_n || prior), in nats, over all channels."""
    prior = torch.as_tensor(c.prior, dtype=torch.float64)
    q = grid.q
    if grid.log_q is not None:
        # q*log q via the softmax log-probabilities: 0*log 0 -> 0 with a
        # finite gradient (where() would leak NaN through the dead branch)
        return torch.sum(q * (grid.log_q - torch.log(prior)))
    ratio = torch.where(q > 0, torch.log(q.clamp_min(1e-300) / prior), torch.zeros_like(q))
    return torch.sum(q * ratio)


def recon_term_C(y, est: ButterflyFilterBank, grid: PosteriorGrid, phase=None, guard=0):
    """Expected reconstruction MSE between y and the projected signal.

    With mu' = mu * exp(-j*phase) (phase per symbol, zero if absent) and the
    rotation-invariant variance, C = sum |y - y_hat|^2 + v_hat. `guard`
    symbols at each end are excluded from the sum (their projection depends
    on context outside the slice). Returns (C, per-channel C tensor).
    """
    mean = grid.mean
    if phase is not None:
        phase = torch.as_tensor(phase)
        if phase.shape[-1] != mean.shape[-1]:
            raise ValueError("phase length must equal the symbol count")
        mean = mean * torch.exp(-1j * phase)
    y_hat, v_hat = estimate_channel_project(est, mean, grid.var)
    if y.shape != y_hat.shape:
        raise ValueError("received slice and projection must have equal shape")
    sl = slice(guard * est.sps_out, y.shape[-1] - guard * est.sps_out)
    per_ch = torch.sum(torch.abs(y[:, sl] - y_hat[:, sl]) ** 2 + v_hat[:, sl], dim=-1)
    return torch.sum(per_ch), per_ch


def cm_loss(x, c: Constellation):
    """Constant-modulus (Godard) loss with radius R = E|c|^4 / E|c|^2."""
    r = godard_radius(c)
    return torch.sum((torch.abs(torch.as_tensor(x)) ** 2 - r) ** 2)


def godard_radius(c: Constellation):
    p2 = np.sum(c.prior * np.abs(c.points) ** 2)
    p4 = np.sum(c.prior * np.abs(c.points) ** 4)
    return p4 / p2


def pilot_mse_loss(x, pilots):
    """Pilot MSE with closed-form supervised phase recovery per channel.

    theta_hat = arg(sum x * conj(pilot)) is held constant for gradients;
    loss = sum |x * exp(-j*theta_hat) - pilot|^2. Returns (loss, theta_hat).
    """
    x = torch.as_tensor(x)
    pilots = torch.as_tensor(pilots, dtype=x.dtype)
    if x.shape != pilots.shape:
        raise ValueError("pilot length must equal the batch length")
    with torch.no_grad():
        corr = torch.sum(x * torch.conj(pilots), dim=-1)
        theta = torch.where(torch.abs(corr) > 0, torch.angle(corr), torch.zeros_like(corr.real))
    rot = torch.exp(-1j * theta).unsqueeze(-1)
    loss = torch.sum(torch.abs(x * rot - pilots) ** 2)
    return loss, theta


@dataclass
class VaeLossResult:
    breakdown: LossBreakdown
    loss: torch.Tensor               # differentiable scalar
    grid: PosteriorGrid              # q entering the loss
    eval_grid: PosteriorGrid         # q-tilde used for evaluation (may be grid)
    x_eq: torch.Tensor               # equalized symbols (valid region)
    phase: torch.Tensor | None       # unwrapped CPR track (valid region)


def vae_loss(
    y,
    bank_eq: ButterflyFilterBank,
    bank_est: ButterflyFilterBank,
    c: Constellation,
    noise_var,
    variant="plain",
    cpr_cfg: "cpr_mod.BpsConfig | None" = None,
    k0=0,
    n_sym=None,
    guard=0,
    prev_phase=None,
    soft_forward=False,
):
    """Evaluate one batch of the variational loss L = A + C on frame y.

    y is the full 2-sps frame (circular); the batch covers symbols
    k0 .. k0+n_sym-1 plus `guard` context symbols on each side whose A/C
    contributions are discarded. Variants:

    - "plain": q from the equalized signal directly, no phase handling.
    - "trailing_cpr": identical loss and update path; additionally runs a
      hard (non-differentiable) phase search on the output and reports the
      phase-corrected posterior for evaluation only.
    - "trained_cpr": differentiable phase search inside the loss; q is
      demapped from the de-rotated signal and the projection re-applies the
      estimated phase so the estimator does not have to learn it.

    With soft_forward=True the trained CPR uses the softened angle in the
    forward pass as well (instead of straight-through); used for gradient
    verification against finite differences.
    """
    if variant not in ("plain", "trailing_cpr", "trained_cpr"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant in ("trailing_cpr", "trained_cpr") and cpr_cfg is None:
        raise ValueError(f"variant {variant!r} requires a BPS configuration")
    y = torch.as_tensor(y)
    if n_sym is None:
        n_sym = y.shape[-1] // bank_eq.sps_in
    n_ext = n_sym + 2 * guard
    x_eq = equalize_symbols(bank_eq, y, k0 - guard, n_ext)
    y_ctx = _circ_slice(y, bank_eq.sps_in * (k0 - guard), bank_eq.sps_in * n_ext)
    valid = slice(guard, guard + n_sym)

    phase = None
    track = None
    # anchor the unwrap past the symbols contaminated by the per-frame
    # circular wrap of the equalizer (tap half-span) and by the smoothing
    # window, so a whole-frame phase drift cannot misresolve the pi/2 pin
    if cpr_cfg is not None:
        edge = -((1 - bank_eq.n_taps) // 2) // bank_eq.sps_in + 1
        edge += (cpr_cfg.window_len - 1) // 2
        anchor = min(guard + edge, guard + n_sym - 1)
    if variant == "trained_cpr":
        metrics = cpr_mod.bps_distances(x_eq, c, cpr_cfg)
        track = cpr_mod.bps_select_soft(metrics, cpr_cfg, prev_phase=prev_phase,
                                        anchor=anchor)
        phase = track.soft_phase if soft_forward else track.phase
        grid = soft_demap(x_eq * torch.exp(-1j * phase), c, noise_var)
        # the projection must re-apply the phase the CPR removed
        c_total, c_per_ch = recon_term_C(y_ctx, bank_est, grid, phase=-phase, guard=guard)
    else:
        grid = soft_demap(x_eq, c, noise_var)
        c_total, c_per_ch = recon_term_C(y_ctx, bank_est, grid, guard=guard)

    valid_grid = _slice_grid(grid, valid)
    a = kl_term_A(valid_grid, c)
    # Gaussian-likelihood reconstruction with the per-channel ML noise
    # variance C/N profiled out: N*ln(C/N) per channel. The raw sum A+C is
    # scale-inconsistent (KL in nats vs MSE near the noise floor) and the
    # KL term swamps it.
    n_valid = float(bank_eq.sps_in * n_sym)
    loss = a + n_valid * torch.sum(torch.log(c_per_ch.clamp_min(1e-300) / n_valid))

    if variant == "trailing_cpr":
        with torch.no_grad():
            metrics = cpr_mod.bps_distances(x_eq, c, cpr_cfg)
            track = cpr_mod.bps_select_hard(metrics, cpr_cfg, prev_phase=prev_phase,
                                            anchor=anchor)
            eval_grid = _slice_grid(
                soft_demap(cpr_mod.apply_cpr(x_eq, track), c, noise_var), valid
            )
    else:
        eval_grid = valid_grid

    a_val = float(a.detach())
    c_val = float(c_total.detach())
    breakdown = LossBreakdown(
        kl=a_val,
        recon=c_val,
        total=a_val + c_val,
        recon_per_channel=c_per_ch.detach().cpu().numpy(),
    )
    return VaeLossResult(
        breakdown=breakdown,
        loss=loss,
        grid=valid_grid,
        eval_grid=eval_grid,
        x_eq=x_eq[:, valid].detach(),
        phase=None if track is None else track.phase[:, valid].detach(),
    )


def _slice_grid(grid: PosteriorGrid, sl):
    return PosteriorGrid(
        q=grid.q[:, sl], mean=grid.mean[:, sl], var=grid.var[:, sl],
        llrs=grid.llrs[:, sl],
        log_q=None if grid.log_q is None else grid.log_q[:, sl],
    )


def _circ_slice(y, start, length):
    idx = torch.arange(start, start + length) % y.shape[-1]
    return y.index_select(-1, idx)
