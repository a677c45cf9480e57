"""Blind phase search carrier recovery: hard, and differentiable via a
softmax-with-temperature surrogate for the angle selection."""

from dataclasses import dataclass, field

import numpy as np
import torch

from .signal import Constellation


@dataclass
class BpsConfig:
    angles_per_quadrant: int = 40
    temperature: float = 0.01
    window_len: int = 65            # odd

    def __post_init__(self):
        if self.window_len % 2 == 0 or self.window_len < 1:
            raise ValueError("window_len must be odd and positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.angles_per_quadrant < 1:
            raise ValueError("need at least one test angle per quadrant")

    @property
    def test_angles(self):
        """B angles uniformly spanning [-pi/4, pi/4), spacing (pi/2)/B."""
        b = self.angles_per_quadrant
        return -np.pi / 4 + np.arange(b) * (np.pi / 2) / b

    @property
    def grid_spacing(self):
        return (np.pi / 2) / self.angles_per_quadrant

    @property
    def window(self):
        """Triangular weights, symmetric, peak at center, sum 1."""
        n = self.window_len
        w = 1.0 - np.abs(np.arange(n) - (n - 1) / 2) / ((n + 1) / 2)
        return w / w.sum()


@dataclass
class PhaseTrack:
    """Per-symbol phase estimates for one or more channels."""

    raw: torch.Tensor                  # selected grid angle, (n_ch, n_sym)
    phase: torch.Tensor                # unwrapped; straight-through in soft mode
    weights: torch.Tensor | None = None  # softmax selection weights, soft mode
    soft_phase: torch.Tensor | None = None  # fully-soft forward value, soft mode


def _torch_points(c: Constellation, like):
    return torch.as_tensor(c.points, dtype=like.dtype, device=like.device)


def _nearest(z, c: Constellation):
    """Hard decision, detached (piecewise constant in z)."""
    with torch.no_grad():
        if c.axis_levels is not None:
            lv = torch.as_tensor(c.axis_levels, dtype=torch.float64)
            edges = 0.5 * (lv[:-1] + lv[1:])
            i = torch.bucketize(z.real.contiguous(), edges).clamp(0, len(lv) - 1)
            q = torch.bucketize(z.imag.contiguous(), edges).clamp(0, len(lv) - 1)
            return lv[i] + 1j * lv[q]
        pts = _torch_points(c, z)
        idx = torch.argmin(torch.abs(z.unsqueeze(-1) - pts), dim=-1)
        return pts[idx]


def bps_distances(x, c: Constellation, cfg: BpsConfig):
    """Triangular-smoothed decision distances per symbol and test angle.

    x: (n_ch, n_sym) complex at symbol rate. Returns (n_ch, n_sym, B) real;
    the window wraps circularly at the edges. Differentiable in x (the hard
    decision itself is treated as constant).
    """
    angles = torch.as_tensor(cfg.test_angles, dtype=torch.float64)
    rot = torch.exp(-1j * angles).to(x.dtype)
    z = x.unsqueeze(-1) * rot                       # (n_ch, n_sym, B)
    d = torch.abs(z - _nearest(z, c)) ** 2
    return _smooth_circular(d, cfg)


def _smooth_circular(d, cfg: BpsConfig):
    w = torch.as_tensor(cfg.window, dtype=d.dtype)
    n = d.shape[1]
    half = (cfg.window_len - 1) // 2
    idx = (torch.arange(-half, n + half)) % n
    ext = d[:, idx, :]                              # (n_ch, n+2*half, B)
    ext = ext.permute(0, 2, 1).reshape(-1, 1, n + 2 * half)
    out = torch.nn.functional.conv1d(ext, w.view(1, 1, -1))
    return out.reshape(d.shape[0], d.shape[2], n).permute(0, 2, 1)


def bps_select_hard(metrics, cfg: BpsConfig, prev_phase=None, anchor=0):
    """Per-symbol argmin over test angles (ties to the smaller index), unwrapped."""
    with torch.no_grad():
        idx = torch.argmin(metrics, dim=-1)
        angles = torch.as_tensor(cfg.test_angles, dtype=torch.float64)
        raw = angles[idx]
        return PhaseTrack(raw=raw, phase=unwrap(raw, prev_phase, anchor))


def bps_select_soft(metrics, cfg: BpsConfig, prev_phase=None, anchor=0):
    """Straight-through selection: hard forward value, soft backward path.

    The backward path carries softmax(-d/T) weights and the weighted-angle
    estimate phi_soft; gradients of downstream losses flow through phi_soft.
    """
    angles = torch.as_tensor(cfg.test_angles, dtype=torch.float64)
    weights = torch.softmax(-metrics / cfg.temperature, dim=-1)
    phi_soft = torch.sum(weights * angles, dim=-1)
    with torch.no_grad():
        idx = torch.argmin(metrics, dim=-1)
        raw = angles[idx]
        hard = unwrap(raw, prev_phase, anchor)
        # wrap-count offset between the hard forward value and the soft angle
        shift = hard - raw
    soft = phi_soft + shift
    phase = soft + (hard - soft).detach()
    return PhaseTrack(raw=raw, phase=phase, weights=weights, soft_phase=soft)


def unwrap(raw, prev=None, anchor=0):
    """Resolve the pi/2 ambiguity: add multiples of pi/2 per symbol so that
    consecutive phases stay close; `prev` anchors the symbol at index
    `anchor` (the first truly-contiguous one when leading context symbols
    were gathered circularly)."""
    raw = torch.as_tensor(raw)
    period = np.pi / 2
    steps = torch.round((raw[..., :-1] - raw[..., 1:]) / period)
    offsets = torch.zeros_like(raw)
    offsets[..., 1:] = period * torch.cumsum(steps, dim=-1)
    out = raw + offsets
    if prev is not None:
        prev = torch.as_tensor(prev, dtype=raw.dtype)
        first = period * torch.round((prev - out[..., anchor]) / period)
        out = out + first.unsqueeze(-1)
    return out


def apply_cpr(x, track: PhaseTrack):
    """Rotate each symbol by its negative estimated phase."""
    if x.shape != track.phase.shape:
        raise ValueError("length mismatch between signal and phase track")
    return x * torch.exp(-1j * track.phase)
