"""Constellations, bit mapping, and root-raised-cosine pulse shaping."""

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_QAM_ORDERS = (4, 16, 64, 256)


@dataclass
class Constellation:
    """Discrete modulation alphabet with Gray bit labels and symbol priors.

    Points are normalized to unit average energy under the prior.
    """

    points: np.ndarray            # complex128, shape (order,)
    labels: np.ndarray            # uint8, shape (order, m)
    prior: np.ndarray             # float64, shape (order,)
    bits_per_symbol: int
    # per-axis amplitude levels of a square grid (sorted ascending), or None
    axis_levels: np.ndarray | None = None
    _label_to_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = self.bits_per_symbol
        ints = label_ints(self.labels)
        if len(set(ints.tolist())) != len(self.points):
            raise ValueError("labels must be a bijection onto the points")
        lut = np.full(2 ** m, -1, dtype=np.int64)
        lut[ints] = np.arange(len(self.points))
        self._label_to_index = lut

    @property
    def order(self):
        return len(self.points)

    def index_of_labels(self, bit_groups):
        """Map m-bit rows to point indices."""
        return self._label_to_index[label_ints(np.asarray(bit_groups, dtype=np.uint8))]

    def nearest(self, z):
        """Indices of the nearest constellation points to samples z."""
        z = np.asarray(z)
        if self.axis_levels is not None:
            return self._grid_nearest_np(z)
        d = np.abs(z[..., None] - self.points)
        return np.argmin(d, axis=-1)

    def _grid_nearest_np(self, z):
        lv = self.axis_levels
        i = np.clip(np.searchsorted(0.5 * (lv[:-1] + lv[1:]), z.real), 0, len(lv) - 1)
        q = np.clip(np.searchsorted(0.5 * (lv[:-1] + lv[1:]), z.imag), 0, len(lv) - 1)
        pts = lv[i] + 1j * lv[q]
        # map the grid point back to its index in `points`
        d = np.abs(pts[..., None] - self.points)
        return np.argmin(d, axis=-1)


def label_ints(labels):
    """Pack bit rows (…, m) into integers, MSB first."""
    m = labels.shape[-1]
    weights = 1 << np.arange(m - 1, -1, -1)
    return (labels.astype(np.int64) @ weights).astype(np.int64)


def _gray(n):
    return n ^ (n >> 1)


def make_qam(order, prior=None):
    """Unit-energy Gray-labeled square QAM constellation.

    The first m/2 label bits select the in-phase level, the last m/2 the
    quadrature level, each via a reflected binary (Gray) code.
    """
    if order not in SUPPORTED_QAM_ORDERS:
        raise ValueError(
            f"unsupported QAM order {order}; square orders {SUPPORTED_QAM_ORDERS} only"
        )
    m = int(np.log2(order))
    k = m // 2                       # bits per axis
    n_axis = 1 << k
    levels = np.arange(-(n_axis - 1), n_axis, 2, dtype=np.float64)

    points = np.empty(order, dtype=np.complex128)
    labels = np.empty((order, m), dtype=np.uint8)
    idx = 0
    for gi in range(n_axis):
        for gq in range(n_axis):
            # gi/gq are the Gray codewords; invert to the level index
            points[idx] = levels[_gray_inverse(gi, n_axis)] + 1j * levels[_gray_inverse(gq, n_axis)]
            bits = [(gi >> (k - 1 - b)) & 1 for b in range(k)]
            bits += [(gq >> (k - 1 - b)) & 1 for b in range(k)]
            labels[idx] = bits
            idx += 1

    if prior is None:
        prior = np.full(order, 1.0 / order)
    else:
        prior = np.asarray(prior, dtype=np.float64)
        if prior.shape != (order,):
            raise ValueError(f"prior must have {order} entries")
        if abs(prior.sum() - 1.0) > 1e-12:
            raise ValueError("prior must sum to 1")

    scale = 1.0 / np.sqrt(np.sum(prior * np.abs(points) ** 2))
    points = points * scale
    return Constellation(
        points=points,
        labels=labels,
        prior=prior,
        bits_per_symbol=m,
        axis_levels=np.unique(points.real),
    )


def _gray_inverse(g, n):
    for i in range(n):
        if _gray(i) == g:
            return i
    raise AssertionError


@dataclass
class ComplexSequence:
    """Multi-channel complex baseband buffer at a declared oversampling rate."""

    data: np.ndarray     # complex128, shape (channels, length)
    sps: int = 1

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.complex128))
        if self.sps < 1:
            raise ValueError("sps must be >= 1")
        if self.data.shape[1] % self.sps != 0:
            raise ValueError("length must be an integer multiple of sps")

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_symbols(self):
        return self.data.shape[1] // self.sps


@dataclass
class RrcFilter:
    rolloff: float
    span: int            # filter length in symbols
    sps: int
    taps: np.ndarray     # float64, unit energy

    @property
    def center(self):
        return (len(self.taps) - 1) // 2


def rrc_taps(rolloff, span, sps):
    """Root-raised-cosine filter, unit energy, length span*sps+1 (odd).

    The removable singularities at t=0 and |t|=1/(4*rolloff) use their
    analytic limits; rolloff=0 degenerates to the sinc pulse.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ValueError("rolloff must be in [0, 1]")
    if span % 2 != 0 or span <= 0:
        raise ValueError("span must be a positive even number of symbols")
    if sps < 2:
        raise ValueError("sps must be >= 2")
    t = np.arange(-span * sps // 2, span * sps // 2 + 1, dtype=np.float64) / sps
    b = rolloff
    if b == 0.0:
        h = np.sinc(t)
    else:
        h = np.empty_like(t)
        sing = np.isclose(np.abs(t), 1.0 / (4.0 * b))
        zero = np.isclose(t, 0.0)
        reg = ~(sing | zero)
        tr = t[reg]
        num = np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))
        den = np.pi * tr * (1 - (4 * b * tr) ** 2)
        h[reg] = num / den
        h[zero] = 1.0 + b * (4.0 / np.pi - 1.0)
        h[sing] = (b / np.sqrt(2.0)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
            + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
        )
    h = h / np.linalg.norm(h)
    return RrcFilter(rolloff=rolloff, span=span, sps=sps, taps=h)


def map_bits(bits, const: Constellation):
    """Map a flat bit stream (or one row per channel) to symbols, sps=1."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    m = const.bits_per_symbol
    if bits.shape[1] % m != 0:
        raise ValueError(f"bit count must be divisible by {m}")
    groups = bits.reshape(bits.shape[0], -1, m)
    idx = const.index_of_labels(groups)
    if np.any(idx < 0):
        raise ValueError("bit pattern without a labeled point")
    return ComplexSequence(const.points[idx], sps=1)


def circular_convolve(x, taps, center):
    """Circular same-length convolution with the tap of index `center` at lag 0."""
    n = x.shape[-1]
    h = np.zeros(n, dtype=np.float64 if np.isrealobj(taps) else np.complex128)
    for k, tap in enumerate(taps):
        h[(k - center) % n] += tap
    return np.fft.ifft(np.fft.fft(x, axis=-1) * np.fft.fft(h), axis=-1)


def upsample_and_shape(symbols: ComplexSequence, f: RrcFilter):
    """Zero-insertion upsampling to f.sps followed by circular RRC shaping.

    The filter is applied centered, so symbol k sits at sample f.sps*k.
    """
    if symbols.sps != 1:
        raise ValueError("expected a symbol-rate (sps=1) input")
    sps = f.sps
    n_ch, n_sym = symbols.data.shape
    up = np.zeros((n_ch, n_sym * sps), dtype=np.complex128)
    up[:, ::sps] = symbols.data
    out = circular_convolve(up, f.taps, f.center)
    return ComplexSequence(out, sps=sps)
