"""Binary IQ capture files: little-endian float64 interleaved re/im,
channel-major blocks, with a self-describing text header alongside."""

import os

import numpy as np

from .signal import ComplexSequence

HEADER_SUFFIX = ".hdr"
BITS_SUFFIX = ".bits"


def save_iq(path, seq: ComplexSequence, bits=None):
    """Write samples plus header; optional transmit-bits sidecar (uint8)."""
    data = seq.data
    flat = np.empty(data.size * 2, dtype="<f8")
    flat[0::2] = data.real.ravel()
    flat[1::2] = data.imag.ravel()
    with open(path, "wb") as fh:
        fh.write(flat.tobytes())
    header = {
        "format": "f64le_interleaved_channel_major",
        "channels": data.shape[0],
        "samples_per_channel": data.shape[1],
        "sps": seq.sps,
    }
    with open(path + HEADER_SUFFIX, "w") as fh:
        for k, v in header.items():
            fh.write(f"{k}={v}\n")
    if bits is not None:
        np.asarray(bits, dtype=np.uint8).tofile(path + BITS_SUFFIX)


def read_header(path):
    meta = {}
    with open(path + HEADER_SUFFIX) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    for key in ("channels", "samples_per_channel", "sps"):
        if key in meta:
            meta[key] = int(meta[key])
    return meta


def ingest_iq(path, meta=None):
    """Load a capture; returns (ComplexSequence, bits or None).

    meta overrides/replaces the header file; it must declare at least
    `channels` and `sps`. Malformed files are rejected with byte offsets.
    """
    if meta is None:
        if not os.path.exists(path + HEADER_SUFFIX):
            raise FileNotFoundError(f"no header file {path + HEADER_SUFFIX} and no meta given")
        meta = read_header(path)
    channels = int(meta["channels"])
    sps = int(meta["sps"])
    size = os.path.getsize(path)
    unit = channels * 8 * 2
    if size % unit != 0:
        raise ValueError(
            f"{path}: size {size} bytes is not divisible by "
            f"channels*16 = {unit} (trailing {size % unit} bytes)"
        )
    flat = np.fromfile(path, dtype="<f8")
    samples = flat.size // (2 * channels)
    if "samples_per_channel" in meta and meta["samples_per_channel"] != samples:
        raise ValueError(
            f"{path}: header declares {meta['samples_per_channel']} samples/channel, "
            f"file holds {samples}"
        )
    data = (flat[0::2] + 1j * flat[1::2]).reshape(channels, samples)
    seq = ComplexSequence(data, sps=sps)
    bits = None
    if os.path.exists(path + BITS_SUFFIX):
        bits = np.fromfile(path + BITS_SUFFIX, dtype=np.uint8)
        if bits.size % channels != 0:
            raise ValueError(f"{path + BITS_SUFFIX}: bit count not divisible by channel count")
        bits = bits.reshape(channels, -1)
    return seq, bits
