"""Experiment runner: configuration, run orchestration (pilot pre-convergence,
blind adaptation, per-frame scoring), linewidth sweeps, and result emission."""

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from . import defaults
from .butterfly import (AdamState, BatchPlan, adam_step, equalize_symbols,
                        estimate_channel_project, init_bank)
from .channel import CoreChannelParams, LinkConfig, LinkSimulator, PhaseNoiseParams
from .cpr import BpsConfig, apply_cpr, bps_distances, bps_select_hard
from .iqfile import ingest_iq
from .losses import cm_loss, pilot_mse_loss, soft_demap, vae_loss
from .metrics import RunRecord, aggregate, align, bmi, ser, snr_est
from .signal import make_qam, map_bits, rrc_taps, upsample_and_shape

VARIANTS = ("plain", "trailing_cpr", "trained_cpr", "cm")


@dataclass
class ExperimentConfig:
    variant: str = "trained_cpr"
    qam_order: int = 64
    symbol_rate_baud: float = 90e9
    sps: int = 2
    rolloff: float = 0.2
    rrc_span: int = 32

    cores: int = 4
    gamma_hv_rad: float = np.pi / 10
    tau_pmd_s: float = np.sqrt(1000.0) * 0.1e-12
    beta_cd_l_s2: float = -26e-24 * 2
    linewidth_hz: float = 1e6
    snr_db: float = 25.0

    m_eq: int = 51
    m_est: int = 51
    n_b: int = 500
    n_cpr: int = 65
    bps_angles: int = 40
    bps_temperature: float = 0.01

    lr: float = -1.0                 # <0: use the committed per-variant default
    est_lr: float = -1.0             # channel-estimator Adam rate
    preconv_lr: float = -1.0
    preconv_passes: int = 6          # epochs over the single pilot frame
    lr_decay: float = -1.0           # per-frame multiplier on both Adam rates
    lr_floor: float = -1.0           # decay stops at this fraction of the start rate

    frames: int = 100
    frame_symbols: int = 10000
    preconv_symbols: int = 10000
    runs: int = 10
    base_seed: int = 0
    demap_var: float = -1.0          # <0: true channel noise variance
    demap_adapt: bool = True         # track the demapper scale from the C-term

    iq_file: str = ""
    out_dir: str = "out"
    workers: int = 1
    dump_diagnostics: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        for name in ("qam_order", "cores", "m_eq", "m_est", "n_b", "n_cpr",
                     "bps_angles", "frames", "frame_symbols", "preconv_symbols",
                     "runs", "sps", "rrc_span"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.frame_symbols % self.n_b or self.preconv_symbols % self.n_b:
            raise ValueError("frame_symbols and preconv_symbols must be multiples of n_b")

    @property
    def n_channels(self):
        return 2 * self.cores

    @property
    def blind_lr(self):
        return self.lr if self.lr > 0 else defaults.BLIND_LR[self.variant]

    @property
    def estimator_lr(self):
        return self.est_lr if self.est_lr > 0 else defaults.EST_LR

    @property
    def pilot_lr(self):
        return self.preconv_lr if self.preconv_lr > 0 else defaults.PRECONV_LR

    @property
    def demap_noise_var(self):
        return self.demap_var if self.demap_var > 0 else 10.0 ** (-self.snr_db / 10.0)

    @property
    def rate_decay(self):
        return self.lr_decay if self.lr_decay > 0 else defaults.LR_DECAY

    @property
    def rate_floor(self):
        return self.lr_floor if self.lr_floor > 0 else defaults.LR_FLOOR

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={v!r}" if isinstance(v, str) else f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults_map = {f.name: f.default for f in dataclasses.fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            proto = defaults_map[key]
            if isinstance(proto, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(proto, int):
                kwargs[key] = int(raw)
            elif isinstance(proto, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip("'\"")
        return cls(**kwargs)

    def content_hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


@dataclass
class Frame:
    y: np.ndarray                    # (n_ch, sps*n_symbols) received samples
    tx_indices: np.ndarray | None    # (n_ch, n_symbols) constellation indices
    tx_bits: np.ndarray | None       # (n_ch, n_symbols*m)
    tx_symbols: np.ndarray | None    # (n_ch, n_symbols) complex


class SimulatedSource:
    """Streams frames generated through the seeded link model."""

    def __init__(self, cfg: ExperimentConfig, run_idx):
        self.cfg = cfg
        self.const = make_qam(cfg.qam_order)
        self.shaper = rrc_taps(cfg.rolloff, cfg.rrc_span, cfg.sps)
        ss = np.random.SeedSequence((cfg.base_seed, run_idx))
        bits_ss, link_ss = ss.spawn(2)
        self.bits_rng = np.random.default_rng(bits_ss)
        link_rng = np.random.default_rng(link_ss)
        perm = link_rng.permutation(cfg.n_channels)
        core = CoreChannelParams(
            gamma_hv=cfg.gamma_hv_rad,
            tau_pmd=cfg.tau_pmd_s,
            beta_cd_L=cfg.beta_cd_l_s2,
            symbol_rate=cfg.symbol_rate_baud,
        )
        link_cfg = LinkConfig(
            cores=cfg.cores,
            core_params=[core] * cfg.cores,
            permutation=perm,
            snr_db=cfg.snr_db,
            phase_noise=PhaseNoiseParams(cfg.linewidth_hz, cfg.symbol_rate_baud),
        )
        self.link = LinkSimulator(link_cfg, rng=link_rng)

    def frame(self, n_symbols):
        m = self.const.bits_per_symbol
        bits = self.bits_rng.integers(0, 2, size=(self.cfg.n_channels, n_symbols * m), dtype=np.uint8)
        sym = map_bits(bits, self.const)
        rx = self.link.transmit(upsample_and_shape(sym, self.shaper))
        idx = self.const.index_of_labels(bits.reshape(self.cfg.n_channels, n_symbols, m))
        return Frame(y=rx.data, tx_indices=idx, tx_bits=bits, tx_symbols=sym.data)


class FileSource:
    """Streams frames sequentially from an ingested IQ capture."""

    def __init__(self, cfg: ExperimentConfig, run_idx=0):
        self.cfg = cfg
        self.const = make_qam(cfg.qam_order)
        seq, bits = ingest_iq(cfg.iq_file)
        if seq.n_channels != cfg.n_channels:
            raise ValueError(
                f"{cfg.iq_file}: {seq.n_channels} channels, config wants {cfg.n_channels}"
            )
        if seq.sps != cfg.sps:
            raise ValueError(f"{cfg.iq_file}: sps {seq.sps} != config sps {cfg.sps}")
        self.seq = seq
        self.bits = bits
        self.pos = 0

    @property
    def scored(self):
        return self.bits is not None

    def frame(self, n_symbols):
        sps = self.cfg.sps
        m = self.const.bits_per_symbol
        if (self.pos + n_symbols) * sps > self.seq.data.shape[1]:
            raise ValueError("IQ capture exhausted before the configured run finished")
        y = self.seq.data[:, self.pos * sps:(self.pos + n_symbols) * sps]
        if self.bits is None:
            frame = Frame(y=y, tx_indices=None, tx_bits=None, tx_symbols=None)
        else:
            bits = self.bits[:, self.pos * m:(self.pos + n_symbols) * m]
            sym = map_bits(bits, self.const)
            idx = self.const.index_of_labels(bits.reshape(self.cfg.n_channels, n_symbols, m))
            frame = Frame(y=y, tx_indices=idx, tx_bits=bits, tx_symbols=sym.data)
        self.pos += n_symbols
        return frame


def _make_source(cfg, run_idx):
    return FileSource(cfg, run_idx) if cfg.iq_file else SimulatedSource(cfg, run_idx)


def _guard_symbols(cfg):
    # identical for every VAE variant so that plain and trailing-CPR runs
    # perform bit-identical tap updates on shared seeds
    return max((cfg.m_est + 1) // 2, (cfg.n_cpr + 1) // 2)


def run_single(cfg: ExperimentConfig, run_idx):
    """One seeded run: pre-converge, adapt blindly, score every frame.

    Returns (records, diagnostics dict).
    """
    torch.set_grad_enabled(True)
    source = _make_source(cfg, run_idx)
    const = source.const
    m = const.bits_per_symbol
    n_ch = cfg.n_channels
    cpr_cfg = BpsConfig(cfg.bps_angles, cfg.bps_temperature, cfg.n_cpr)
    noise_var = cfg.demap_noise_var

    eq = init_bank(n_ch, cfg.m_eq, "center-spike", sps_in=cfg.sps, requires_grad=True)
    est = init_bank(n_ch, cfg.m_est, "zeros", sps_in=1, sps_out=cfg.sps, requires_grad=True)

    scored = getattr(source, "scored", True)
    alignment = None
    if scored:
        pre = source.frame(cfg.preconv_symbols)
        pre_residual = _preconverge(cfg, eq, pre, est if cfg.variant != "cm" else None)
        with torch.no_grad():
            x0 = equalize_symbols(eq, torch.as_tensor(pre.y), 0, cfg.preconv_symbols)
        alignment = align(x0.numpy(), pre.tx_symbols, max_delay=cfg.m_eq)

    trainables = [eq.taps] if cfg.variant == "cm" else [eq.taps, est.taps]
    opts = [AdamState([eq.taps], lr=cfg.blind_lr,
                      beta1=defaults.ADAM_BETA1, beta2=defaults.ADAM_BETA2, eps=defaults.ADAM_EPS)]
    if cfg.variant != "cm":
        opts.append(AdamState([est.taps], lr=cfg.estimator_lr,
                              beta1=defaults.ADAM_BETA1, beta2=defaults.ADAM_BETA2,
                              eps=defaults.ADAM_EPS))
    start_lrs = [opt.lr for opt in opts]
    plan = BatchPlan(cfg.n_b, cfg.frame_symbols, overlap_samples=cfg.m_eq - 1)
    guard = _guard_symbols(cfg)
    # demapper scale: annealed from the measured residual error down to the
    # configured floor, or held fixed when adaptation is off; seeded from the
    # pre-convergence residual so a good handoff is not blurred away
    demap_state = noise_var
    if cfg.demap_adapt:
        demap_state = max(noise_var, pre_residual if scored else 0.2)
    prev_phase = None
    # carry the phase from a symbol clear of the frame-edge wrap corruption
    # (equalizer tap half-span) and the smoothing window
    carry = min((cfg.m_eq - 1) // 2 // cfg.sps + 1 + (cfg.n_cpr - 1) // 2 + 1,
                cfg.n_b)
    records = []
    batch_log = []
    diverged = False

    for frame_idx in range(cfg.frames):
        frame = source.frame(cfg.frame_symbols)
        y_t = torch.as_tensor(frame.y)
        x_eval = np.empty((n_ch, cfg.frame_symbols), dtype=np.complex128)
        a_sum = c_sum = 0.0
        c_per_ch = np.zeros(n_ch)

        for b in range(plan.n_batches):
            k0 = b * plan.batch_symbols
            if cfg.variant == "cm":
                x = equalize_symbols(eq, y_t, k0, plan.batch_symbols)
                loss = cm_loss(x, const)
                x_valid = x.detach()
            else:
                res = vae_loss(
                    y_t, eq, est, const, demap_state,
                    variant=cfg.variant, cpr_cfg=cpr_cfg,
                    k0=k0, n_sym=plan.batch_symbols, guard=guard,
                    prev_phase=prev_phase,
                )
                loss = res.loss
                a_sum += res.breakdown.kl
                c_sum += res.breakdown.recon
                c_per_ch += res.breakdown.recon_per_channel
                if cfg.demap_adapt:
                    p_sig = np.mean(np.abs(frame.y) ** 2)
                    rel = float(np.mean(res.breakdown.recon_per_channel)) / (
                        cfg.sps * plan.batch_symbols * p_sig
                    )
                    demap_state = max(noise_var, 0.7 * demap_state + 0.3 * rel)
                if res.phase is not None:
                    prev_phase = res.phase[:, -carry]
                    x_valid = (res.x_eq * torch.exp(-1j * res.phase)).detach()
                else:
                    x_valid = res.x_eq
            if not torch.isfinite(loss):
                diverged = True
                break
            grads = torch.autograd.grad(loss, trainables)
            for opt, g in zip(opts, grads):
                adam_step([g], opt)
            x_eval[:, k0:k0 + plan.batch_symbols] = x_valid.numpy()
            batch_log.append((run_idx, frame_idx, b, float(loss.detach())))
        if diverged:
            records.append(RunRecord(
                run=run_idx, frame=frame_idx,
                bmi=np.full(n_ch, np.nan), ser=np.full(n_ch, np.nan),
                snr_est_db=np.full(n_ch, np.nan),
                loss_a=np.nan, loss_c=np.nan, diverged=True,
            ))
            break

        # anneal both step sizes: fast acquisition early, low gradient-noise
        # misadjustment once converged
        for opt, lr0 in zip(opts, start_lrs):
            opt.lr = max(opt.lr * cfg.rate_decay, lr0 * cfg.rate_floor)

        if cfg.variant == "cm":
            # evaluation-only trailing phase search for the CM baseline
            with torch.no_grad():
                x_t = torch.as_tensor(x_eval)
                track = bps_select_hard(bps_distances(x_t, const, cpr_cfg), cpr_cfg,
                                        prev_phase=prev_phase,
                                        anchor=min(carry, x_t.shape[1] - 1))
                prev_phase = track.phase[:, -carry]
                x_eval = apply_cpr(x_t, track).numpy()
                dec = const.points[const.nearest(x_eval)]
                demap_state = max(noise_var, float(np.mean(np.abs(x_eval - dec) ** 2)))

        records.append(_score_frame(
            cfg, run_idx, frame_idx, frame, x_eval, alignment, const, m,
            a_sum, c_sum, c_per_ch, demap_state,
        ))

    diags = {"eq": eq, "est": est, "alignment": alignment, "batch_log": batch_log,
             "diverged": diverged}
    return records, diags


def _preconverge(cfg, eq, pre: Frame, est=None):
    y_t = torch.as_tensor(pre.y)
    pilots = torch.as_tensor(pre.tx_symbols)
    opt = AdamState([eq.taps], lr=cfg.pilot_lr,
                    beta1=defaults.ADAM_BETA1, beta2=defaults.ADAM_BETA2, eps=defaults.ADAM_EPS)
    n_batches = cfg.preconv_symbols // cfg.n_b
    # the supervised phase is fitted per sub-chunk so it can follow the
    # carrier drift within an update batch
    chunk = min(100, cfg.n_b)
    thetas = torch.zeros(pilots.shape[0], cfg.preconv_symbols, dtype=torch.float64)
    theta = None
    residual = 0.0
    for _ in range(cfg.preconv_passes):
        residual = 0.0
        for b in range(n_batches):
            k0 = b * cfg.n_b
            x = equalize_symbols(eq, y_t, k0, cfg.n_b)
            batch_pilots = pilots[:, k0:k0 + cfg.n_b]
            loss = 0.0
            for s in range(0, cfg.n_b, chunk):
                part, theta = pilot_mse_loss(
                    x[:, s:s + chunk], batch_pilots[:, s:s + chunk])
                loss = loss + part
                thetas[:, k0 + s:k0 + s + chunk] = theta.unsqueeze(-1)
            residual += float(loss.detach())
            grads = torch.autograd.grad(loss, [eq.taps])
            adam_step(grads, opt)
    residual /= pilots.shape[0] * cfg.preconv_symbols
    if est is not None:
        _preconverge_estimator(cfg, est, y_t, pilots, thetas)
    # hand off grid-aligned: fold the last supervised phase into the taps
    # (and into the estimator inputs, which live in the same rotated frame)
    if theta is not None:
        with torch.no_grad():
            eq.taps.mul_(torch.exp(-1j * theta)[:, None, None])
            if est is not None:
                est.taps.mul_(torch.exp(1j * theta)[None, :, None])
    return residual


def _preconverge_estimator(cfg, est, y_t, pilots, thetas):
    """Supervised warm start for the channel estimator: reconstruct the pilot
    frame from the known symbols rotated by the supervised phase track."""
    means = pilots * torch.exp(1j * thetas)
    opt = AdamState([est.taps], lr=cfg.pilot_lr,
                    beta1=defaults.ADAM_BETA1, beta2=defaults.ADAM_BETA2, eps=defaults.ADAM_EPS)
    guard = (cfg.m_est + 1) // 2
    n_batches = cfg.preconv_symbols // cfg.n_b
    sps = cfg.sps
    n_sym = cfg.preconv_symbols
    for _ in range(cfg.preconv_passes):
        for b in range(n_batches):
            k0 = b * cfg.n_b
            idx = torch.arange(k0 - guard, k0 + cfg.n_b + guard) % n_sym
            mu = means.index_select(-1, idx)
            y_hat, _ = estimate_channel_project(est, mu)
            y_ctx = torch.arange(sps * (k0 - guard), sps * (k0 + cfg.n_b + guard)) % (sps * n_sym)
            err = torch.as_tensor(y_t).index_select(-1, y_ctx) - y_hat
            loss = torch.sum(torch.abs(err[:, sps * guard:err.shape[-1] - sps * guard]) ** 2)
            grads = torch.autograd.grad(loss, [est.taps])
            adam_step(grads, opt)


def _score_frame(cfg, run_idx, frame_idx, frame, x_eval, alignment, const, m,
                 a_sum, c_sum, c_per_ch, demap_scale):
    n_ch = cfg.n_channels
    if frame.tx_bits is None or alignment is None or alignment.failed:
        bmi_ch = np.full(n_ch, np.nan)
        ser_ch = np.full(n_ch, np.nan)
    else:
        aligned = alignment.apply(x_eval)
        with torch.no_grad():
            grid = soft_demap(torch.as_tensor(aligned), const, demap_scale)
        bits = frame.tx_bits.reshape(n_ch, cfg.frame_symbols, m)
        bmi_ch = bmi(grid.llrs.numpy(), bits, m)
        ser_ch = ser(const.nearest(aligned), frame.tx_indices)
    if cfg.variant == "cm":
        snr_ch = np.full(n_ch, np.nan)
    else:
        p_sig = np.mean(np.abs(frame.y) ** 2, axis=1)
        snr_ch = snr_est(c_per_ch, p_sig, cfg.sps * cfg.frame_symbols)
    return RunRecord(
        run=run_idx, frame=frame_idx, bmi=bmi_ch, ser=ser_ch, snr_est_db=snr_ch,
        loss_a=a_sum, loss_c=c_sum,
    )


def _run_single_worker(args):
    cfg_text, run_idx = args
    cfg = ExperimentConfig.from_text(cfg_text)
    records, diags = run_single(cfg, run_idx)
    return records, diags["diverged"], diags["eq"].to_bytes(), diags["batch_log"]


def run_experiment(cfg: ExperimentConfig):
    """Execute all runs of one configuration and write records.csv + summary.json.

    Returns the summary dict. Diverged runs are recorded, not fatal.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    args = [(cfg.to_text(), r) for r in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_single_worker, args))
    else:
        results = [_run_single_worker(a) for a in args]

    all_records = []
    diverged_runs = []
    for (records, diverged, tap_bytes, batch_log), (_, run_idx) in zip(results, args):
        all_records.extend(records)
        if diverged:
            diverged_runs.append(run_idx)
        if cfg.dump_diagnostics:
            with open(os.path.join(cfg.out_dir, f"taps_{run_idx}_final.bin"), "wb") as fh:
                fh.write(tap_bytes)
            with open(os.path.join(cfg.out_dir, f"batches_{run_idx}.csv"), "w") as fh:
                fh.write("run,frame,batch,loss\n")
                for row in batch_log:
                    fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]:.12g}\n")

    write_records_csv(os.path.join(cfg.out_dir, "records.csv"), all_records)
    summary, partial = aggregate(all_records, frames_per_run=cfg.frames,
                                 keep_last=min(20, cfg.frames))
    summary_doc = {
        "config_hash": cfg.content_hash(),
        "variant": cfg.variant,
        "runs": cfg.runs,
        "frames": cfg.frames,
        "partial": partial,
        "diverged_runs": diverged_runs,
        "metrics": summary,
    }
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        json.dump(summary_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    return summary_doc


def write_records_csv(path, records):
    records = sorted(records, key=lambda r: (r.run, r.frame))
    with open(path, "w") as fh:
        fh.write("run,frame,channel,bmi,ser,snr_est_db,loss_a,loss_c,diverged\n")
        for r in records:
            for ch in range(len(r.bmi)):
                fh.write(
                    f"{r.run},{r.frame},{ch},{r.bmi[ch]:.12g},{r.ser[ch]:.12g},"
                    f"{r.snr_est_db[ch]:.12g},{r.loss_a:.12g},{r.loss_c:.12g},"
                    f"{int(r.diverged)}\n"
                )


def sweep(cfg: ExperimentConfig, axis, values):
    """Independent run_experiment per value of one numeric config field.

    All points share the base seed so per-seed comparisons are paired.
    """
    if axis not in {f.name for f in dataclasses.fields(ExperimentConfig)}:
        raise ValueError(f"unknown sweep axis {axis!r}")
    if not isinstance(getattr(cfg, axis), (int, float)) or isinstance(getattr(cfg, axis), bool):
        raise ValueError(f"sweep axis {axis!r} is not numeric")
    summaries = []
    for v in values:
        point = dataclasses.replace(cfg, **{axis: type(getattr(cfg, axis))(v)})
        point.out_dir = os.path.join(cfg.out_dir, f"{axis}={v:g}")
        summaries.append(run_experiment(point))
    return summaries
