"""Blind variational-autoencoder-based MIMO equalization with differentiable
carrier phase recovery, plus the simulation harness around it."""

from .butterfly import AdamState, BatchPlan, ButterflyFilterBank, adam_step, init_bank
from .channel import (
    CoreChannelParams,
    LinkConfig,
    LinkSimulator,
    PhaseNoiseParams,
    apply_link,
    awgn,
    core_frequency_response,
    wiener_phase,
)
from .cpr import BpsConfig, PhaseTrack, apply_cpr, bps_distances, bps_select_hard, bps_select_soft, unwrap
from .harness import ExperimentConfig, run_experiment, run_single, sweep
from .iqfile import ingest_iq, save_iq
from .losses import (
    LossBreakdown,
    PosteriorGrid,
    cm_loss,
    godard_radius,
    kl_term_A,
    pilot_mse_loss,
    recon_term_C,
    soft_demap,
    vae_loss,
)
from .metrics import Alignment, RunRecord, aggregate, align, bmi, ser, snr_est
from .signal import (
    ComplexSequence,
    Constellation,
    RrcFilter,
    make_qam,
    map_bits,
    rrc_taps,
    upsample_and_shape,
)
