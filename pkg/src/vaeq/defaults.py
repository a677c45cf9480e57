"""Pinned default hyperparameters per algorithm variant.

These values were fixed once by a grid sweep with scripts/tune_defaults.py
on the simulated scenarios and are the single source of truth for the
committed defaults; override per run via config file or CLI flags.
"""

# Adam learning rate for the blind adaptation stage.
BLIND_LR = {
    "cm": 2e-3,
    "plain": 2e-3,
    "trailing_cpr": 2e-3,   # must equal "plain": the update paths are identical
    "trained_cpr": 2e-3,
}

# Adam learning rate of the channel estimator (decoder) during blind adaptation.
# Small because the estimator is warm-started supervised during pre-convergence;
# Adam's first steps are sign-steps of size lr and would wipe a warm start.
EST_LR = 2e-3

# Adam learning rate for the pilot-aided pre-convergence stage.
PRECONV_LR = 2e-2

# Per-frame decay on both blind-stage rates and its floor (fraction of the
# starting rate): fast acquisition first, low misadjustment at steady state.
LR_DECAY = 0.9
LR_FLOOR = 0.05

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
