"""Butterfly filter-bank and optimizer unit tests."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vaeq.butterfly import (
    AdamState,
    BatchPlan,
    ButterflyFilterBank,
    adam_step,
    equalize_batch,
    equalize_symbols,
    estimate_channel_project,
    init_bank,
)


def _random_bank(rng, n_ch, m, sps_in=2, sps_out=1):
    t = rng.normal(size=(n_ch, n_ch, m)) + 1j * rng.normal(size=(n_ch, n_ch, m))
    return ButterflyFilterBank(torch.tensor(t, dtype=torch.complex128),
                               sps_in=sps_in, sps_out=sps_out)


def test_bank_validation():
    with pytest.raises(ValueError):
        init_bank(2, 4)
    with pytest.raises(ValueError):
        ButterflyFilterBank(torch.zeros(2, 3, 5, dtype=torch.complex128))
    with pytest.raises(ValueError):
        init_bank(2, 5, mode="bogus")


def test_center_spike_is_identity_on_symbol_grid():
    rng = np.random.default_rng(0)
    y = torch.tensor(rng.normal(size=(2, 32)) + 1j * rng.normal(size=(2, 32)))
    bank = init_bank(2, 5, "center-spike", sps_in=2)
    x = equalize_symbols(bank, y, 0, 16)
    assert torch.allclose(x, y[:, ::2], atol=1e-14)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([3, 5, 7]), st.sampled_from([1, 2]))
@settings(max_examples=25, deadline=None)
def test_equalize_symbols_matches_direct_sum(seed, m, sps):
    rng = np.random.default_rng(seed)
    n_ch, n_sym = 2, 8
    bank = _random_bank(rng, n_ch, m, sps_in=sps)
    y = torch.tensor(rng.normal(size=(n_ch, n_sym * sps))
                     + 1j * rng.normal(size=(n_ch, n_sym * sps)))
    x = equalize_symbols(bank, y, 0, n_sym)
    c = bank.center
    n = y.shape[-1]
    direct = torch.zeros(n_ch, n_sym, dtype=torch.complex128)
    for i in range(n_ch):
        for k in range(n_sym):
            acc = 0.0
            for j in range(n_ch):
                for t in range(m):
                    acc = acc + bank.taps[i, j, t] * y[j, (sps * k - t + c) % n]
            direct[i, k] = acc
    assert torch.allclose(x, direct, atol=1e-12)


def test_equalize_batches_tile_the_frame():
    rng = np.random.default_rng(1)
    bank = _random_bank(rng, 2, 5)
    y = torch.tensor(rng.normal(size=(2, 64)) + 1j * rng.normal(size=(2, 64)))
    plan = BatchPlan(8, 32, overlap_samples=4)
    full = equalize_symbols(bank, y, 0, 32)
    tiles = torch.cat([equalize_batch(bank, y, plan, b) for b in range(plan.n_batches)], dim=-1)
    assert torch.allclose(full, tiles, atol=1e-12)
    with pytest.raises(ValueError):
        equalize_batch(bank, y, plan, 4)
    with pytest.raises(ValueError):
        BatchPlan(7, 32)


def test_estimator_projection_oracle():
    """y_hat is the circular upsampled convolution; v_hat uses |taps|^2."""
    rng = np.random.default_rng(2)
    n_ch, m, n_sym, sps = 2, 3, 6, 2
    est = _random_bank(rng, n_ch, m, sps_in=1, sps_out=sps)
    mean = torch.tensor(rng.normal(size=(n_ch, n_sym)) + 1j * rng.normal(size=(n_ch, n_sym)))
    var = torch.tensor(np.abs(rng.normal(size=(n_ch, n_sym))))
    y_hat, v_hat = estimate_channel_project(est, mean, var)
    n = n_sym * sps
    c = est.center
    up = np.zeros((n_ch, n), dtype=np.complex128)
    up[:, ::sps] = mean.numpy()
    upv = np.zeros((n_ch, n))
    upv[:, ::sps] = var.numpy()
    direct = np.zeros((n_ch, n), dtype=np.complex128)
    directv = np.zeros((n_ch, n))
    for i in range(n_ch):
        for l in range(n):
            for j in range(n_ch):
                for t in range(m):
                    direct[i, l] += est.taps[i, j, t].item() * up[j, (l - t + c) % n]
                    directv[i, l] += abs(est.taps[i, j, t].item()) ** 2 * upv[j, (l - t + c) % n]
    assert np.allclose(y_hat.numpy(), direct, atol=1e-12)
    assert np.allclose(v_hat.numpy(), directv, atol=1e-12)


def test_tap_serialization_roundtrip():
    rng = np.random.default_rng(3)
    bank = _random_bank(rng, 4, 7)
    raw = bank.to_bytes()
    assert len(raw) == 4 * 4 * 7 * 16
    back = ButterflyFilterBank.from_bytes(raw, 4, 7)
    assert torch.equal(back.taps, bank.taps)
    with pytest.raises(ValueError):
        ButterflyFilterBank.from_bytes(raw, 4, 5)


def test_adam_matches_torch_reference():
    """The from-scratch optimizer follows torch.optim.Adam step for step."""
    rng = np.random.default_rng(4)
    t0 = rng.normal(size=(2, 2, 3)) + 1j * rng.normal(size=(2, 2, 3))
    mine = torch.tensor(t0, dtype=torch.complex128, requires_grad=True)
    ref = torch.view_as_real(torch.tensor(t0, dtype=torch.complex128)).clone().requires_grad_(True)
    state = AdamState([mine], lr=1e-2)
    ref_opt = torch.optim.Adam([ref], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
    target = torch.tensor(rng.normal(size=(2, 2, 3)) + 1j * rng.normal(size=(2, 2, 3)))
    for _ in range(25):
        loss = torch.sum(torch.abs(mine - target) ** 2)
        g = torch.autograd.grad(loss, [mine])
        adam_step(g, state)
        ref_opt.zero_grad()
        torch.sum(torch.abs(torch.view_as_complex(ref) - target) ** 2).backward()
        ref_opt.step()
    assert torch.allclose(torch.view_as_real(mine.detach()), ref.detach(), atol=1e-10)


def test_adam_step_validation():
    p = torch.zeros(3, requires_grad=True)
    state = AdamState([p])
    with pytest.raises(ValueError):
        adam_step([], state)
    with pytest.raises(ValueError):
        adam_step([torch.zeros(4)], state)
