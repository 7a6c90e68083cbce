#!/usr/bin/env python3
"""
Privacy accountant tests: RDP curves, (eps, delta) conversion and the ledger.
"""

import math
import sys
from dataclasses import replace

import numpy as np
import pytest

from accountant import (
    ALPHA_GRID,
    DpConfig,
    PrivacyLedger,
    RdpCurve,
    curve,
    degraded_guarantee,
    discrete_sum_divergence,
    epsilon,
    epsilon_grid,
    rdp_continuous,
    rdp_discrete,
    tau,
    to_eps_delta,
)
from errors import ParameterError


def test_alpha_grid_shape():
    assert ALPHA_GRID[0] == pytest.approx(1.01) and ALPHA_GRID[-1] == 512.0
    assert {1.25, 1.5, 1.75, 2.0, 3.0, 256.0} <= set(ALPHA_GRID.tolist())
    assert np.sum(ALPHA_GRID < 1.25) >= 30
    assert np.all(np.diff(ALPHA_GRID) > 0)


def test_continuous_curve_is_linear_in_alpha_and_epochs():
    cfg = DpConfig(sigma=2.0, clip_C=5.0, epochs=3)
    assert rdp_continuous(cfg, 4.0) == pytest.approx(3 * 25 * 4 / 8)
    with pytest.raises(ParameterError):
        rdp_continuous(cfg, 0.5)


def test_eps_for_unit_noise_one_epoch():
    cfg = DpConfig(sigma=1.0, clip_C=5.0, batch_size=64, delta=1e-5)
    eps, alpha = epsilon(cfg)
    assert alpha == 2.0
    assert eps == pytest.approx(25.0 + math.log(1e5), rel=1e-9)


def _dense_eps(sigma, clip_C, epochs, delta):
    # order search at step 0.01, straight from the Gaussian RDP formula
    alphas = np.arange(1.01, 512.0 + 1e-9, 0.01)
    eps = epochs * clip_C ** 2 * alphas / (2 * sigma ** 2) + math.log(1 / delta) / (alphas - 1)
    return eps.min()


def test_grid_agrees_with_dense_order_search():
    for sigma in (1.0, 2.0, 4.0, 8.0, 16.0):
        for epochs in (1, 275):
            cfg = DpConfig(sigma=sigma, clip_C=5.0, batch_size=64, epochs=epochs, delta=1e-5)
            dense = _dense_eps(sigma, 5.0, epochs, 1e-5)
            for discrete in (False, True):
                eps, _ = epsilon(cfg, discrete=discrete)
                assert abs(eps - dense) / dense < 0.01, (sigma, epochs, discrete, eps, dense)


def test_many_epochs_pick_an_order_close_to_one():
    cfg = DpConfig(sigma=1.0, clip_C=5.0, batch_size=64, epochs=275, delta=1e-5)
    eps, alpha = epsilon(cfg)
    assert 1.0 < alpha < 1.1
    # the best integer order is far worse
    assert eps < 0.9 * min(275 * 25 * a / 2 + math.log(1e5) / (a - 1) for a in (2.0, 3.0))


def test_flat_curve_uses_the_largest_order():
    eps, alpha = to_eps_delta(RdpCurve(ALPHA_GRID, np.zeros_like(ALPHA_GRID)), 1e-5)
    assert alpha == 512.0
    assert eps == pytest.approx(math.log(1e5) / 511, rel=1e-12)
    assert eps == pytest.approx(0.02253, abs=1e-5)


def test_conversion_picks_grid_minimum():
    c = RdpCurve(np.array([1.0, 2.0, 10.0]), np.array([0.0, 1.0, 5.0]))
    eps, alpha = to_eps_delta(c, 1e-3)
    assert alpha == 2.0 and eps == pytest.approx(1.0 + math.log(1e3))
    with pytest.raises(ParameterError):
        to_eps_delta(RdpCurve(np.array([1.0]), np.array([0.0])), 1e-3)
    with pytest.raises(ParameterError):
        to_eps_delta(c, 1.5)


def test_tau_edges():
    assert tau(3.0, 1) == 0.0
    assert tau(0.5, 2) == pytest.approx(10 * math.exp(-2 * math.pi ** 2 * 0.25 / 2))
    assert tau(1e4, 1000) == 0.0
    # more summands only add terms
    assert tau(0.6, 50) > tau(0.6, 5)


def test_discrete_divergence_adds_tau_per_dimension():
    base = discrete_sum_divergence(2.0, 3.0, 0.6, 4, 1)
    wider = discrete_sum_divergence(2.0, 3.0, 0.6, 4, 10)
    assert wider - base == pytest.approx(9 * tau(0.6, 4))
    with pytest.raises(ParameterError):
        discrete_sum_divergence(2.0, 3.0, 0.4, 4, 1)


def test_discrete_matches_continuous_at_fixed_point_scale():
    for sigma in (1, 2, 4, 8, 16):
        for b in (16, 32, 64, 128):
            cfg = DpConfig(sigma=float(sigma), batch_size=b, epochs=5, dimension=100)
            eps_c, _ = epsilon(cfg)
            eps_d, _ = epsilon(cfg, discrete=True)
            assert abs(eps_d - eps_c) / eps_c < 1e-3


def test_discrete_rejects_tiny_scaled_noise():
    cfg = DpConfig(sigma=1e-5, batch_size=128)
    with pytest.raises(ParameterError):
        rdp_discrete(cfg, 2.0)


def test_eps_shrinks_with_sigma_and_grows_with_epochs():
    eps = [epsilon(DpConfig(sigma=s, batch_size=32))[0] for s in (1.0, 2.0, 4.0)]
    assert eps[0] > eps[1] > eps[2]
    assert epsilon(DpConfig(sigma=2.0, epochs=10))[0] > epsilon(DpConfig(sigma=2.0, epochs=1))[0]


def test_degraded_guarantee_for_partial_honesty():
    cfg = DpConfig(sigma=2.0, honest_fraction=0.5)
    full = curve(DpConfig(sigma=2.0))
    degraded = degraded_guarantee(cfg)
    assert np.allclose(degraded.values, 2 * full.values)


def test_config_validation():
    with pytest.raises(ParameterError):
        DpConfig(sigma=0.0)
    with pytest.raises(ParameterError):
        DpConfig(sigma=1.0, delta=1.0)
    with pytest.raises(ParameterError):
        DpConfig(sigma=1.0, honest_fraction=0.0)
    with pytest.raises(ParameterError):
        DpConfig(sigma=1.0, batch_size=0)


def test_table_grid_covers_noisy_settings():
    frame = epsilon_grid(epochs=2)
    assert len(frame) == 5 * 4
    assert set(frame["sigma"]) == {1, 2, 4, 8, 16}
    assert (frame["relative_difference"] < 1e-3).all()
    assert frame.sort_values("sigma")["eps_continuous"].is_monotonic_decreasing


def test_discrete_agrees_over_grid_for_one_and_many_epochs():
    for epochs in (1, 275):
        frame = epsilon_grid(epochs=epochs)
        assert (frame["relative_difference"] < 1e-3).all(), epochs


def test_grid_reaches_strong_and_moderate_budgets():
    eps = epsilon_grid(epochs=1)["eps_continuous"]
    assert (eps <= 2.0).any()
    assert ((eps > 2.0) & (eps <= 8.0)).any()


def test_degraded_guarantee_costs_more_privacy():
    for epochs in (1, 275):
        cfg = DpConfig(sigma=4.0, epochs=epochs, honest_fraction=0.5)
        honest, _ = epsilon(replace(cfg, honest_fraction=1.0))
        degraded, _ = to_eps_delta(degraded_guarantee(cfg), cfg.delta)
        assert degraded > honest


def test_curve_frame_columns():
    frame = curve(DpConfig(sigma=1.0)).to_frame()
    assert list(frame.columns) == ["alpha", "eps_rdp"]
    assert len(frame) == len(ALPHA_GRID)


def test_ledger_counts_only_released_examples():
    ledger = PrivacyLedger(DpConfig(sigma=1.0, epochs=3))
    assert ledger.epsilon() == (0.0, None)
    ledger.record_batch([0, 1, 2])
    ledger.record_batch([3, 4, 5])
    assert ledger.spent_epochs == 1
    ledger.record_batch([0, 4])
    assert ledger.spent_epochs == 2
    eps, _ = ledger.epsilon()
    assert eps == pytest.approx(epsilon(DpConfig(sigma=1.0, epochs=2))[0])


def main():
    tests = [(name, func) for name, func in globals().items() if name.startswith("test_")]
    failed = 0
    for name, func in tests:
        try:
            func()
            print(f"  ✓ {name}")
        except Exception as e:
            failed += 1
            print(f"  ✗ {name}: {e}")
    print(f"\n{len(tests) - failed}/{len(tests)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
