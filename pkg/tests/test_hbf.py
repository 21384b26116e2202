"""Tests for the penalty-continuation manifold factorization."""

import math

import numpy as np
import pytest

from beamkit.hbf import (
    HybridBeamformer,
    PenaltyParams,
    RankDeficientError,
    RcgParams,
    design_hybrid,
    euclidean_grad,
    ls_baseband,
    penalty_objective,
    rcg_solve,
    retract,
    riemannian_grad,
)
from beamkit.metrics import DigitalBeamformer, energy_efficiency
from beamkit.model import generate_channels


def random_instance(rng, n_tx=8, m_t=4, k=4):
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, (n_tx, m_t)))
    b = rng.standard_normal((m_t, k)) + 1j * rng.standard_normal((m_t, k))
    t = rng.standard_normal((n_tx, k)) + 1j * rng.standard_normal((n_tx, k))
    return x, b, t


# ---------------------------------------------------------------------------
# penalty_objective / euclidean_grad


def test_penalty_zero_at_exact_fit_on_budget():
    rng = np.random.default_rng(0)
    x, b, _ = random_instance(rng)
    t = x @ b
    p_max = float(np.sum(np.abs(t) ** 2))
    assert penalty_objective(x, b, t, 1.5, p_max) == pytest.approx(0.0, abs=1e-9)


def test_penalty_zero_baseband():
    rng = np.random.default_rng(1)
    x, b, t = random_instance(rng)
    val = penalty_objective(x, np.zeros_like(b), t, 2.0, 5.0)
    assert val == pytest.approx(np.sum(np.abs(t) ** 2) - 2.0 * 5.0, rel=1e-12)


def test_penalty_matches_term_by_term():
    rng = np.random.default_rng(2)
    x, b, t = random_instance(rng)
    mu, p_max = 3.0, 7.0
    prod = x @ b
    fit = sum(abs(t[i, j] - prod[i, j]) ** 2 for i in range(8) for j in range(4))
    power = sum(abs(prod[i, j]) ** 2 for i in range(8) for j in range(4))
    expect = fit + mu * (power - p_max)
    assert penalty_objective(x, b, t, mu, p_max) == pytest.approx(expect, rel=1e-12)


def test_gradient_zero_cases():
    rng = np.random.default_rng(3)
    x, b, t = random_instance(rng)
    np.testing.assert_allclose(euclidean_grad(x, np.zeros_like(b), t, 1.5), 0.0)
    # Constructed stationary point: T = (1 + mu) X B makes the gradient vanish.
    mu = 2.5
    t_star = (1.0 + mu) * x @ b
    np.testing.assert_allclose(euclidean_grad(x, b, t_star, mu), 0.0, atol=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for mu in (1.5, 12.0):
        x, b, t = random_instance(rng)
        g = euclidean_grad(x, b, t, mu)
        eps = 1e-6
        for (i, j) in ((0, 0), (3, 1), (7, 3)):
            for real_part in (True, False):
                d = np.zeros_like(x)
                d[i, j] = eps if real_part else 1j * eps
                fp = penalty_objective(x + d, b, t, mu, 5.0)
                fm = penalty_objective(x - d, b, t, mu, 5.0)
                fd = (fp - fm) / (2 * eps)
                analytic = g[i, j].real if real_part else g[i, j].imag
                assert fd == pytest.approx(analytic, rel=1e-6, abs=1e-8)


# ---------------------------------------------------------------------------
# manifold primitives


def test_riemannian_grad_radial_annihilated():
    rng = np.random.default_rng(5)
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, (6, 3)))
    np.testing.assert_allclose(riemannian_grad(x, x), 0.0, atol=1e-14)
    np.testing.assert_allclose(riemannian_grad(1j * x, x), 1j * x, atol=1e-14)


def test_riemannian_grad_tangency():
    rng = np.random.default_rng(6)
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, (6, 3)))
    g = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    tangent = riemannian_grad(g, x)
    radial = (tangent * x.conj()).real
    np.testing.assert_allclose(radial, 0.0, atol=1e-12)


def test_retract_basics():
    rng = np.random.default_rng(7)
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, (5, 2)))
    np.testing.assert_array_equal(retract(x, np.zeros_like(x)), x)
    step = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    y = retract(x, step)
    np.testing.assert_allclose(np.abs(y), 1.0, atol=1e-12)


def test_retract_second_order_consistency():
    rng = np.random.default_rng(8)
    x = np.exp(1j * rng.uniform(0, 2 * np.pi, (6, 3)))
    g = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    v = riemannian_grad(g, x)  # tangent step
    errs = []
    deltas = (1e-2, 1e-3)
    for d in deltas:
        errs.append(np.linalg.norm(retract(x, d * v) - (x + d * v)))
    order = math.log(errs[0] / errs[1]) / math.log(deltas[0] / deltas[1])
    assert order == pytest.approx(2.0, abs=0.1)


# ---------------------------------------------------------------------------
# rcg_solve / ls_baseband


def test_rcg_already_optimal_exits_immediately():
    rng = np.random.default_rng(9)
    x, b, _ = random_instance(rng, n_tx=16)
    t = x @ b
    x_out, iters, g_norm = rcg_solve(t, b, x, 1.5, RcgParams(), p_max=1e9, hinge=True)
    assert iters <= 1
    np.testing.assert_allclose(x_out, x)
    res = np.linalg.norm(t - x_out @ b) / np.linalg.norm(t)
    assert res <= 1e-12


def test_rcg_descends_monotonically():
    rng = np.random.default_rng(10)
    x, b, t = random_instance(rng, n_tx=16)
    mu, p_max = 1.5, 10.0
    before = penalty_objective(x, b, t, mu, p_max)
    x_out, iters, _ = rcg_solve(t, b, x, mu, RcgParams(max_iters=50), p_max=p_max)
    after = penalty_objective(x_out, b, t, mu, p_max)
    assert after <= before + 1e-12
    assert iters >= 2


def test_ls_baseband_orthonormal_columns():
    rng = np.random.default_rng(11)
    q, _ = np.linalg.qr(rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3)))
    b = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    got = ls_baseband(q, q @ b)
    np.testing.assert_allclose(got, b, atol=1e-12)


def test_ls_baseband_orthogonal_target_gives_zero():
    rng = np.random.default_rng(12)
    q, _ = np.linalg.qr(rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6)))
    f_rf, t_orth = q[:, :3], q[:, 3:]
    got = ls_baseband(f_rf, t_orth)
    np.testing.assert_allclose(got, 0.0, atol=1e-12)


def test_ls_baseband_normal_equations():
    rng = np.random.default_rng(13)
    f_rf = np.exp(1j * rng.uniform(0, 2 * np.pi, (12, 4)))
    t = rng.standard_normal((12, 5)) + 1j * rng.standard_normal((12, 5))
    b = ls_baseband(f_rf, t)
    residual = f_rf.conj().T @ (t - f_rf @ b)
    assert np.max(np.abs(residual)) < 1e-8


def test_ls_baseband_rank_deficient_reports_condition():
    f_rf = np.ones((8, 3), dtype=complex)  # identical columns
    with pytest.raises(RankDeficientError) as err:
        ls_baseband(f_rf, np.ones((8, 2), dtype=complex))
    assert err.value.cond is None or err.value.cond > 1e12


# ---------------------------------------------------------------------------
# design_hybrid


def test_design_hybrid_recovers_realizable_target(desk_cfg):
    cfg = desk_cfg.with_overrides(n_tx=16, n_rfc=4)
    rng = np.random.default_rng(14)
    hits = 0
    for seed in range(10):
        r = np.random.default_rng(seed)
        f_rf = np.exp(1j * r.uniform(0, 2 * np.pi, (16, 4)))
        f_bb = r.standard_normal((4, 4)) + 1j * r.standard_normal((4, 4))
        t = f_rf @ f_bb
        t *= math.sqrt(0.8 * cfg.max_tx_power / np.sum(np.abs(t) ** 2))
        hyb, trace = design_hybrid(DigitalBeamformer(t), cfg)
        assert trace.factorization_error >= 0
        if trace.factorization_error <= 0.05:
            hits += 1
        assert np.max(np.abs(np.abs(hyb.analog) - 1.0)) <= 1e-12
        power = np.sum(np.abs(hyb.composite()) ** 2)
        assert power <= cfg.max_tx_power * (1 + 1e-6)
    assert hits >= 9


def test_design_hybrid_power_boundary(desk_cfg):
    cfg = desk_cfg.with_overrides(n_tx=16, n_rfc=4)
    rng = np.random.default_rng(15)
    f_rf = np.exp(1j * rng.uniform(0, 2 * np.pi, (16, 4)))
    f_bb = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    t = f_rf @ f_bb
    t *= math.sqrt(cfg.max_tx_power / np.sum(np.abs(t) ** 2))  # exactly P_t
    hyb, trace = design_hybrid(DigitalBeamformer(t), cfg)
    power = np.sum(np.abs(hyb.composite()) ** 2)
    assert power <= cfg.max_tx_power * (1 + 1e-6)
    assert power >= cfg.max_tx_power * (1 - 0.05)  # near-budget fit stays near budget


def test_design_hybrid_desk_scale_ee(desk_cfg):
    from beamkit.dinkelbach import design_digital

    for seed in (1, 2):
        cfg = desk_cfg.with_overrides(rng_seed=seed)
        ch = generate_channels(cfg)
        f_dig, _ = design_digital(ch, cfg)
        hyb, trace = design_hybrid(f_dig, cfg)
        ee_digital = energy_efficiency(ch, f_dig, cfg)
        ee_hybrid = energy_efficiency(ch, hyb.as_digital(), cfg)
        assert ee_hybrid >= 0.85 * ee_digital
        assert trace.factorization_error <= 0.2


def test_design_hybrid_wide_analog(desk_cfg):
    # More RF chains than streams: baseband is rectangular M_t x K.
    cfg = desk_cfg.with_overrides(n_tx=32, n_rfc=6)
    rng = np.random.default_rng(16)
    t = rng.standard_normal((32, 4)) + 1j * rng.standard_normal((32, 4))
    t *= math.sqrt(0.5 * cfg.max_tx_power / np.sum(np.abs(t) ** 2))
    hyb, trace = design_hybrid(DigitalBeamformer(t), cfg)
    assert hyb.analog.shape == (32, 6)
    assert hyb.baseband.shape == (6, 4)
    assert trace.factorization_error <= 0.05


def test_penalty_params_validation():
    with pytest.raises(ValueError):
        PenaltyParams(mu0=0.5)
    with pytest.raises(ValueError):
        PenaltyParams(decay=1.5)


def test_hybrid_beamformer_unit_modulus_enforced():
    with pytest.raises(ValueError):
        HybridBeamformer(analog=np.full((4, 2), 0.5 + 0j),
                         baseband=np.zeros((2, 2), dtype=complex))
