"""Tests for the SDP core: real embedding, interior-point oracle checks,
Frank-Wolfe relaxation solver, extraction and repair."""

import math

import numpy as np
import pytest

from beamkit.metrics import DigitalBeamformer
from beamkit.model import ChannelSet, steering_vector
from beamkit.sdpcore import (
    InfeasibleDesignError,
    SdrProblem,
    TraceConstraint,
    embed_real,
    rank_one_extract,
    repair_feasibility,
    solve_linear_sdp,
    solve_sdr,
)


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


# ---------------------------------------------------------------------------
# embed_real


def test_embed_real_identity():
    np.testing.assert_allclose(embed_real(np.eye(2)), np.eye(4))


def test_embed_real_pauli_like():
    h = np.array([[0.0, -1j], [1j, 0.0]])
    w = np.linalg.eigvalsh(embed_real(h))
    np.testing.assert_allclose(np.sort(w), [-1.0, -1.0, 1.0, 1.0], atol=1e-12)


def test_embed_real_spectrum_doubles():
    rng = np.random.default_rng(11)
    for _ in range(8):
        h = random_hermitian(rng, 4)
        w_c = np.linalg.eigvalsh(h)
        w_r = np.linalg.eigvalsh(embed_real(h))
        np.testing.assert_allclose(np.sort(np.repeat(w_c, 2)), np.sort(w_r), atol=1e-10)


def test_embed_real_preserves_psdness():
    rng = np.random.default_rng(12)
    for _ in range(8):
        h = random_hermitian(rng, 5)
        psd_c = np.linalg.eigvalsh(h).min() >= 0
        psd_r = np.linalg.eigvalsh(embed_real(h)).min() >= -1e-12
        assert psd_c == psd_r
        g = h @ h.conj().T  # force PSD
        assert np.linalg.eigvalsh(embed_real(g)).min() >= -1e-10


# ---------------------------------------------------------------------------
# solve_linear_sdp


def test_linear_sdp_matches_eigenvalue_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        c = random_hermitian(rng, n)
        lam_max = np.linalg.eigvalsh(c)[-1]
        if lam_max <= 0:
            c = c - 2.0 * lam_max * np.eye(n)
            lam_max = np.linalg.eigvalsh(c)[-1]
        pool = solve_linear_sdp(
            [c], [TraceConstraint(mats=[np.eye(n)], sense="<=", rhs=1.0)])
        assert pool.converged
        assert abs(pool.objective_value - lam_max) <= 1e-6 * (1 + abs(lam_max))
        assert pool.duality_gap <= 1e-7 * (1 + abs(pool.objective_value))


def test_linear_sdp_zero_cost_returns_feasible_point():
    n = 4
    cons = [
        TraceConstraint(mats=[np.eye(n)], sense="<=", rhs=2.0),
        TraceConstraint(mats=[np.diag([1.0, 0, 0, 0]).astype(complex)], sense=">=", rhs=0.5),
    ]
    pool = solve_linear_sdp([np.zeros((n, n), dtype=complex)], cons)
    t = pool.blocks[0]
    assert abs(pool.objective_value) <= 1e-6
    assert np.trace(t).real <= 2.0 + 1e-6
    assert t[0, 0].real >= 0.5 - 1e-6
    assert np.linalg.eigvalsh(0.5 * (t + t.conj().T)).min() >= -1e-8


def test_linear_sdp_2x2_against_grid_oracle():
    # maximize Tr(C T), C = diag(1, -1), s.t. Tr(T) <= 2, T00 >= 1, T PSD.
    c = np.diag([1.0, -1.0]).astype(complex)
    cons = [
        TraceConstraint(mats=[np.eye(2)], sense="<=", rhs=2.0),
        TraceConstraint(mats=[np.diag([1.0, 0.0]).astype(complex)], sense=">=", rhs=1.0),
    ]
    pool = solve_linear_sdp([c], cons)

    # Brute force over T = R diag(d1,d2) R^H with a complex rotation.
    best = -np.inf
    for d1 in np.linspace(0, 2, 81):
        for d2 in np.linspace(0, 2 - d1, 41):
            for alpha in np.linspace(0, np.pi / 2, 25):
                ca, sa = np.cos(alpha), np.sin(alpha)
                r = np.array([[ca, -sa], [sa, ca]])
                t = r @ np.diag([d1, d2]) @ r.T
                if t[0, 0] >= 1.0 - 1e-12:
                    best = max(best, t[0, 0] - t[1, 1])
    assert abs(pool.objective_value - best) <= 2e-3
    np.testing.assert_allclose(pool.blocks[0], np.diag([2.0, 0.0]), atol=1e-5)


def test_linear_sdp_infeasible_reports_worst_constraint():
    n = 2
    cons = [
        TraceConstraint(mats=[np.eye(n)], sense="<=", rhs=1.0),
        TraceConstraint(mats=[np.eye(n)], sense=">=", rhs=5.0),
    ]
    with pytest.raises(InfeasibleDesignError) as err:
        solve_linear_sdp([np.eye(n, dtype=complex)], cons)
    assert err.value.most_violated is not None


def test_linear_sdp_multi_block():
    rng = np.random.default_rng(21)
    n = 3
    c1, c2 = random_hermitian(rng, n), random_hermitian(rng, n)
    # Independent trace caps decouple into two eigenvalue problems.
    cons = [
        TraceConstraint(mats=[np.eye(n), None], sense="<=", rhs=1.0),
        TraceConstraint(mats=[None, np.eye(n)], sense="<=", rhs=3.0),
    ]
    pool = solve_linear_sdp([c1, c2], cons)
    expect = max(np.linalg.eigvalsh(c1)[-1], 0) + 3.0 * max(np.linalg.eigvalsh(c2)[-1], 0)
    assert abs(pool.objective_value - expect) <= 1e-6 * (1 + abs(expect))


# ---------------------------------------------------------------------------
# solve_sdr


def _single_user_problem(rng, n=8, p_max=10.0, lam=0.0, tau=1e-6):
    h = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    noise = 1.0
    q = np.outer(h, h.conj()) / noise
    return h, SdrProblem(q_list=[q], steer_list=[], tau=[tau], gamma=[],
                         p_max=p_max, lambda_price=lam, n_vars=1)


def test_sdr_single_user_closed_form():
    rng = np.random.default_rng(3)
    h, problem = _single_user_problem(rng)
    pool = solve_sdr(problem)
    expect = math.log2(1.0 + problem.p_max * np.linalg.norm(h) ** 2)
    assert abs(pool.objective_value - expect) <= 1e-4 * (1 + expect)


def test_sdr_power_monotone_in_price():
    rng = np.random.default_rng(5)
    h, _ = _single_user_problem(rng)
    q = np.outer(h, h.conj())
    powers = []
    for lam in [0.0, 0.05, 0.2, 1.0, 5.0]:
        problem = SdrProblem(q_list=[q], steer_list=[], tau=[0.5], gamma=[],
                             p_max=10.0, lambda_price=lam, n_vars=1)
        pool = solve_sdr(problem)
        powers.append(np.trace(pool.blocks[0]).real)
    for a, b in zip(powers, powers[1:]):
        assert b <= a + 1e-6
    # At a huge price the power pins to the minimum meeting the floor.
    problem = SdrProblem(q_list=[q], steer_list=[], tau=[0.5], gamma=[],
                         p_max=10.0, lambda_price=100.0, n_vars=1)
    pool = solve_sdr(problem)
    p_min = 0.5 / np.linalg.norm(h) ** 2  # rank-one aligned beam
    assert abs(np.trace(pool.blocks[0]).real - p_min) <= 1e-3 * (1 + p_min)


def test_sdr_objective_monotone_nonincreasing_in_lambda():
    rng = np.random.default_rng(9)
    h, _ = _single_user_problem(rng)
    q = np.outer(h, h.conj())
    vals = []
    for lam in [0.0, 0.1, 0.5, 2.0]:
        problem = SdrProblem(q_list=[q], steer_list=[], tau=[0.5], gamma=[],
                             p_max=6.0, lambda_price=lam, n_vars=1)
        vals.append(solve_sdr(problem).objective_value)
    for a, b in zip(vals, vals[1:]):
        assert b <= a + 1e-8


def test_sdr_tiny_instance_against_brute_force():
    rng = np.random.default_rng(17)
    n = 2
    h1 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    h2 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    q1 = np.outer(h1, h1.conj())
    q2 = np.outer(h2, h2.conj())
    lam = 0.3
    p_max = 2.0
    problem = SdrProblem(q_list=[q1, q2], steer_list=[], tau=[1e-6, 1e-6], gamma=[],
                         p_max=p_max, lambda_price=lam, n_vars=2)
    pool = solve_sdr(problem)

    # Brute force over per-block rank-one atoms (optimal blocks are rank one
    # because each block sees a single rank-one quadratic form).
    def block_value(q, u, p):
        return math.log2(1.0 + p * (u.conj() @ q @ u).real)

    best = -np.inf
    alphas = np.linspace(0, np.pi / 2, 31)
    betas = np.linspace(0, 2 * np.pi, 41, endpoint=False)
    powers = np.linspace(0, p_max, 41)
    units = [np.array([np.cos(a), np.sin(a) * np.exp(1j * b)])
             for a in alphas for b in betas]
    for p1 in powers:
        best_1 = max(block_value(q1, u, p1) for u in units)
        for p2 in powers:
            if p1 + p2 > p_max + 1e-12:
                continue
            best_2 = max(block_value(q2, u, p2) for u in units)
            best = max(best, best_1 + best_2 - lam * (p1 + p2))
    assert pool.objective_value >= best - 1e-3
    assert pool.objective_value <= best + 0.05  # grid resolution slack


def test_sdr_with_floors_and_targets():
    rng = np.random.default_rng(23)
    n = 8
    h = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
    noise = 1.0
    q = [np.outer(h[m], h[m].conj()) / noise for m in range(2)]
    steer = [steering_vector(0.6, n), steering_vector(2.2, n)]
    problem = SdrProblem(q_list=q, steer_list=steer, tau=[2.0, 2.0],
                         gamma=[0.5, 0.5], p_max=8.0, lambda_price=0.2, n_vars=4)
    pool = solve_sdr(problem)
    pool.validate()
    for name, slack in pool.feasibility_residuals.items():
        scale = abs(problem.p_max) if name == "power" else 1.0
        assert slack >= -1e-6 * max(1.0, scale), name


def test_sdr_infeasible_raises():
    rng = np.random.default_rng(29)
    h, _ = _single_user_problem(rng)
    q = np.outer(h, h.conj())
    problem = SdrProblem(q_list=[q], steer_list=[], tau=[1e9], gamma=[],
                         p_max=1.0, lambda_price=0.0, n_vars=1)
    with pytest.raises(InfeasibleDesignError) as err:
        solve_sdr(problem)
    assert "sinr" in str(err.value.most_violated)


# ---------------------------------------------------------------------------
# rank_one_extract


def _pool_from_blocks(blocks):
    from beamkit.sdpcore import CovariancePool

    return CovariancePool(blocks=np.asarray(blocks, dtype=complex),
                          objective_value=0.0, feasibility_residuals={})


def test_extract_exact_rank_one():
    rng = np.random.default_rng(31)
    v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    pool = _pool_from_blocks([np.outer(v, v.conj())])
    f, defects = rank_one_extract(pool)
    col = f.matrix[:, 0]
    # equal up to a global phase; compare outer products
    np.testing.assert_allclose(np.outer(col, col.conj()), np.outer(v, v.conj()),
                               atol=1e-9 * np.linalg.norm(v) ** 2)
    assert defects[0] <= 1e-12


def test_extract_identity_tie_break():
    pool = _pool_from_blocks([np.eye(2)])
    f, defects = rank_one_extract(pool)
    np.testing.assert_allclose(f.matrix[:, 0], [1.0, 0.0], atol=1e-12)
    assert abs(defects[0] - 0.5) <= 1e-12


def test_extract_zero_block():
    pool = _pool_from_blocks([np.zeros((3, 3))])
    f, defects = rank_one_extract(pool)
    np.testing.assert_allclose(f.matrix[:, 0], 0.0)
    assert defects[0] == 0.0


def test_extract_phase_normalization():
    v = np.array([0.0, 1j * 2.0, 1.0 - 1j])
    pool = _pool_from_blocks([np.outer(v, v.conj())])
    f, _ = rank_one_extract(pool)
    col = f.matrix[:, 0]
    anchor = col[np.flatnonzero(np.abs(col) > 1e-9)[0]]
    assert abs(anchor.imag) <= 1e-12 and anchor.real > 0


# ---------------------------------------------------------------------------
# repair_feasibility


def _repair_setup(rng, n=8):
    h = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
    channels = ChannelSet(rows=h, path_gains=np.zeros((2, 1), complex),
                          path_angles=np.zeros((2, 1)), pathloss_db=np.zeros(2))
    steer = [steering_vector(0.5, n), steering_vector(2.4, n)]
    noise = 1.0
    q = [np.outer(h[m].conj(), h[m]) / noise for m in range(2)]
    problem = SdrProblem(q_list=q, steer_list=steer, tau=[1.5, 1.5],
                         gamma=[0.4, 0.4], p_max=20.0, lambda_price=0.1, n_vars=4)
    return channels, problem, noise


def test_repair_feasible_input_unchanged():
    rng = np.random.default_rng(41)
    channels, problem, noise = _repair_setup(rng)
    cols = np.zeros((8, 4), dtype=complex)
    for m in range(2):
        hm = channels.rows[m].conj()
        cols[:, m] = 2.5 * hm / np.linalg.norm(hm)
    cols[:, 2] = 1.5 * problem.steer_list[0]
    cols[:, 3] = 1.5 * problem.steer_list[1]
    f = DigitalBeamformer(cols)
    res = repair_feasibility(f, problem, channels, noise)
    if res.feasible and not res.changed:
        np.testing.assert_array_equal(res.beamformer.matrix, f.matrix)
    assert res.feasible


def test_repair_power_overshoot_common_rescale():
    rng = np.random.default_rng(43)
    channels, problem, noise = _repair_setup(rng)
    cols = np.zeros((8, 4), dtype=complex)
    for m in range(2):
        hm = channels.rows[m].conj()
        cols[:, m] = hm / np.linalg.norm(hm)
    cols[:, 2] = problem.steer_list[0]
    cols[:, 3] = problem.steer_list[1]
    cols *= math.sqrt(2.0 * problem.p_max / np.sum(np.abs(cols) ** 2))
    f = DigitalBeamformer(cols)
    res = repair_feasibility(f, problem, channels, noise)
    assert res.beamformer.total_power <= problem.p_max * (1 + 1e-9)
    if res.feasible:
        ratio = res.beamformer.matrix / f.matrix
        np.testing.assert_allclose(ratio, ratio.flat[0], rtol=1e-9)
        np.testing.assert_allclose(abs(ratio.flat[0]), 1 / math.sqrt(2), rtol=1e-9)


def test_repair_lifts_violated_floors():
    rng = np.random.default_rng(47)
    channels, problem, noise = _repair_setup(rng)
    cols = np.zeros((8, 4), dtype=complex)
    for m in range(2):
        hm = channels.rows[m].conj()
        cols[:, m] = 0.05 * hm / np.linalg.norm(hm)  # far below the SINR floor
    cols[:, 2] = 0.05 * problem.steer_list[0]
    cols[:, 3] = 0.05 * problem.steer_list[1]
    f = DigitalBeamformer(cols)
    res = repair_feasibility(f, problem, channels, noise)
    assert res.feasible
    sinrs = [abs(channels.rows[m] @ res.beamformer.matrix[:, m]) ** 2
             / (sum(abs(channels.rows[m] @ res.beamformer.matrix[:, n]) ** 2
                    for n in range(4) if n != m) + noise)
             for m in range(2)]
    for m, s in enumerate(sinrs):
        assert s >= problem.tau[m] * (1 - 1e-6)


def test_repair_flags_unreachable_floors():
    rng = np.random.default_rng(53)
    channels, problem, noise = _repair_setup(rng)
    problem = SdrProblem(q_list=problem.q_list, steer_list=problem.steer_list,
                         tau=[1e8, 1e8], gamma=problem.gamma, p_max=1e-4,
                         lambda_price=0.1, n_vars=4)
    cols = 1e-3 * (rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4)))
    res = repair_feasibility(DigitalBeamformer(cols), problem, channels, noise)
    assert not res.feasible
    assert max(res.violations.values()) > 0
