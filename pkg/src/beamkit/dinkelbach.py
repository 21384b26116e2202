"""Fractional-programming outer loop: price updates, Q refresh, and the
fully-digital beamformer design."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import DigitalBeamformer, build_q, dissipated_power, sum_rate
from .model import ChannelSet, ScenarioConfig, steering_vector
from .sdpcore import (
    InfeasibleDesignError,
    SdrProblem,
    rank_one_extract,
    repair_feasibility,
    solve_sdr,
)

MAX_OUTER_ITERATIONS = 50


@dataclass
class DinkelbachState:
    """Trace of one fractional-programming run."""

    price: float
    iterate: DigitalBeamformer
    q_cache: list
    rel_change: float
    iteration: int
    lambda_trace: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False          # inner solve stopped improving the iterate
    fw_iterations: list = field(default_factory=list)
    rank_one_defects: list = field(default_factory=list)
    repair_feasible: bool = True

    def validate(self):
        if self.price < 0:
            raise ValueError("price must be nonnegative")
        lam = np.asarray(self.lambda_trace)
        if lam.size > 1 and np.any(np.diff(lam) < -1e-6 * np.abs(lam[:-1])):
            raise ValueError("price sequence must be non-decreasing within tolerance")


def price_update(channels: ChannelSet, f: DigitalBeamformer, cfg: ScenarioConfig) -> float:
    """Dinkelbach price: achievable sum rate over dissipated power."""
    rate = sum_rate(channels, f, cfg.noise_power)
    power = dissipated_power(f, cfg.amplifier_efficiency, cfg.n_rfc, cfg.rfc_static_power)
    return rate / power


def initial_beamformer(channels: ChannelSet, cfg: ScenarioConfig,
                       total_power: float = None) -> DigitalBeamformer:
    """Equal-power start: maximum-ratio user columns, steered target columns,
    scaled to spend the full power budget (or the given total)."""
    k = cfg.n_streams
    cols = np.zeros((cfg.n_tx, k), dtype=complex)
    budget = cfg.max_tx_power if total_power is None else min(total_power,
                                                              cfg.max_tx_power)
    per_col = math.sqrt(budget / k)
    for m in range(cfg.n_users):
        h = channels.rows[m].conj()
        norm = np.linalg.norm(h)
        cols[:, m] = per_col * (h / norm if norm > 0 else 0.0)
    for l in range(cfg.n_targets):
        a = steering_vector(cfg.target_angles[l], cfg.n_tx,
                            cfg.antenna_spacing, cfg.carrier_wavelength)
        cols[:, cfg.n_users + l] = per_col * a
    return DigitalBeamformer(cols)


def refine_powers(channels: ChannelSet, f: DigitalBeamformer, cfg: ScenarioConfig,
                  price: float, problem: SdrProblem, max_steps: int = 40):
    """Polish the per-column powers of an extracted beamformer.

    Rank-one extraction keeps good directions but imperfect powers.  With the
    directions frozen the subtractive objective is a smooth function of the K
    column powers, so a short projected gradient ascent (power simplex cap,
    then floor repair) claws back most of the extraction loss.  The refined
    beamformer is returned only when it improves the true subtractive
    objective.
    """
    mat = f.matrix
    norms = np.linalg.norm(mat, axis=0)
    if np.any(norms <= 1e-30):
        return f
    units = mat / norms[None, :]
    m_users = cfg.n_users
    gains = np.abs(channels.rows @ units) ** 2          # (M, K)
    own = gains[np.arange(m_users), np.arange(m_users)]
    noise = cfg.noise_power
    lam_eff = cfg.amplifier_efficiency * price
    p_max = cfg.max_tx_power

    def subtractive(fb):
        return (sum_rate(channels, fb, noise)
                - price * dissipated_power(fb, cfg.amplifier_efficiency,
                                           cfg.n_rfc, cfg.rfc_static_power))

    def value(q):
        denom = gains @ q - own * q[:m_users] + noise
        return float(np.sum(np.log2(1.0 + own * q[:m_users] / denom)) - lam_eff * np.sum(q))

    q = norms ** 2
    best_q = q.copy()
    best_v = value(q)
    step = max(np.max(q), 1.0)
    for _ in range(max_steps):
        denom = gains @ q - own * q[:m_users] + noise
        sig = own * q[:m_users]
        grad = np.full(q.size, -lam_eff)
        grad[:m_users] += own / (LN2_ * (denom + sig))
        # interference of column k into user m: -(sig_m * G_mk) / (D_m (D_m + sig_m))
        w = sig / (LN2_ * denom * (denom + sig))
        grad -= w @ gains
        grad[:m_users] += w * own  # remove self term added by the row product
        improved = False
        while step > 1e-12 * max(1.0, np.max(q)):
            q_new = np.maximum(q + step * grad, 0.0)
            total = q_new.sum()
            if total > p_max:
                q_new *= p_max / total
            if value(q_new) > value(q) + 1e-15:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        q = q_new
        step *= 2.0
        if value(q) > best_v:
            best_v = value(q)
            best_q = q.copy()

    candidate = DigitalBeamformer(units * np.sqrt(best_q)[None, :])
    rep = repair_feasibility(candidate, problem, channels, noise)
    if not rep.feasible:
        return f
    if subtractive(rep.beamformer) > subtractive(f):
        return rep.beamformer
    return f


LN2_ = math.log(2.0)


def _steered_target_candidate(channels: ChannelSet, f: DigitalBeamformer,
                              cfg: ScenarioConfig, problem: SdrProblem):
    """Rank-one realization with steering-aligned target columns.

    The relaxation often returns target blocks that mix several directions;
    their principal eigenvector then under-delivers beampattern gain and the
    repair stage burns extra power.  Pointing target column l exactly along
    a(theta_l) with just enough power to meet its floor is the cheapest
    rank-one realization of those blocks when targets sit away from the
    users.
    """
    if not problem.steer_list:
        return None
    mat = f.matrix.copy()
    m_users = cfg.n_users
    for l, steer in enumerate(problem.steer_list):
        col = m_users + l
        if col >= mat.shape[1]:
            break
        others = sum(np.abs(steer.conj() @ mat[:, n]) ** 2
                     for n in range(mat.shape[1]) if n != col)
        need = max(problem.gamma[l] * (1.0 + 1e-9) - others, 0.0)
        mat[:, col] = math.sqrt(need) * steer
    return DigitalBeamformer(mat)


def _zf_user_candidate(channels: ChannelSet, f: DigitalBeamformer,
                       cfg: ScenarioConfig, problem: SdrProblem):
    """Interference-nulling realization of the user columns.

    The relaxation's rank-one data matrices point user columns along the
    channels regardless of cross-user leakage; when the maximum-ratio
    signal-to-interference ratio sits below the SINR floor no power scaling
    can repair it.  Zero-forcing directions (same column powers) cover that
    regime; the keep-best selection decides which realization survives.
    """
    m_users = cfg.n_users
    if m_users < 2 or channels.rows.shape[1] < m_users:
        return None
    rows = channels.rows
    gram = rows @ rows.conj().T
    try:
        pinv = rows.conj().T @ np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        return None
    mat = f.matrix.copy()
    for m in range(m_users):
        direction = pinv[:, m]
        norm = np.linalg.norm(direction)
        if norm <= 1e-30:
            return None
        mat[:, m] = np.linalg.norm(f.matrix[:, m]) * direction / norm
    steered = _steered_target_candidate(
        channels, DigitalBeamformer(mat), cfg, problem)
    return steered if steered is not None else DigitalBeamformer(mat)


def _build_problem(channels: ChannelSet, f: DigitalBeamformer, cfg: ScenarioConfig,
                   price: float, gammas=None) -> SdrProblem:
    q_list = [build_q(channels, f, m, cfg.noise_power) for m in range(cfg.n_users)]
    gammas = cfg.beampattern_thresholds if gammas is None else gammas
    steer = [steering_vector(th, cfg.n_tx, cfg.antenna_spacing, cfg.carrier_wavelength)
             for th in cfg.target_angles[: len(gammas)]]
    # The SDR prices transmitted watts; the subtractive Dinkelbach objective
    # prices dissipated watts, so the amplifier efficiency folds in here.
    return SdrProblem(
        q_list=q_list,
        steer_list=steer,
        tau=list(cfg.sinr_thresholds),
        gamma=list(gammas),
        p_max=cfg.max_tx_power,
        lambda_price=cfg.amplifier_efficiency * price,
        n_vars=cfg.n_streams,
    )


def lifted_subtractive_value(pool, price: float, cfg: ScenarioConfig) -> float:
    """Subtractive objective of a relaxation solution (static power added back)."""
    return pool.objective_value - price * cfg.n_rfc * cfg.rfc_static_power


def inner_step(channels: ChannelSet, problem: SdrProblem, cfg: ScenarioConfig,
               price: float):
    """Step (b) of the outer loop: the priced relaxation solution.

    The lift of the current iterate is itself a feasible relaxation point of
    value exactly zero, so a cold-started conditional-gradient run that lands
    below zero is discarded in its favor; the step never hands the loop a
    relaxation value under -1e-6.
    """
    pool = solve_sdr(problem)
    if lifted_subtractive_value(pool, price, cfg) < 0.0:
        return None
    return pool


def design_digital(channels: ChannelSet, cfg: ScenarioConfig,
                   enforce_gamma: bool = True):
    """Run the outer fractional-programming loop to the price fixed point.

    Per outer iteration: refresh the Q matrices at the current iterate, solve
    the priced SDR, extract and repair a rank-one beamformer, then update the
    price.  Stops when the relative price change drops to tol_dinkelbach, the
    inner solve stops improving the subtractive objective, or after 50
    iterations (flagged non-converged).  With enforce_gamma=False the sensing
    floors are dropped (communication-only variant).

    Returns (DigitalBeamformer, DinkelbachState).
    """
    return _design_digital_pass(channels, cfg, enforce_gamma, None)


def _design_digital_pass(channels: ChannelSet, cfg: ScenarioConfig,
                         enforce_gamma: bool, init_power):
    gammas = cfg.beampattern_thresholds if enforce_gamma else ()
    f_cur = initial_beamformer(channels, cfg, total_power=init_power)
    price = price_update(channels, f_cur, cfg)
    trace = [price]
    fw_iters = []
    defects_last = []
    problem = None
    rel = math.inf
    converged = False
    stalled = False
    feasible_found = False
    worst_violation = None
    it = 0
    for it in range(1, MAX_OUTER_ITERATIONS + 1):
        problem = _build_problem(channels, f_cur, cfg, price, gammas=gammas)
        inner_reps = 10 if cfg.q_inner_loop else 1
        at_fixed_point = False
        f_new = None
        for _ in range(inner_reps):
            try:
                pool = inner_step(channels, problem, cfg, price)
            except InfeasibleDesignError:
                # A recovery anchor can push the frozen-interference floors
                # beyond the budget; with a feasible iterate in hand that
                # just means the excursion is over.
                if not feasible_found:
                    raise
                at_fixed_point = True
                break
            if pool is None:
                # The relaxation could not beat the current lifted iterate:
                # the loop is at its fixed point within solver accuracy.
                at_fixed_point = True
                break
            f_ext, defects = rank_one_extract(pool)
            candidates = [f_ext]
            steered = _steered_target_candidate(channels, f_ext, cfg, problem)
            if steered is not None:
                candidates.append(steered)
            nulled = _zf_user_candidate(channels, f_ext, cfg, problem)
            if nulled is not None:
                candidates.append(nulled)
            f_new = None
            best_val = -math.inf
            fallback = None
            fallback_violation = math.inf
            for cand in candidates:
                rep = repair_feasibility(cand, problem, channels, cfg.noise_power)
                if not rep.feasible:
                    v = max(rep.violations.values())
                    if v < fallback_violation:
                        fallback_violation = v
                        fallback = rep.beamformer
                    continue
                refined = refine_powers(channels, rep.beamformer, cfg, price, problem)
                val = (sum_rate(channels, refined, cfg.noise_power)
                       - price * dissipated_power(refined, cfg.amplifier_efficiency,
                                                  cfg.n_rfc, cfg.rfc_static_power))
                if val > best_val:
                    best_val = val
                    f_new = refined
            if f_new is None:
                # No feasible rank-one realization yet: re-anchor the Q
                # matrices at the least-infeasible candidate and keep going;
                # the refreshed interference steers later extractions away
                # from the users (the usual MMSE-iteration behavior).
                worst_violation = fallback_violation
                break
            if not cfg.q_inner_loop:
                break
            refreshed = _build_problem(channels, f_new, cfg, price, gammas=gammas)
            drift = max(
                np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)
                for a, b in zip(refreshed.q_list, problem.q_list)
            )
            problem = refreshed
            if drift <= 1e-6:
                break
        if at_fixed_point:
            stalled = True
            converged = feasible_found
            break
        if f_new is None:
            if fallback is None:
                stalled = True
                break
            f_cur = fallback
            continue
        defects_last = list(defects)
        fw_iters.append(pool.fw_iterations)

        # Monotone safeguard: accept the step only if it does not lower the
        # subtractive objective R - lambda * P_diss (zero at the current
        # iterate by the price definition).  Inexact inner solves and
        # rank-one losses can otherwise break the price monotonicity.
        value_new = (sum_rate(channels, f_new, cfg.noise_power)
                     - price * dissipated_power(f_new, cfg.amplifier_efficiency,
                                                cfg.n_rfc, cfg.rfc_static_power))
        if feasible_found and value_new < -1e-9 * (1.0 + abs(price)):
            stalled = True
            converged = True
            break
        new_price = price_update(channels, f_new, cfg)
        rel = (new_price - price) / new_price if new_price > 0 else 0.0
        f_cur = f_new
        if not feasible_found:
            # First feasible iterate: the reported price sequence starts from
            # the initializer only when that keeps it non-decreasing.
            trace = trace if new_price >= trace[0] else []
            trace.append(new_price)
            price = new_price
        elif new_price >= price:
            trace.append(new_price)
            price = new_price
        feasible_found = True
        if abs(rel) <= cfg.tol_dinkelbach:
            converged = True
            break

    state = DinkelbachState(
        price=price,
        iterate=f_cur,
        q_cache=list(problem.q_list) if problem is not None else [],
        rel_change=rel if math.isfinite(rel) else 0.0,
        iteration=it,
        lambda_trace=trace,
        converged=converged,
        stalled=stalled,
        fw_iterations=fw_iters,
        rank_one_defects=defects_last,
        repair_feasible=feasible_found,
    )
    if not feasible_found:
        raise InfeasibleDesignError(
            "no feasible rank-one design found (violation "
            f"{worst_violation if worst_violation is not None else 'n/a'})",
            most_violated=None)
    return f_cur, state
