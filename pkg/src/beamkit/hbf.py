"""Hybrid factorization: penalty continuation with Riemannian conjugate
gradient on the unit-modulus manifold, alternating with least-squares
baseband updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import DigitalBeamformer


class RankDeficientError(RuntimeError):
    """Raised when the analog matrix loses column rank in the LS update."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


@dataclass
class RcgParams:
    max_iters: int = 300
    armijo_c1: float = 1e-4
    backtrack_ratio: float = 0.5
    restart_period: int = 0      # 0: restart every n_tx iterations
    grad_tol: float = 1e-6


@dataclass
class PenaltyParams:
    """Continuation schedule: mu starts above 1 and grows as mu <- mu / decay."""

    mu0: float = 1.5
    decay: float = 0.5
    max_continuation_rounds: int = 20
    max_alternation_sweeps: int = 50
    rcg: RcgParams = field(default_factory=RcgParams)
    hinge: bool = False
    max_inits: int = 8           # analog initializations tried per design
    init_exit_error: float = 0.01

    def __post_init__(self):
        if not self.mu0 > 1.0:
            raise ValueError("mu0 must exceed 1")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")


@dataclass
class HybridBeamformer:
    """Unit-modulus analog matrix F_RF (N_t x M_t) and baseband F_BB (M_t x K)."""

    analog: np.ndarray
    baseband: np.ndarray

    def __post_init__(self):
        self.analog = np.asarray(self.analog, dtype=complex)
        self.baseband = np.asarray(self.baseband, dtype=complex)
        mod_err = np.max(np.abs(np.abs(self.analog) - 1.0))
        if mod_err > 1e-12:
            raise ValueError(f"analog entries must be unit modulus (err {mod_err:.2e})")
        if self.analog.shape[1] != self.baseband.shape[0]:
            raise ValueError("analog/baseband dimensions do not chain")

    @property
    def n_tx(self) -> int:
        return self.analog.shape[0]

    @property
    def n_rfc(self) -> int:
        return self.analog.shape[1]

    def composite(self) -> np.ndarray:
        return self.analog @ self.baseband

    def as_digital(self) -> DigitalBeamformer:
        return DigitalBeamformer(self.composite())


@dataclass
class HbfTrace:
    rounds: list = field(default_factory=list)   # (mu, fact_error, overshoot, rcg_iters)
    alternation_sweeps: int = 0
    rcg_iterations: int = 0
    power_converged: bool = True
    rescaled: bool = False
    factorization_error: float = 0.0
    n_inits: int = 1


def penalty_objective(f_rf, f_bb, target, mu: float, p_max: float,
                      hinge: bool = False) -> float:
    """||target - F_RF F_BB||_F^2 + mu * (||F_RF F_BB||_F^2 - P_t).

    The hinge variant replaces the penalty term with mu * max(0, overshoot).
    """
    prod = f_rf @ f_bb
    fit = float(np.sum(np.abs(target - prod) ** 2))
    overshoot = float(np.sum(np.abs(prod) ** 2)) - p_max
    if hinge:
        return fit + mu * max(0.0, overshoot)
    return fit + mu * overshoot


def euclidean_grad(f_rf, f_bb, target, mu: float, hinge_active: bool = True) -> np.ndarray:
    """Conjugate-Wirtinger gradient of the penalized fit with respect to F_RF.

    Differentiating the penalized objective gives
    2 ((1 + mu) F_RF F_BB F_BB^H - target F_BB^H); the factor multiplying the
    penalty term drops to zero when a hinge penalty is inactive.
    """
    bbh = f_bb @ f_bb.conj().T
    tbh = target @ f_bb.conj().T
    weight = (1.0 + mu) if hinge_active else 1.0
    return 2.0 * (weight * (f_rf @ bbh) - tbh)


def riemannian_grad(euclid: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space of the unit-modulus
    manifold: G - Re{G o conj(X)} o X (entrywise)."""
    return euclid - (euclid * point.conj()).real * point


def retract(point: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Entrywise renormalization (x + s) / |x + s|; dead entries keep x."""
    moved = point + step
    mag = np.abs(moved)
    out = np.where(mag > 1e-300, moved / np.where(mag > 1e-300, mag, 1.0), point)
    return np.where(step == 0, point, out)


def rcg_solve(target, f_bb, f_rf0, mu: float, params: RcgParams = None,
              p_max: float = None, hinge: bool = False):
    """Polak-Ribiere+ Riemannian conjugate gradient on the unit-modulus manifold.

    Minimizes the penalized fit at fixed baseband with Armijo backtracking,
    tangent transport of the previous direction, and periodic restarts.
    Returns (F_RF, iterations, final riemannian gradient norm).
    """
    params = params or RcgParams()
    n_tx = f_rf0.shape[0]
    restart = params.restart_period or n_tx
    bbh = f_bb @ f_bb.conj().T
    tbh = target @ f_bb.conj().T
    t_norm_sq = float(np.sum(np.abs(target) ** 2))

    def objective_and_power(x):
        prod = x @ f_bb
        fit = float(np.sum(np.abs(target - prod) ** 2))
        power = float(np.sum(np.abs(prod) ** 2))
        return fit, power

    def value(fit, power):
        over = power - (p_max if p_max is not None else 0.0)
        if hinge:
            return fit + mu * max(0.0, over)
        return fit + mu * (power - (p_max or 0.0))

    x = f_rf0.copy()
    fit, power = objective_and_power(x)
    f_val = value(fit, power)
    if not math.isfinite(f_val):
        raise FloatingPointError("penalized objective is not finite (mu overflow?)")

    grad_e = None
    direction = None
    g_prev = None
    step = 1.0
    it = 0
    g_norm = 0.0
    for it in range(1, params.max_iters + 1):
        active = (not hinge) or (power > (p_max or 0.0))
        grad_e = 2.0 * (((1.0 + mu) if active else 1.0) * (x @ bbh) - tbh)
        g = riemannian_grad(grad_e, x)
        g_norm = float(np.linalg.norm(g))
        if g_norm <= params.grad_tol * (1.0 + abs(f_val)):
            break
        if direction is None or it % restart == 0:
            direction = -g
        else:
            g_prev_t = riemannian_grad(g_prev, x)      # transport to current tangent
            d_t = riemannian_grad(direction, x)
            denom = float(np.vdot(g_prev, g_prev).real)
            beta = max(0.0, float(np.vdot(g, g - g_prev_t).real) / max(denom, 1e-300))
            direction = -g + beta * d_t
            if float(np.vdot(direction, g).real) > -1e-12 * g_norm ** 2:
                direction = -g
        g_prev = g

        slope = float(np.vdot(g, direction).real)
        alpha = max(step * 2.0, 1e-12)
        accepted = False
        for _ in range(60):
            x_new = retract(x, alpha * direction)
            fit_n, power_n = objective_and_power(x_new)
            f_new = value(fit_n, power_n)
            if f_new <= f_val + params.armijo_c1 * alpha * slope:
                accepted = True
                break
            alpha *= params.backtrack_ratio
        if not accepted:
            break
        step = alpha
        x = x_new
        fit, power, f_val = fit_n, power_n, f_new
        if not math.isfinite(f_val):
            raise FloatingPointError("penalized objective is not finite (mu overflow?)")
    return x, it, g_norm


def ls_baseband(f_rf, target) -> np.ndarray:
    """Least-squares baseband (F_RF^H F_RF)^{-1} F_RF^H target."""
    gram = f_rf.conj().T @ f_rf
    w = np.linalg.eigvalsh(0.5 * (gram + gram.conj().T))
    cond = float(w[-1] / w[0]) if w[0] > 0 else math.inf
    if not math.isfinite(cond) or cond > 1e12:
        raise RankDeficientError(
            f"analog matrix is rank deficient (condition number {cond:.3e})", cond=cond)
    return np.linalg.solve(gram, f_rf.conj().T @ target)


def init_analog(target, n_rfc: int) -> np.ndarray:
    """Entrywise phases of the first n_rfc left singular vectors of the target.

    Phase patterns of distinct singular vectors occasionally coincide, which
    would start the alternation from a rank-deficient analog matrix; a
    deterministic DFT codebook covers that corner.
    """
    n_tx = target.shape[0]
    u, _, _ = np.linalg.svd(target, full_matrices=True)
    f_rf = np.exp(1j * np.angle(u[:, :n_rfc]))
    gram = f_rf.conj().T @ f_rf
    w = np.linalg.eigvalsh(0.5 * (gram + gram.conj().T))
    if w[0] <= 0 or w[-1] / w[0] > 1e10:
        grid = np.arange(n_tx)[:, None] * np.arange(n_rfc)[None, :]
        f_rf = np.exp(2j * np.pi * grid / n_tx)
    return f_rf


def _ls_or_pinv(f_rf, target):
    """Internal LS update tolerating transiently ill-conditioned analog iterates."""
    try:
        return ls_baseband(f_rf, target)
    except RankDeficientError:
        return np.linalg.lstsq(f_rf, target, rcond=1e-10)[0]


def gs_init(target, n_rfc: int, iters: int = 50) -> np.ndarray:
    """Alternating-projection initializer (phases of the best subspace fit)."""
    u = np.linalg.svd(target, full_matrices=True)[0]
    x = np.exp(1j * np.angle(u[:, :n_rfc]))
    for _ in range(iters):
        b = _ls_or_pinv(x, target)
        y = target @ np.linalg.pinv(b)
        x = np.exp(1j * np.angle(np.where(np.abs(y) > 1e-30, y, x)))
    return x


def _joint_polish(target, f_rf, params: PenaltyParams):
    """Variable-projection refinement: RCG on the fit with the LS baseband
    folded in.  At the least-squares point the baseband gradient vanishes, so
    the analog gradient at the refreshed baseband is the exact gradient of
    the projected objective (envelope theorem)."""
    rcg = params.rcg
    n_tx = f_rf.shape[0]
    restart = rcg.restart_period or n_tx
    x = f_rf.copy()

    def fit_and_bb(xx):
        bb = _ls_or_pinv(xx, target)
        res = target - xx @ bb
        return float(np.sum(np.abs(res) ** 2)), bb

    f_val, f_bb = fit_and_bb(x)
    g_prev = None
    direction = None
    step = 1.0
    it = 0
    for it in range(1, rcg.max_iters + 1):
        grad_e = 2.0 * (x @ (f_bb @ f_bb.conj().T) - target @ f_bb.conj().T)
        g = riemannian_grad(grad_e, x)
        g_norm = float(np.linalg.norm(g))
        if g_norm <= rcg.grad_tol * (1.0 + f_val):
            break
        if direction is None or it % restart == 0:
            direction = -g
        else:
            g_prev_t = riemannian_grad(g_prev, x)
            denom = float(np.vdot(g_prev, g_prev).real)
            beta = max(0.0, float(np.vdot(g, g - g_prev_t).real) / max(denom, 1e-300))
            direction = -g + beta * riemannian_grad(direction, x)
            if float(np.vdot(direction, g).real) > -1e-12 * g_norm ** 2:
                direction = -g
        g_prev = g
        slope = float(np.vdot(g, direction).real)
        alpha = max(step * 2.0, 1e-12)
        accepted = False
        for _ in range(60):
            x_new = retract(x, alpha * direction)
            f_new, bb_new = fit_and_bb(x_new)
            if f_new <= f_val + rcg.armijo_c1 * alpha * slope:
                accepted = True
                break
            alpha *= rcg.backtrack_ratio
        if not accepted:
            break
        step = alpha
        x, f_val, f_bb = x_new, f_new, bb_new
    return x, f_bb, it


def _factor_once(t_mat, f_rf0, cfg, params: PenaltyParams):
    """One penalty-continuation run from a given analog initialization."""
    t_norm = math.sqrt(float(np.sum(np.abs(t_mat) ** 2)))
    p_max = cfg.max_tx_power
    f_rf = f_rf0
    f_bb = _ls_or_pinv(f_rf, t_mat)
    mu = params.mu0
    rounds = []
    total_rcg = 0
    sweeps_total = 0
    power_ok = False
    err = float(np.linalg.norm(t_mat - f_rf @ f_bb) / t_norm)
    for _ in range(params.max_continuation_rounds):
        round_rcg = 0
        for _ in range(params.max_alternation_sweeps):
            f_rf, iters, _ = rcg_solve(t_mat, f_bb, f_rf, mu, params.rcg,
                                       p_max=p_max, hinge=params.hinge)
            f_bb = _ls_or_pinv(f_rf, t_mat)
            round_rcg += iters
            sweeps_total += 1
            new_err = float(np.linalg.norm(t_mat - f_rf @ f_bb) / t_norm)
            delta, err = abs(err - new_err), new_err
            if delta <= cfg.tol_factorization:
                break
        power = float(np.sum(np.abs(f_rf @ f_bb) ** 2))
        if params.hinge and power <= p_max:
            # Power penalty inactive: block-coordinate sweeps stall well above
            # the joint optimum, so finish the fit with the projected RCG.
            f_rf, f_bb, polish_iters = _joint_polish(t_mat, f_rf, params)
            round_rcg += polish_iters
            err = float(np.linalg.norm(t_mat - f_rf @ f_bb) / t_norm)
        overshoot = float(np.sum(np.abs(f_rf @ f_bb) ** 2)) - p_max
        rounds.append((mu, err, overshoot, round_rcg))
        total_rcg += round_rcg
        if overshoot <= cfg.tol_power:
            power_ok = True
            break
        mu = mu / params.decay
    return f_rf, f_bb, err, rounds, sweeps_total, total_rcg, power_ok


def design_hybrid(target: DigitalBeamformer, cfg, params: PenaltyParams = None):
    """Factor the digital beamformer into unit-modulus analog and baseband parts.

    Each attempt alternates RCG analog updates with LS baseband updates until
    the relative factorization error stops changing by more than
    tol_factorization, refines with a variable-projection RCG pass, then
    escalates the penalty until the power overshoot falls under tol_power.
    The factorization landscape has basins, so a few deterministic analog
    initializations (alternating-projection, singular-vector phases, fixed
    random phases) are tried and the best fit kept.  A final exact rescale of
    the baseband enforces the power budget regardless.

    Returns (HybridBeamformer, HbfTrace).
    """
    params = params or PenaltyParams(
        hinge=not getattr(cfg, "penalty_paper_form", False))
    t_mat = target.matrix
    t_norm = math.sqrt(float(np.sum(np.abs(t_mat) ** 2)))
    if t_norm <= 0:
        raise ValueError("cannot factor a zero beamformer")
    p_max = cfg.max_tx_power
    n_rfc = cfg.n_rfc

    init_rng = np.random.default_rng(271828)
    best = None
    n_inits = 0
    for idx in range(max(1, params.max_inits)):
        if idx == 0:
            f_rf0 = gs_init(t_mat, n_rfc)
        elif idx == 1:
            f_rf0 = init_analog(t_mat, n_rfc)
        else:
            f_rf0 = np.exp(1j * init_rng.uniform(0.0, 2.0 * np.pi,
                                                 (t_mat.shape[0], n_rfc)))
        result = _factor_once(t_mat, f_rf0, cfg, params)
        n_inits += 1
        if best is None or result[2] < best[2]:
            best = result
        if best[2] <= params.init_exit_error:
            break
    f_rf, f_bb, err, rounds, sweeps_total, total_rcg, power_ok = best

    power = float(np.sum(np.abs(f_rf @ f_bb) ** 2))
    rescaled = False
    if power > p_max:
        f_bb = f_bb * math.sqrt(p_max / power)
        rescaled = True
    trace = HbfTrace(rounds=rounds)
    trace.alternation_sweeps = sweeps_total
    trace.rcg_iterations = total_rcg
    trace.power_converged = power_ok
    trace.rescaled = rescaled
    trace.n_inits = n_inits
    trace.factorization_error = float(np.linalg.norm(t_mat - f_rf @ f_bb) / t_norm)
    return HybridBeamformer(analog=f_rf, baseband=f_bb), trace
