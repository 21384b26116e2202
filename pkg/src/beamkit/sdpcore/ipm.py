"""Dense primal-dual interior-point engine for small block-diagonal SDPs.

Solves, over complex Hermitian PSD blocks X_1..X_K of a common dimension and
nonnegative scalar variables x:

    maximize   sum_b <C_b, X_b> + c_lp . x
    s.t.       sum_b <A_ib, X_b> + (A_lp x)_i  <=  b_i,   i = 1..m
               X_b PSD, x >= 0

using Nesterov-Todd scaling with a Mehrotra predictor-corrector step and a
dense m x m Schur complement.  Problem sizes here are tiny (n <= 128,
m <= 16), so everything is dense and batched over blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def embed_real(h: np.ndarray) -> np.ndarray:
    """Real-symmetric embedding [[Re H, -Im H], [Im H, Re H]] of a Hermitian H.

    The embedding's eigenvalues are those of H, each with doubled multiplicity,
    and it is PSD exactly when H is.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("embed_real expects a square matrix")
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


@dataclass
class BlockProblem:
    """Internal normalized form: all constraints '<=', maximization."""

    c_psd: np.ndarray          # (K, n, n) Hermitian costs
    a_psd: np.ndarray          # (m, K, n, n) Hermitian constraint matrices
    rhs: np.ndarray            # (m,)
    c_lp: np.ndarray = None    # (k,) costs of nonnegative scalar vars
    a_lp: np.ndarray = None    # (m, k)

    def __post_init__(self):
        self.c_psd = np.asarray(self.c_psd, dtype=complex)
        self.a_psd = np.asarray(self.a_psd, dtype=complex)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.c_lp is None:
            self.c_lp = np.zeros(0)
        if self.a_lp is None:
            self.a_lp = np.zeros((self.rhs.size, 0))
        self.c_lp = np.asarray(self.c_lp, dtype=float)
        self.a_lp = np.asarray(self.a_lp, dtype=float)


@dataclass
class IpmSolution:
    blocks: np.ndarray         # (K, n, n) primal PSD blocks
    lp: np.ndarray             # (k,) nonnegative scalars
    slacks: np.ndarray         # (m,) constraint slacks b - A(X)
    dual_y: np.ndarray         # (m,) multipliers (>= 0 for '<=' rows)
    objective: float
    duality_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def _herm(x):
    return 0.5 * (x + x.conj().swapaxes(-1, -2))



def _batch_inner(a, b):
    """Re <A_b, B_b> summed over blocks; a, b are (..., K, n, n)."""
    return np.einsum("...kij,...kji->...", a, b).real


def _nt_scaling(x, z):
    """NT scaling point W per block: W Z W = X (batched)."""
    lx, qx = np.linalg.eigh(x)
    lx = np.clip(lx, 1e-300, None)
    xh = (qx * np.sqrt(lx)[..., None, :]) @ qx.conj().swapaxes(-1, -2)
    mid = _herm(xh @ z @ xh)
    lm, qm = np.linalg.eigh(mid)
    lm = np.clip(lm, 1e-300, None)
    mih = (qm * (1.0 / np.sqrt(lm))[..., None, :]) @ qm.conj().swapaxes(-1, -2)
    return _herm(xh @ mih @ xh)


def _psd_max_step(x, dx):
    """Largest alpha with X + alpha*dX PSD (batched); np.inf when unbounded."""
    if x.size == 0:
        return np.inf
    try:
        ell = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(np.einsum("kii->k", x).real.max(), 1e-30)
        try:
            ell = np.linalg.cholesky(x + jitter * np.eye(x.shape[-1]))
        except np.linalg.LinAlgError:
            return 0.0
    a = np.linalg.solve(ell, dx)
    s = np.linalg.solve(ell, a.conj().swapaxes(-1, -2))
    w = np.linalg.eigvalsh(_herm(s))
    lam_min = float(w.min())
    if math.isnan(lam_min):
        return 0.0
    if lam_min >= -1e-14:
        return np.inf
    return -1.0 / lam_min


def _psd_max_step_pair(x, dx, z, dz):
    """Max feasible steps for the primal and dual PSD stacks in one batch."""
    both = np.concatenate([x, z])
    dirs = np.concatenate([dx, dz])
    try:
        ell = np.linalg.cholesky(both)
    except np.linalg.LinAlgError:
        return _psd_max_step(x, dx), _psd_max_step(z, dz)
    a = np.linalg.solve(ell, dirs)
    s = _herm(np.linalg.solve(ell, a.conj().swapaxes(-1, -2)))
    w = np.linalg.eigvalsh(s)
    k = x.shape[0]
    lam_p = float(w[:k].min())
    lam_d = float(w[k:].min())
    if math.isnan(lam_p) or math.isnan(lam_d):
        return 0.0, 0.0
    step_p = np.inf if lam_p >= -1e-14 else -1.0 / lam_p
    step_d = np.inf if lam_d >= -1e-14 else -1.0 / lam_d
    return step_p, step_d


def _lp_max_step(u, du):
    mask = du < 0
    if not np.any(mask):
        return np.inf
    return float(np.min(-u[mask] / du[mask]))


def _pc_step(x, u, y, z_mat, z_lp, a_psd, g, rp, rd_mat, rd_lp, mu, gap):
    """One Mehrotra predictor-corrector step; None signals breakdown."""
    w_mat = _nt_scaling(x, z_mat)
    w_lp = u / z_lp

    # Schur complement, shared by predictor and corrector.
    waw = w_mat[None, ...] @ a_psd @ w_mat[None, ...]
    m_schur = np.einsum("ikpq,jkqp->ij", a_psd, waw).real
    m_schur += (g * w_lp[None, :]) @ g.T
    m_schur += 1e-13 * np.eye(rp.size)
    try:
        m_fact = np.linalg.cholesky(m_schur)
    except np.linalg.LinAlgError:
        m_fact = None

    def schur_solve(rhs_vec):
        if m_fact is not None:
            t = np.linalg.solve(m_fact, rhs_vec)
            return np.linalg.solve(m_fact.conj().T, t)
        return np.linalg.lstsq(m_schur, rhs_vec, rcond=None)[0]

    lz, qz = np.linalg.eigh(z_mat)
    lz = np.clip(lz, 1e-300, None)
    z_inv = (qz * (1.0 / lz)[..., None, :]) @ qz.conj().swapaxes(-1, -2)

    def newton(rc_mat, rc_lp):
        rhs = (np.einsum("ikpq,kqp->i", a_psd, rc_mat + w_mat @ rd_mat @ w_mat).real
               + g @ (rc_lp + w_lp * rd_lp) - rp)
        dy = schur_solve(rhs)
        dz_mat = np.einsum("i,ikpq->kpq", dy, a_psd) - rd_mat
        dz_lp = g.T @ dy - rd_lp
        dx_mat = _herm(rc_mat - w_mat @ dz_mat @ w_mat)
        du = rc_lp - w_lp * dz_lp
        return dy, dx_mat, du, dz_mat, dz_lp

    # Predictor (affine scaling).
    dy_a, dx_a, du_a, dzm_a, dzl_a = newton(-x, -u)
    steps = _psd_max_step_pair(x, dx_a, z_mat, dzm_a)
    ap_aff = min(1.0, steps[0], _lp_max_step(u, du_a))
    ad_aff = min(1.0, steps[1], _lp_max_step(z_lp, dzl_a))
    gap_aff = float(_batch_inner(x + ap_aff * dx_a, z_mat + ad_aff * dzm_a)
                    + (u + ap_aff * du_a) @ (z_lp + ad_aff * dzl_a))
    sigma = float(np.clip((max(gap_aff, 0.0) / gap) ** 3, 1e-4, 0.999))

    # Corrector; the second-order term is dropped near breakdown where the
    # affine direction dwarfs the iterate.
    scale_x = math.sqrt(max(_batch_inner(x, x), 1e-300))
    scale_dx = math.sqrt(max(_batch_inner(dx_a, dx_a), 0.0))
    rc_mat = sigma * mu * z_inv - x
    rc_lp = sigma * mu / z_lp - u
    if scale_dx <= 1e6 * scale_x:
        rc_mat = rc_mat - dx_a @ dzm_a @ z_inv
        rc_lp = rc_lp - du_a * dzl_a / z_lp
    rc_mat = _herm(rc_mat)
    if not (np.all(np.isfinite(rc_mat.view(float))) and np.all(np.isfinite(rc_lp))):
        rc_mat = _herm(sigma * mu * z_inv - x)
        rc_lp = sigma * mu / z_lp - u
    dy, dx_mat, du, dz_mat, dz_lp = newton(rc_mat, rc_lp)
    if not np.all(np.isfinite(dx_mat.view(float))):
        return None

    steps = _psd_max_step_pair(x, dx_mat, z_mat, dz_mat)
    alpha_p = min(1.0, 0.98 * steps[0], 0.98 * _lp_max_step(u, du))
    alpha_d = min(1.0, 0.98 * steps[1], 0.98 * _lp_max_step(z_lp, dz_lp))
    if not (np.isfinite(alpha_p) and np.isfinite(alpha_d)):
        return None
    if alpha_p < 1e-10 and alpha_d < 1e-10:
        return None
    return (_herm(x + alpha_p * dx_mat), u + alpha_p * du, y + alpha_d * dy,
            _herm(z_mat + alpha_d * dz_mat), z_lp + alpha_d * dz_lp)


def solve_block_sdp(prob: BlockProblem, tol_gap: float = 1e-7, tol_feas: float = 1e-8,
                    max_iter: int = 100, trace: bool = False) -> IpmSolution:
    """Infeasible-start NT predictor-corrector path following."""
    c_psd = _herm(prob.c_psd)
    a_psd = _herm(prob.a_psd)
    b = prob.rhs.copy()
    n_rows = b.size
    k_lp_user = prob.c_lp.size

    # Row equilibration: divide each constraint by its data norm.
    row_norm = np.sqrt(np.einsum("ikpq,ikqp->i", a_psd, a_psd).real
                       + np.einsum("ik,ik->i", prob.a_lp, prob.a_lp))
    row_scale = np.maximum(1.0, row_norm)
    a_psd = a_psd / row_scale[:, None, None, None]
    g_user = prob.a_lp / row_scale[:, None]
    b = b / row_scale

    # Objective scaling.
    obj_scale = max(1.0, float(np.sqrt(_batch_inner(c_psd, c_psd))),
                    float(np.linalg.norm(prob.c_lp)))
    c_psd = c_psd / obj_scale
    d_user = prob.c_lp / obj_scale

    # Append slack variables: rows become equalities A(X) + G u = b.
    g = np.hstack([g_user, np.eye(n_rows)])
    d = np.concatenate([d_user, np.zeros(n_rows)])
    k_lp = d.size

    n_blocks, dim = c_psd.shape[0], c_psd.shape[-1] if c_psd.ndim == 3 else 0
    nu = n_blocks * dim + k_lp
    eye = np.broadcast_to(np.eye(dim, dtype=complex), c_psd.shape).copy()

    eta_p = max(1.0, float(np.max(np.abs(b))) if n_rows else 1.0)
    eta_d = max(1.0, float(np.sqrt(_batch_inner(c_psd, c_psd))))
    x = eta_p * eye.copy()
    u = np.full(k_lp, eta_p)
    z_mat = eta_d * eye.copy()
    z_lp = np.full(k_lp, eta_d)
    y = np.zeros(n_rows)

    def apply_a(mats):
        return np.einsum("ikpq,kqp->i", a_psd, mats).real

    def apply_at(vec):
        return np.einsum("i,ikpq->kpq", vec, a_psd)

    def residuals():
        rp = b - apply_a(x) - g @ u
        rd_mat = c_psd - apply_at(y) + z_mat
        rd_lp = d - g.T @ y + z_lp
        return rp, rd_mat, rd_lp

    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rp, rd_mat, rd_lp = residuals()
        gap = float(_batch_inner(x, z_mat) + u @ z_lp)
        mu = gap / nu
        obj_p = float(_batch_inner(c_psd, x) + d @ u)
        obj_d = float(b @ y)
        pres = float(np.linalg.norm(rp) / (1.0 + np.linalg.norm(b)))
        dres = float(np.sqrt(max(_batch_inner(rd_mat, rd_mat), 0.0)
                             + np.dot(rd_lp, rd_lp))
                     / (1.0 + np.sqrt(max(_batch_inner(c_psd, c_psd), 0.0))))
        if trace:
            history.append((it, obj_p * obj_scale, gap * obj_scale, pres, dres))
        # Convergence is judged on the original (unscaled) objective and gap.
        if (pres <= tol_feas and dres <= tol_feas
                and gap * obj_scale <= tol_gap * (1.0 + abs(obj_p) * obj_scale)):
            converged = True
            break

        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                             under="ignore"):
                step_state = _pc_step(x, u, y, z_mat, z_lp, a_psd, g, rp, rd_mat,
                                      rd_lp, mu, gap)
        except (np.linalg.LinAlgError, FloatingPointError):
            break
        if step_state is None:
            break
        x, u, y, z_mat, z_lp = step_state

    rp, rd_mat, rd_lp = residuals()
    gap = float(_batch_inner(x, z_mat) + u @ z_lp)
    obj_p = float(_batch_inner(c_psd, x) + d @ u)
    pres = float(np.linalg.norm(rp) / (1.0 + np.linalg.norm(b)))
    dres = float(np.sqrt(max(_batch_inner(rd_mat, rd_mat), 0.0) + np.dot(rd_lp, rd_lp))
                 / (1.0 + np.sqrt(max(_batch_inner(c_psd, c_psd), 0.0))))

    slacks_scaled = b - apply_a(x) - g[:, :k_lp_user] @ u[:k_lp_user]
    return IpmSolution(
        blocks=_herm(x),
        lp=u[:k_lp_user].copy(),
        slacks=slacks_scaled * row_scale,
        dual_y=y * obj_scale / row_scale,
        objective=obj_p * obj_scale,
        duality_gap=gap * obj_scale,
        primal_residual=pres,
        dual_residual=dres,
        iterations=it,
        converged=converged,
        trace=history,
    )
