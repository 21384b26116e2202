"""End-to-end design runs: digital stage, hybrid factorization, constraint
repair on the composite, and per-method report assembly."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .baselines import build_dictionary, omp_hybrid
from .dinkelbach import design_digital
from .hbf import HybridBeamformer, design_hybrid
from .metrics import (
    DesignReport,
    DigitalBeamformer,
    all_sinr,
    beampattern_gain,
    build_q,
    dissipated_power,
    sum_rate,
)
from .model import ChannelSet, ScenarioConfig, generate_channels, steering_vector
from .sdpcore import InfeasibleDesignError, SdrProblem, repair_feasibility

METHODS = ("proposed", "omp", "fdb", "comm_only")


@dataclass
class MethodResult:
    report: DesignReport
    beamformer: DigitalBeamformer
    hybrid: HybridBeamformer = None


def _constraint_problem(channels: ChannelSet, f: DigitalBeamformer,
                        cfg: ScenarioConfig, enforce_gamma: bool = True) -> SdrProblem:
    gammas = cfg.beampattern_thresholds if enforce_gamma else ()
    steer = [steering_vector(th, cfg.n_tx, cfg.antenna_spacing, cfg.carrier_wavelength)
             for th in cfg.target_angles[: len(gammas)]]
    q_list = [build_q(channels, f, m, cfg.noise_power) for m in range(cfg.n_users)]
    return SdrProblem(q_list=q_list, steer_list=steer,
                      tau=list(cfg.sinr_thresholds), gamma=list(gammas),
                      p_max=cfg.max_tx_power, lambda_price=0.0, n_vars=cfg.n_streams)


def _apply_column_scales(hybrid: HybridBeamformer, repaired: DigitalBeamformer,
                         composite: DigitalBeamformer) -> HybridBeamformer:
    """Fold repair column scales into the baseband matrix."""
    old = np.linalg.norm(composite.matrix, axis=0)
    new = np.linalg.norm(repaired.matrix, axis=0)
    scales = np.where(old > 1e-30, new / np.where(old > 1e-30, old, 1.0), 1.0)
    return HybridBeamformer(analog=hybrid.analog,
                            baseband=hybrid.baseband * scales[None, :])


def _design_feasible(channels, f, cfg, enforce_gamma=True, rtol=1e-6):
    sinrs = all_sinr(channels, f, cfg.noise_power)
    gains = [beampattern_gain(th, f, cfg.antenna_spacing, cfg.carrier_wavelength)
             for th in cfg.target_angles]
    ok = all(s >= tau * (1 - rtol) for s, tau in zip(sinrs, cfg.sinr_thresholds))
    if enforce_gamma:
        ok = ok and all(g >= gam * (1 - rtol)
                        for g, gam in zip(gains, cfg.beampattern_thresholds))
    ok = ok and f.total_power <= cfg.max_tx_power * (1 + 1e-6)
    return ok, sinrs, gains


def _report(channels, f, cfg, n_rfc_power, lambda_trace, fact_err, iterations,
            wall, feasible):
    rate = sum_rate(channels, f, cfg.noise_power)
    power = dissipated_power(f, cfg.amplifier_efficiency, n_rfc_power,
                             cfg.rfc_static_power)
    sinrs = list(all_sinr(channels, f, cfg.noise_power))
    gains = [beampattern_gain(th, f, cfg.antenna_spacing, cfg.carrier_wavelength)
             for th in cfg.target_angles]
    report = DesignReport(
        energy_efficiency=rate / power,
        sum_rate=rate,
        per_user_sinr=sinrs,
        per_target_gain=gains,
        dissipated_power=power,
        lambda_trace=list(lambda_trace),
        factorization_error=fact_err,
        iterations=dict(iterations),
        wall_time=wall,
        feasible=feasible,
        tx_power=f.total_power,
    )
    report.validate()
    return report


def run_methods(cfg: ScenarioConfig, methods=("proposed",),
                channels: ChannelSet = None) -> dict:
    """Run the requested design pipelines on one channel realization.

    A method whose design is infeasible maps to None; methods never abort
    each other.  Raises InfeasibleDesignError only when every requested
    method failed that way.
    """
    if channels is None:
        channels = generate_channels(cfg)
    results = {}
    cause = None
    shared = [m for m in methods if m in ("proposed", "omp", "fdb")]
    if shared:
        try:
            results.update(_run_shared(cfg, channels, methods))
        except InfeasibleDesignError as exc:
            cause = exc
            results.update({m: None for m in shared})
    if "comm_only" in methods:
        try:
            results["comm_only"] = _run_comm_only(cfg, channels)
        except InfeasibleDesignError as exc:
            cause = cause or exc
            results["comm_only"] = None
    if methods and all(results.get(m) is None for m in methods):
        raise cause
    return results


def _run_shared(cfg: ScenarioConfig, channels: ChannelSet, methods) -> dict:
    """Methods that share the constrained digital design (proposed/omp/fdb)."""
    results = {}
    t0 = time.perf_counter()
    f_dig, state = design_digital(channels, cfg)
    t_dig = time.perf_counter() - t0
    problem = _constraint_problem(channels, f_dig, cfg)

    if "proposed" in methods:
        t0 = time.perf_counter()
        hybrid, trace = design_hybrid(f_dig, cfg)
        composite = hybrid.as_digital()
        rep = repair_feasibility(composite, problem, channels, cfg.noise_power)
        hybrid = _apply_column_scales(hybrid, rep.beamformer, composite)
        f_h = hybrid.as_digital()
        wall = t_dig + (time.perf_counter() - t0)
        feasible = rep.feasible and state.converged
        results["proposed"] = MethodResult(
            report=_report(channels, f_h, cfg, cfg.n_rfc, state.lambda_trace,
                           trace.factorization_error,
                           {"outer": state.iteration,
                            "rcg": trace.rcg_iterations,
                            "sweeps": trace.alternation_sweeps,
                            "inits": trace.n_inits},
                           wall, feasible),
            beamformer=f_h, hybrid=hybrid)
        results["proposed"].report.rank_one_defects = list(state.rank_one_defects)

    if "omp" in methods:
        t0 = time.perf_counter()
        dictionary = build_dictionary(cfg.n_tx, 4, cfg.antenna_spacing,
                                      cfg.carrier_wavelength)
        hyb = omp_hybrid(f_dig, dictionary, cfg.n_rfc, p_max=cfg.max_tx_power)
        composite = hyb.as_digital()
        fact = float(np.linalg.norm(f_dig.matrix - composite.matrix)
                     / np.linalg.norm(f_dig.matrix))
        # same post-factorization floor repair as the proposed pipeline, so
        # the methods compete on feasible designs
        rep = repair_feasibility(composite, problem, channels, cfg.noise_power)
        hyb = _apply_column_scales(hyb, rep.beamformer, composite)
        f_o = hyb.as_digital()
        wall = t_dig + (time.perf_counter() - t0)
        results["omp"] = MethodResult(
            report=_report(channels, f_o, cfg, cfg.n_rfc, state.lambda_trace,
                           fact, {"outer": state.iteration}, wall,
                           rep.feasible and state.converged),
            beamformer=f_o, hybrid=hyb)

    if "fdb" in methods:
        rep = _report(channels, f_dig, cfg, cfg.n_tx, state.lambda_trace, 0.0,
                      {"outer": state.iteration}, t_dig, state.converged)
        results["fdb"] = MethodResult(report=rep, beamformer=f_dig)
    return results


def _run_comm_only(cfg: ScenarioConfig, channels: ChannelSet) -> MethodResult:
    """Communication-only variant: the sensing floors never enter."""
    t0 = time.perf_counter()
    f_dig_c, state_c = design_digital(channels, cfg, enforce_gamma=False)
    problem_c = _constraint_problem(channels, f_dig_c, cfg, enforce_gamma=False)
    hybrid_c, trace_c = design_hybrid(f_dig_c, cfg)
    composite_c = hybrid_c.as_digital()
    rep_c = repair_feasibility(composite_c, problem_c, channels, cfg.noise_power)
    hybrid_c = _apply_column_scales(hybrid_c, rep_c.beamformer, composite_c)
    f_hc = hybrid_c.as_digital()
    wall = time.perf_counter() - t0
    return MethodResult(
        report=_report(channels, f_hc, cfg, cfg.n_rfc, state_c.lambda_trace,
                       trace_c.factorization_error,
                       {"outer": state_c.iteration}, wall,
                       rep_c.feasible and state_c.converged),
        beamformer=f_hc, hybrid=hybrid_c)
