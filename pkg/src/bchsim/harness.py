"""Experiment drivers producing machine-checkable reports.

Each driver is a pure function of (config, seed): sweep levels run on a shared
fixed time grid (adaptivity is disabled inside sweeps so states align across
levels), all verdict thresholds are echoed into the report, and rerunning
yields an identical report.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import __version__
from .config import (
    ForcingConfig,
    RunConfig,
    build_forcing,
    build_initial_field,
    validate_config,
)
from .errors import ConfigurationError, PreconditionError, SolverError
from .energetics import compute_mu, compute_w
from .evolution import Simulation, StepperConfig
from .flow import eta_dissipation, solve_brinkman
from .model import Coefficient, CoefficientSpec, ModelSpec, PotentialSpec
from .reports import ExperimentReport
from .spectral import (
    Grid,
    ScalarField,
    VectorField,
    grad_norm_sq,
    inner,
    laplacian,
    truncate_modes,
)


def _environment(config: RunConfig) -> dict:
    return {
        "version": __version__,
        "seed": config.seed,
        "grid": " ".join(str(n) for n in config.grid.sizes),
        "threads": config.threads,
    }


def _new_report(name: str, config: RunConfig, extra_params: dict | None = None) -> ExperimentReport:
    from .config import to_flat_dict

    params = to_flat_dict(config)
    for k, v in (extra_params or {}).items():
        params[k] = str(v)
    return ExperimentReport(name, parameters=params, environment=_environment(config))


def _l2(grid: Grid, arr: np.ndarray) -> float:
    return float(np.sqrt(grid.cell_volume * np.sum(arr * arr)))


def _l2q(grid: Grid, dt: float, frames_a, frames_b) -> float:
    """Space-time L2 distance over aligned trajectories (rectangle rule,
    skipping the shared initial frame)."""
    if len(frames_a) != len(frames_b):
        raise PreconditionError("trajectories are not aligned; run sweeps at fixed dt")
    total = 0.0
    for a, b in zip(frames_a[1:], frames_b[1:]):
        diff = a - b
        total += dt * grid.cell_volume * float(np.sum(diff * diff))
    return float(np.sqrt(total))


def _v_surrogate_sq(grid: Grid, arr: np.ndarray) -> float:
    """||z||^2 + ||grad z||^2 for a scalar array or stacked vector array."""
    if arr.ndim == grid.ndim:
        f = ScalarField(grid, arr)
        return inner(f, f) + grad_norm_sq(f)
    return float(sum(_v_surrogate_sq(grid, arr[i]) for i in range(arr.shape[0])))


def _w_surrogate_sq(grid: Grid, arr: np.ndarray) -> float:
    f = ScalarField(grid, arr)
    lap = laplacian(f)
    return inner(f, f) + inner(lap, lap)


def _fixed_dt_stepper(stepper: StepperConfig, dt: float | None = None) -> StepperConfig:
    dt = stepper.dt if dt is None else dt
    return replace(stepper, dt=dt, dt_min=min(stepper.dt_min, dt), dt_max=max(stepper.dt_max, dt),
                   adaptive=False)


def _strictly_decreasing_ratio(values) -> float:
    """Max ratio of consecutive entries; < 1 certifies strict decrease."""
    worst = 0.0
    for a, b in zip(values, values[1:]):
        if a <= 0.0:
            return math.inf
        worst = max(worst, b / a)
    return worst


# -- energy decay ------------------------------------------------------------


def exp_energy_decay(config: RunConfig, dissipation_budget_tol: float = 0.1) -> ExperimentReport:
    """Free decay: energy monotone within tolerance, dissipation bookkeeping,
    mass conservation."""
    if config.model.source_active:
        raise PreconditionError("energy decay experiment requires sigma = 0 and h = 0")
    if config.forcing.kind != "zero" and config.forcing.amplitude != 0.0:
        raise PreconditionError("energy decay experiment requires zero forcing")

    report = _new_report("energy_decay", config,
                         {"dissipation_budget_tol": dissipation_budget_tol})
    sim = _build(config)
    result = sim.run()

    energies = [row["E_total"] for row in result.energy_rows]
    times = [row["t"] for row in result.energy_rows]
    diss = [row["diss_mu"] + row["diss_v"] for row in result.energy_rows]
    report.series["t"] = times
    report.series["E_total"] = energies
    report.series["dissipation"] = diss

    tol = config.stepper.energy_increase_tol * max(1.0, abs(energies[0]))
    max_increase = max(
        (e2 - e1 for e1, e2 in zip(energies, energies[1:])), default=0.0
    )
    report.add_verdict("energy_nonincreasing", max_increase <= tol, max_increase, tol)

    budget = sum(
        (t2 - t1) * d for t1, t2, d in zip(times, times[1:], diss[1:])
    )
    drop = energies[0] - energies[-1]
    report.add_verdict(
        "dissipation_budget",
        drop >= (1.0 - dissipation_budget_tol) * budget,
        drop, (1.0 - dissipation_budget_tol) * budget,
    )

    masses = result.ledger.mean_phi
    max_mass_step = max(
        (abs(m2 - m1) for m1, m2 in zip(masses, masses[1:])), default=0.0
    )
    report.add_verdict("mass_constant_per_step", max_mass_step <= 1e-10, max_mass_step, 1e-10)
    return report


def _build(config: RunConfig, record=(), record_stride=0, freeze_velocity=False) -> Simulation:
    validate_config(config)
    phi0 = build_initial_field(config)
    u_of_t = build_forcing(config)
    return Simulation(config.grid, config.model, config.flow, config.stepper, u_of_t,
                      phi0=phi0, record=record, record_stride=record_stride,
                      freeze_velocity=freeze_velocity)


# -- Darcy limit -------------------------------------------------------------


def exp_darcy_limit(config: RunConfig, levels: int = 6,
                    stability_variation_tol: float = 0.10,
                    eta_diss_ratio_tol: float = 1e-2) -> ExperimentReport:
    """Vanishing shear viscosity: eta_n = eta0 * 2^-n against a Darcy run."""
    if levels < 4:
        raise PreconditionError("darcy limit sweep needs at least 4 levels")
    report = _new_report("darcy_limit", config, {
        "levels": levels,
        "stability_variation_tol": stability_variation_tol,
        "eta_diss_ratio_tol": eta_diss_ratio_tol,
    })

    stepper = _fixed_dt_stepper(config.stepper)
    dt = stepper.dt
    base = replace(config, stepper=stepper)

    darcy_cfg = replace(base, flow=replace(base.flow, mode="darcy"))
    darcy_res = _build(darcy_cfg, record=("phi", "v"), record_stride=1).run()

    scales, v_dists, phi_dists, eta_diss, stability = [], [], [], [], []
    completed = 0
    try:
        for n in range(levels):
            scale = 2.0 ** (-n)
            model_n = _scale_eta(base.model, scale)
            cfg_n = replace(base, model=model_n)
            res = _build(cfg_n, record=("phi", "v"), record_stride=1).run()
            scales.append(scale)
            v_dists.append(_l2q(base.grid, dt, res.trajectory["v"], darcy_res.trajectory["v"]))
            phi_dists.append(_l2(base.grid, res.final_state.phi.values
                                 - darcy_res.final_state.phi.values))
            total = 0.0
            for phi_vals, v_vals in zip(res.trajectory["phi"][1:], res.trajectory["v"][1:]):
                phi_f = ScalarField(base.grid, phi_vals)
                v_f = VectorField.from_arrays(base.grid, v_vals, divergence_free=True)
                total += dt * eta_dissipation(v_f, phi_f, model_n)
            eta_diss.append(total)
            s = res.stability
            stability.append(s.max_w_surrogate + s.int_grad_mu_sq + s.int_v_sq)
            completed += 1
    except SolverError:
        pass

    report.series["eta_scale"] = scales
    report.series["v_dist_L2Q"] = v_dists
    report.series["phi_dist_T"] = phi_dists
    report.series["eta_dissipation"] = eta_diss
    report.series["stability_scalar"] = stability

    report.add_verdict("all_levels_completed", completed == levels, completed, levels)
    if completed >= 2:
        report.add_verdict("v_dist_decreasing",
                           _strictly_decreasing_ratio(v_dists) < 1.0,
                           _strictly_decreasing_ratio(v_dists), 1.0)
        report.add_verdict("eta_dissipation_decreasing",
                           _strictly_decreasing_ratio(eta_diss) < 1.0,
                           _strictly_decreasing_ratio(eta_diss), 1.0)
        ratio = eta_diss[-1] / eta_diss[0] if eta_diss[0] > 0 else math.inf
        report.add_verdict("eta_dissipation_final_ratio",
                           ratio < eta_diss_ratio_tol, ratio, eta_diss_ratio_tol)
        report.add_verdict("phi_dist_decreasing",
                           _strictly_decreasing_ratio(phi_dists) < 1.0,
                           _strictly_decreasing_ratio(phi_dists), 1.0)
        mean_s = sum(stability) / len(stability)
        variation = (max(stability) - min(stability)) / max(abs(mean_s), 1e-300)
        report.add_verdict("stability_norms_uniform",
                           variation < stability_variation_tol,
                           variation, stability_variation_tol)
    return report


def _scale_eta(model: ModelSpec, scale: float) -> ModelSpec:
    eta = model.coefficients.eta
    if eta.kind == "constant":
        scaled = Coefficient(kind="constant", value=eta.value * scale,
                             lower=eta.lower * scale, upper=eta.upper * scale)
    else:
        scaled = Coefficient(kind="tanh_affine", base=eta.base * scale,
                             amplitude=eta.amplitude * scale, scale=eta.scale,
                             lower=eta.lower * scale, upper=eta.upper * scale)
    return replace(model, coefficients=replace(model.coefficients, eta=scaled))


# -- continuous dependence ----------------------------------------------------


def exp_continuous_dependence(config: RunConfig, u1: ForcingConfig, u2: ForcingConfig,
                              amplitudes=(1e-3, 1e-2, 1e-1),
                              r_spread_tol: float = 3.0) -> ExperimentReport:
    """Response to forcing perturbations u1 + a (u2 - u1) for a in amplitudes.

    Requires constant eta and m (the uniqueness hypothesis).  Reports the
    empirical stability ratio R(a); the constant itself is reported, never
    asserted against a target.
    """
    coeffs = config.model.coefficients
    if not (coeffs.eta.is_constant and coeffs.mobility.is_constant):
        raise PreconditionError(
            "continuous dependence requires constant eta and mobility coefficients"
        )

    report = _new_report("continuous_dependence", config, {
        "amplitudes": " ".join(repr(a) for a in amplitudes),
        "r_spread_tol": r_spread_tol,
    })
    grid = config.grid
    stepper = _fixed_dt_stepper(config.stepper)
    dt = stepper.dt
    base_cfg = replace(config, stepper=stepper, forcing=u1)
    validate_config(base_cfg)

    u1_of_t = build_forcing(base_cfg)
    u2_of_t = build_forcing(replace(base_cfg, forcing=u2))
    phi0 = build_initial_field(base_cfg)

    def run_with(amplitude: float):
        def u_of_t(t):
            a, b = u1_of_t(t), u2_of_t(t)
            return a + (b - a) * amplitude
        sim = Simulation(grid, base_cfg.model, base_cfg.flow, stepper, u_of_t,
                         phi0=phi0, record=("phi", "v", "mu", "w"), record_stride=1)
        return sim.run()

    baseline = run_with(0.0)
    echo = run_with(0.0)

    zero_diff = _difference_norms(grid, dt, echo.trajectory, baseline.trajectory)
    zeros = {
        name: [np.zeros_like(f) for f in frames]
        for name, frames in baseline.trajectory.items()
    }
    scale = max(1.0, _difference_norms(grid, dt, baseline.trajectory, zeros))
    report.add_verdict("uniqueness_echo", zero_diff <= 1e-9 * scale, zero_diff, 1e-9 * scale)

    ratios = []
    report.series["amplitude"] = list(amplitudes)
    report.series["R"] = []
    report.series["u_dist"] = []
    nframes = len(baseline.trajectory_times)
    for a in amplitudes:
        res = run_with(a)
        diff = _difference_norms(grid, dt, res.trajectory, baseline.trajectory)
        u_dist = _forcing_distance(grid, dt, u1_of_t, u2_of_t, a, nframes)
        r = diff / u_dist if u_dist > 0 else math.inf
        ratios.append(r)
        report.series["R"].append(r)
        report.series["u_dist"].append(u_dist)

    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    report.add_verdict("r_ratio_bounded", spread < r_spread_tol, spread, r_spread_tol)
    return report


def _difference_norms(grid: Grid, dt: float, traj_a: dict, traj_b: dict) -> float:
    """Sum of the four theorem norms for the trajectory difference:
    v in L2 of the V surrogate, phi in C0 of V, mu in L2 of L2, w in L2 of W."""
    v_sq = sum(
        dt * _v_surrogate_sq(grid, a - b)
        for a, b in zip(traj_a["v"][1:], traj_b["v"][1:])
    )
    phi_c0v = max(
        (math.sqrt(_v_surrogate_sq(grid, a - b))
         for a, b in zip(traj_a["phi"], traj_b["phi"])),
        default=0.0,
    )
    mu_sq = sum(
        dt * grid.cell_volume * float(np.sum((a - b) ** 2))
        for a, b in zip(traj_a["mu"][1:], traj_b["mu"][1:])
    )
    w_sq = sum(
        dt * _w_surrogate_sq(grid, a - b)
        for a, b in zip(traj_a["w"][1:], traj_b["w"][1:])
    )
    return math.sqrt(v_sq) + phi_c0v + math.sqrt(mu_sq) + math.sqrt(w_sq)


def _forcing_distance(grid: Grid, dt: float, u1_of_t, u2_of_t, a: float, nframes: int) -> float:
    total = 0.0
    for k in range(1, nframes):
        t = k * dt
        diff = (u2_of_t(t) - u1_of_t(t)).stack() * a
        total += dt * grid.cell_volume * float(np.sum(diff * diff))
    return math.sqrt(total)


# -- Galerkin refinement -------------------------------------------------------


def exp_galerkin_refinement(config: RunConfig, cutoffs) -> ExperimentReport:
    """Cauchy differences of trajectories under mode-cutoff refinement."""
    cutoffs = [float(c) for c in cutoffs]
    if len(cutoffs) < 3:
        raise ConfigurationError("need at least 3 cutoffs")
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ConfigurationError("cutoffs must be strictly increasing")
    band = config.grid.nyquist_band_limit()
    if cutoffs[-1] > band + 1e-12:
        raise ConfigurationError(
            f"cutoff {cutoffs[-1]:g} exceeds the dealiased band {band:g}"
        )

    report = _new_report("galerkin_refinement", config,
                         {"cutoffs": " ".join(repr(c) for c in cutoffs)})
    base_cfg = replace(config, stepper=_fixed_dt_stepper(config.stepper))
    validate_config(base_cfg)
    phi0 = build_initial_field(base_cfg)
    u_of_t = build_forcing(base_cfg)

    proj_dists, finals = [], []
    for cutoff in cutoffs:
        proj = truncate_modes(phi0, cutoff)
        proj_dists.append(_l2(base_cfg.grid, proj.values - phi0.values))
        stepper = replace(base_cfg.stepper, cutoff=cutoff)
        sim = Simulation(base_cfg.grid, base_cfg.model, base_cfg.flow, stepper,
                         u_of_t, phi0=phi0)
        finals.append(sim.run().final_state.phi.values)

    cauchy = [
        _l2(base_cfg.grid, a - b) for a, b in zip(finals, finals[1:])
    ]
    report.series["cutoff"] = cutoffs
    report.series["projection_dist"] = proj_dists
    report.series["cauchy_dist"] = cauchy

    report.add_verdict("cauchy_decreasing",
                       _strictly_decreasing_ratio(cauchy) < 1.0,
                       _strictly_decreasing_ratio(cauchy), 1.0)
    report.add_verdict("projection_decreasing",
                       _strictly_decreasing_ratio(proj_dists) < 1.0,
                       _strictly_decreasing_ratio(proj_dists), 1.0)
    return report


# -- velocity regularization ablation -----------------------------------------


def exp_regularization_ablation(config: RunConfig, betas,
                                rate_spread_tol: float = 2.0) -> ExperimentReport:
    """Pseudo-time velocity term beta (v - v_prev)/dt swept down to zero."""
    betas = [float(b) for b in betas]
    if betas[-1] != 0.0:
        raise ConfigurationError("beta sweep must end at 0")
    if any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ConfigurationError("betas must be strictly decreasing")

    report = _new_report("regularization_ablation", config, {
        "betas": " ".join(repr(b) for b in betas),
        "rate_spread_tol": rate_spread_tol,
    })
    stepper = _fixed_dt_stepper(config.stepper)
    dt = stepper.dt
    base_cfg = replace(config, stepper=stepper)
    grid = base_cfg.grid

    results = {}
    for beta in betas:
        cfg_b = replace(base_cfg, flow=replace(base_cfg.flow, regularization_beta=beta))
        results[beta] = _build(cfg_b, record=("phi", "v"), record_stride=1).run()

    base_res = results[0.0]
    v_dists = [
        _l2q(grid, dt, results[b].trajectory["v"], base_res.trajectory["v"])
        for b in betas[:-1]
    ]
    phi_dists = [
        _l2(grid, results[b].final_state.phi.values - base_res.final_state.phi.values)
        for b in betas[:-1]
    ]
    report.series["beta"] = betas[:-1]
    report.series["v_dist_L2Q"] = v_dists
    report.series["phi_dist_T"] = phi_dists
    report.add_verdict("v_dist_decreasing",
                       _strictly_decreasing_ratio(v_dists) < 1.0,
                       _strictly_decreasing_ratio(v_dists), 1.0)
    report.add_verdict("phi_dist_decreasing",
                       _strictly_decreasing_ratio(phi_dists) < 1.0,
                       _strictly_decreasing_ratio(phi_dists), 1.0)

    # frozen-phi stationary solves: (beta/dt + A) v = f + (beta/dt) v_prev, v_prev = 0
    validate_config(base_cfg)
    phi0 = build_initial_field(base_cfg)
    model = base_cfg.model
    w = compute_w(phi0, model)
    mu = compute_mu(phi0, model, w=w)
    u0 = build_forcing(base_cfg)(0.0)
    v_prev = VectorField.zeros(grid)
    stationary = {}
    for beta in betas:
        params = replace(base_cfg.flow, regularization_beta=beta)
        v_b, _ = solve_brinkman(phi0, mu, u0, model, params, v_prev=v_prev, dt=1.0)
        stationary[beta] = v_b.stack()
    rates = []
    for beta in betas[:-1]:
        dist = _l2(grid, stationary[beta] - stationary[0.0])
        rates.append(dist / beta)
    report.series["stationary_rate"] = rates
    spread = max(rates) / min(rates) if min(rates) > 0 else math.inf
    report.add_verdict("stationary_rate_linear", spread <= rate_spread_tol,
                       spread, rate_spread_tol)
    return report


# -- temporal self-convergence -------------------------------------------------


def exp_self_convergence(config: RunConfig, dts, problem: str = "coupled") -> ExperimentReport:
    """Observed temporal order from a halving-dt sweep.

    problem 'linear': zero potential, nu = 0, frozen velocity; per-mode decay
    exp(-m_bar |k|^6 t) is exact, so errors are measured against it.
    problem 'uniform_source': uniform state with sigma > 0 against
    exp(-sigma t) phi0.  problem 'coupled': Richardson triplets on the full
    system, order in [0.8, 1.5].
    """
    dts = [float(dt) for dt in dts]
    if len(dts) < 3:
        raise ConfigurationError("need at least 3 time steps")
    for a, b in zip(dts, dts[1:]):
        if abs(b - 0.5 * a) > 1e-12 * a:
            raise ConfigurationError("dt list must halve at every entry")
    if config.stepper.adaptive:
        raise ConfigurationError("self-convergence requires adaptivity disabled")
    if problem not in ("linear", "uniform_source", "coupled"):
        raise ConfigurationError(f"unknown self-convergence problem '{problem}'")

    report = _new_report("self_convergence", config, {
        "problem": problem,
        "dts": " ".join(repr(dt) for dt in dts),
    })
    grid = config.grid
    t_final = config.stepper.t_final

    if problem == "linear":
        mbar = config.model.coefficients.mobility.midpoint
        model = ModelSpec(
            potential=PotentialSpec(family="zero"),
            coefficients=CoefficientSpec(mobility=Coefficient(value=mbar)),
            nu=0.0,
        )
        phi0 = build_initial_field(replace(config, model=model))
        exact_hat = phi0.spectrum * np.exp(-mbar * grid.k2 ** 3 * t_final)
        exact = ScalarField.from_coeffs(grid, exact_hat).values
        finals = [_final_phi(config, model, phi0, dt, freeze_velocity=True) for dt in dts]
        errors = [_l2(grid, f - exact) for f in finals]
        orders = [math.log2(e1 / e2) for e1, e2 in zip(errors, errors[1:])]
        lo, hi = 0.8, 1.2
    elif problem == "uniform_source":
        if config.model.sigma <= 0:
            raise ConfigurationError("uniform_source problem needs sigma > 0")
        if config.initial.kind != "constant" or config.model.h_amplitude != 0.0:
            raise ConfigurationError("uniform_source problem needs constant phi0 and h = 0")
        validate_config(config)
        model = config.model
        phi0 = build_initial_field(config)
        exact = phi0.values * math.exp(-model.sigma * t_final)
        finals = [_final_phi(config, model, phi0, dt) for dt in dts]
        errors = [_l2(grid, f - exact) for f in finals]
        orders = [math.log2(e1 / e2) for e1, e2 in zip(errors, errors[1:])]
        lo, hi = 0.8, 1.2
    else:
        validate_config(config)
        model = config.model
        phi0 = build_initial_field(config)
        finals = [_final_phi(config, model, phi0, dt) for dt in dts]
        errors = [_l2(grid, a - b) for a, b in zip(finals, finals[1:])]
        orders = [math.log2(e1 / e2) for e1, e2 in zip(errors, errors[1:])]
        lo, hi = 0.8, 1.5

    report.series["dt"] = dts
    report.series["error"] = errors
    report.series["order"] = orders
    observed = sum(orders) / len(orders)
    report.parameters["observed_order"] = repr(observed)
    report.add_verdict("order_lower", observed >= lo, observed, lo)
    report.add_verdict("order_upper", observed <= hi, observed, hi)
    return report


def _final_phi(config: RunConfig, model: ModelSpec, phi0: ScalarField,
               dt: float, freeze_velocity: bool = False) -> np.ndarray:
    stepper = _fixed_dt_stepper(config.stepper, dt=dt)
    u_of_t = build_forcing(config)
    sim = Simulation(config.grid, model, config.flow, stepper, u_of_t,
                     phi0=phi0, freeze_velocity=freeze_velocity)
    return sim.run().final_state.phi.values
