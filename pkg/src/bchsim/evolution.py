"""Coupled time integration: sixth-order phase evolution with quasi-static flow.

Scheme: first-order IMEX.  The constant-coefficient leading operator is
treated implicitly and is diagonal in mode space,

    phi_hat^{n+1} (1 + dt m_bar (|k|^6 + kappa |k|^2)) = phi_hat^n + dt G_hat,

where m_bar is the midpoint of the mobility bounds and kappa >= 0 an optional
stabilizing shift.  G collects everything else explicitly at the old state:
transport -v.grad(phi), the full flux div(m(phi) grad mu) minus its implicit
part m_bar lap^3 phi (plus the kappa compensation, so the scheme stays
consistent), and the source S(phi).  The velocity is quasi-static: after each
accepted phi update, w and mu are re-derived from phi and the stationary flow
problem is solved for v.  An energy-based controller rejects steps that raise
the energy when all sources are off.

Mass bookkeeping: testing the phi equation with the constant 1 kills the
transport and flux terms exactly on the torus, so the scheme satisfies
(mean phi)^{n+1} - (mean phi)^n = dt * mean(S(phi^n)) to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StepFailure
from .energetics import (
    EnergyBreakdown,
    compute_energy,
    compute_mu,
    compute_w,
    w_surrogate_norm,
)
from .flow import FlowParams, flow_dissipation, solve_brinkman, solve_darcy
from .model import ModelSpec, eval_source
from .spectral import (
    Grid,
    ScalarField,
    VectorField,
    grad_norm_sq,
    inner,
    l2_norm,
    laplacian,
    mean_value,
)


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    dt_min: float = 1e-8
    dt_max: float = 1e-2
    kappa: float = 0.0
    adaptive: bool = True
    energy_increase_tol: float = 1e-10
    shrink: float = 0.5
    grow: float = 1.1
    grow_patience: int = 5
    t_final: float = 1.0
    cutoff: float | None = None

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt <= self.dt_max):
            raise ConfigurationError("need 0 < dt_min <= dt <= dt_max")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be >= 0")
        if not (0 < self.shrink < 1):
            raise ConfigurationError("shrink factor must lie in (0, 1)")
        if self.grow < 1:
            raise ConfigurationError("grow factor must be >= 1")
        if self.t_final < 0:
            raise ConfigurationError("t_final must be >= 0")


@dataclass
class SimState:
    t: float
    phi: ScalarField
    mu: ScalarField
    w: ScalarField
    v: VectorField
    p: ScalarField | None
    energy: EnergyBreakdown
    step_index: int


@dataclass
class MassLedger:
    times: list = field(default_factory=list)
    mean_phi: list = field(default_factory=list)
    mean_source: list = field(default_factory=list)

    def append(self, t: float, phi_bar: float, source_bar: float):
        self.times.append(t)
        self.mean_phi.append(phi_bar)
        self.mean_source.append(source_bar)


@dataclass(frozen=True)
class StabilityReport:
    """Discrete counterparts of the a priori bounds: the norms are surrogates
    (W ~ ||z|| + ||lap z||) and time integrals use the rectangle rule."""

    max_w_surrogate: float
    int_grad_mu_sq: float
    int_v_sq: float

    def as_dict(self):
        return {
            "max_w_surrogate": self.max_w_surrogate,
            "int_grad_mu_sq": self.int_grad_mu_sq,
            "int_v_sq": self.int_v_sq,
        }


def transport_term(v: VectorField, phi: ScalarField) -> ScalarField:
    """Dealiased v . grad(phi); mean-free to roundoff for divergence-free v."""
    g = phi.grid
    phi_pad = g.pad_coeffs(phi.spectrum)
    total = np.zeros(g.fine_sizes)
    for i in range(g.ndim):
        dphi = g.ifft_fine(1j * g.fine_kd[i] * phi_pad)
        total += g.upsample(v.components[i].values) * dphi
    return ScalarField(g, g.downsample(total))


def mobility_flux_divergence(phi: ScalarField, mu: ScalarField, model: ModelSpec) -> ScalarField:
    """div(m(phi) grad mu) with the product dealiased."""
    g = phi.grid
    m_fine = model.mobility(g.upsample(phi.values))
    mu_pad = g.pad_coeffs(mu.spectrum)
    out = np.zeros(g.fine_sizes, dtype=complex)
    for i in range(g.ndim):
        dmu = g.ifft_fine(1j * g.fine_kd[i] * mu_pad)
        out += 1j * g.fine_kd[i] * g.fft_fine(m_fine * dmu)
    return ScalarField.from_coeffs(g, g.crop_coeffs(out))


def chemical_dissipation(phi: ScalarField, mu: ScalarField, model: ModelSpec) -> float:
    """int m(phi) |grad mu|^2 on the padded grid."""
    g = phi.grid
    m_fine = model.mobility(g.upsample(phi.values))
    mu_pad = g.pad_coeffs(mu.spectrum)
    total = 0.0
    for i in range(g.ndim):
        dmu = g.ifft_fine(1j * g.fine_kd[i] * mu_pad)
        total += float(np.sum(m_fine * dmu * dmu))
    return g.fine_cell_volume * total


def adapt_dt(energy_before: float, energy_after: float, sources_active: bool,
             cfg: StepperConfig, dt: float, streak: int):
    """Energy-based accept/reject. Returns (accept, next_dt, next_streak).

    With sources active (sigma, h or u nonzero) the energy law has right-hand
    side terms, so no energy-based rejection applies.  Growth is gentle: after
    ``grow_patience`` consecutive accepts dt is multiplied by ``grow`` and
    clamped to dt_max.  The caller handles dt_min underflow.
    """
    threshold = cfg.energy_increase_tol * max(1.0, abs(energy_before))
    if cfg.adaptive and not sources_active and energy_after > energy_before + threshold:
        return False, dt * cfg.shrink, 0
    streak += 1
    next_dt = dt
    if cfg.adaptive and streak >= cfg.grow_patience:
        next_dt = min(dt * cfg.grow, cfg.dt_max)
        streak = 0
    return True, next_dt, streak


class Simulation:
    """Owns the time loop, the diagnostics rows, and the mass ledger."""

    def __init__(self, grid: Grid, model: ModelSpec, flow_params: FlowParams,
                 stepper: StepperConfig, u_of_t, phi0: ScalarField | None = None,
                 state: SimState | None = None, record: tuple = (),
                 record_stride: int = 0, freeze_velocity: bool = False):
        self.grid = grid
        self.model = model
        self.flow_params = flow_params
        self.cfg = stepper
        self.u_of_t = u_of_t
        self.freeze_velocity = freeze_velocity
        self.mode_mask = (
            grid.mode_mask(stepper.cutoff) if stepper.cutoff is not None else None
        )
        mbar = model.coefficients.mobility.midpoint
        k2 = grid.k2
        self.implicit_symbol = mbar * (k2 ** 3 + stepper.kappa * k2)

        self.ledger = MassLedger()
        self.rows = []
        self.energy_rows = []
        self.flow_rows = []
        self.record = tuple(record)
        self.record_stride = int(record_stride)
        self.trajectory = {name: [] for name in self.record}
        self.trajectory_times = []

        self.dt = stepper.dt
        self.streak = 0
        self._max_w = 0.0
        self._int_grad_mu_sq = 0.0
        self._int_v_sq = 0.0

        diag0 = None
        if state is None:
            if phi0 is None:
                raise ConfigurationError("either phi0 or a full state is required")
            phi0 = self._project(phi0)
            forced_v = None
            if flow_params.regularization_beta > 0:
                # the pseudo-time regularized velocity carries its own initial value
                forced_v = VectorField.zeros(grid)
            state, diag0 = self._derive_state(phi0, 0.0, 0, v_prev=None,
                                              u_field=u_of_t(0.0), dt=stepper.dt,
                                              forced_v=forced_v)
        self.state = state
        self._max_w = w_surrogate_norm(state.phi)
        self.ledger.append(state.t, mean_value(state.phi),
                           mean_value(eval_source(model, state.phi)))
        self._append_series_rows(state, diag0)
        self._record_state(state)

    # -- helpers -----------------------------------------------------------

    def _project(self, phi: ScalarField) -> ScalarField:
        mask = self.grid.nyquist_mask
        if self.mode_mask is not None:
            mask = mask & self.mode_mask
        return ScalarField.from_coeffs(self.grid, phi.spectrum * mask)

    def _derive_state(self, phi: ScalarField, t: float, step_index: int,
                      v_prev, u_field, dt: float, forced_v=None):
        model = self.model
        w = compute_w(phi, model)
        mu = compute_mu(phi, model, w=w)
        p = None
        if self.freeze_velocity:
            v, diag = VectorField.zeros(self.grid), None
        elif forced_v is not None:
            v, diag = forced_v, None
        elif self.flow_params.mode == "darcy":
            v, p, diag = solve_darcy(phi, mu, u_field, model, self.flow_params,
                                     v_prev=v_prev, dt=dt, mode_mask=self.mode_mask)
        else:
            v, diag = solve_brinkman(phi, mu, u_field, model, self.flow_params,
                                     v_prev=v_prev, dt=dt, mode_mask=self.mode_mask)
        energy = compute_energy(phi, model, w=w)
        return SimState(t=t, phi=phi, mu=mu, w=w, v=v, p=p,
                        energy=energy, step_index=step_index), diag

    def _advance_phi(self, state: SimState, dt: float) -> ScalarField:
        g = self.grid
        model = self.model
        rhs = mobility_flux_divergence(state.phi, state.mu, model).values
        rhs -= transport_term(state.v, state.phi).values
        rhs += model.source(state.phi.values)
        phi_hat = state.phi.spectrum
        g_hat = g.fft(rhs) + self.implicit_symbol * phi_hat
        new_hat = (phi_hat + dt * g_hat) / (1.0 + dt * self.implicit_symbol)
        new_hat = new_hat * g.nyquist_mask
        if self.mode_mask is not None:
            new_hat = new_hat * self.mode_mask
        return ScalarField.from_coeffs(g, new_hat)

    def _record_state(self, state: SimState):
        if not self.record:
            return
        stride = max(self.record_stride, 1)
        if state.step_index % stride:
            return
        self.trajectory_times.append(state.t)
        for name in self.record:
            if name == "phi":
                self.trajectory[name].append(state.phi.values.copy())
            elif name == "v":
                self.trajectory[name].append(state.v.stack())
            elif name == "mu":
                self.trajectory[name].append(state.mu.values.copy())
            elif name == "w":
                self.trajectory[name].append(state.w.values.copy())
            else:
                raise ConfigurationError(f"unknown trajectory record '{name}'")

    def _row(self, state: SimState, dt: float, diag, accepted: bool):
        lap_phi = laplacian(state.phi)
        return {
            "step": state.step_index,
            "t": state.t,
            "dt": dt,
            "E_total": state.energy.total,
            "E_willmore": state.energy.willmore,
            "E_GL": state.energy.ginzburg_landau,
            "mean_phi": mean_value(state.phi),
            "mean_S": mean_value(eval_source(self.model, state.phi)),
            "mean_mu": mean_value(state.mu),
            "norm_phi_L2": l2_norm(state.phi),
            "norm_lap_phi_L2": float(np.sqrt(max(inner(lap_phi, lap_phi), 0.0))),
            "norm_grad_mu_L2": float(np.sqrt(max(grad_norm_sq(state.mu), 0.0))),
            "norm_v_L2": l2_norm(state.v),
            "flow_iters": 0 if diag is None else diag.iterations,
            "flow_residual": 0.0 if diag is None else diag.final_residual,
            "accepted": 1 if accepted else 0,
        }

    # -- stepping ----------------------------------------------------------

    def step(self) -> SimState:
        """Advance by one accepted step (retrying with smaller dt on rejection)."""
        state = self.state
        cfg = self.cfg
        dt = min(self.dt, cfg.t_final - state.t) if cfg.t_final > state.t else self.dt
        while True:
            t_new = state.t + dt
            u_new = self.u_of_t(t_new)
            phi_new = self._advance_phi(state, dt)
            candidate, diag = self._derive_state(
                phi_new, t_new, state.step_index + 1,
                v_prev=state.v, u_field=u_new, dt=dt,
            )
            active = self.model.source_active or float(np.max(np.abs(u_new.stack()))) > 0.0
            accept, next_dt, streak = adapt_dt(
                state.energy.total, candidate.energy.total, active, cfg, dt, self.streak
            )
            self.rows.append(self._row(candidate, dt, diag, accept))
            if accept:
                self.streak = streak
                self.dt = min(max(next_dt, cfg.dt_min), cfg.dt_max)
                self.state = candidate
                self._after_accept(candidate, dt, diag)
                return candidate
            dt = next_dt
            self.streak = 0
            if dt < cfg.dt_min:
                raise StepFailure(
                    f"time step underflow below dt_min={cfg.dt_min:g} at t={state.t:g}",
                    state=state,
                )

    def _append_series_rows(self, state: SimState, diag):
        model = self.model
        diss_mu = chemical_dissipation(state.phi, state.mu, model)
        diss_v = diag.dissipation if diag is not None else flow_dissipation(
            state.v, state.phi, model, viscous=self.flow_params.mode == "brinkman"
        )
        self.energy_rows.append({
            "t": state.t,
            "E_total": state.energy.total,
            "E_willmore": state.energy.willmore,
            "E_GL": state.energy.ginzburg_landau,
            "mean_phi": mean_value(state.phi),
            "mean_mu": mean_value(state.mu),
            "diss_mu": diss_mu,
            "diss_v": diss_v,
        })
        if diag is not None:
            self.flow_rows.append({
                "t": state.t,
                "flow_mode": diag.mode,
                "iterations": diag.iterations,
                "residual": diag.final_residual,
                "dissipation": diag.dissipation,
                "alpha": diag.coercivity_alpha,
            })

    def _after_accept(self, state: SimState, dt: float, diag):
        model = self.model
        self.ledger.append(state.t, mean_value(state.phi),
                           mean_value(eval_source(model, state.phi)))
        self._max_w = max(self._max_w, w_surrogate_norm(state.phi))
        self._int_grad_mu_sq += dt * grad_norm_sq(state.mu)
        vnorm = l2_norm(state.v)
        self._int_v_sq += dt * vnorm * vnorm
        self._append_series_rows(state, diag)
        self._record_state(state)

    def run(self) -> "RunResult":
        eps = 1e-12 * max(self.cfg.t_final, 1.0)
        while self.state.t < self.cfg.t_final - eps:
            self.step()
        return self.result()

    def result(self) -> "RunResult":
        return RunResult(
            final_state=self.state,
            rows=self.rows,
            energy_rows=self.energy_rows,
            flow_rows=self.flow_rows,
            ledger=self.ledger,
            stability=StabilityReport(
                max_w_surrogate=self._max_w,
                int_grad_mu_sq=self._int_grad_mu_sq,
                int_v_sq=self._int_v_sq,
            ),
            trajectory=self.trajectory,
            trajectory_times=self.trajectory_times,
        )


@dataclass
class RunResult:
    final_state: SimState
    rows: list
    energy_rows: list
    flow_rows: list
    ledger: MassLedger
    stability: StabilityReport
    trajectory: dict
    trajectory_times: list


RUN_CSV_COLUMNS = (
    "step", "t", "dt", "E_total", "E_willmore", "E_GL", "mean_phi", "mean_S",
    "mean_mu", "norm_phi_L2", "norm_lap_phi_L2", "norm_grad_mu_L2",
    "norm_v_L2", "flow_iters", "flow_residual", "accepted",
)

ENERGY_CSV_COLUMNS = (
    "t", "E_total", "E_willmore", "E_GL", "mean_phi", "mean_mu", "diss_mu", "diss_v",
)

FLOW_CSV_COLUMNS = ("t", "flow_mode", "iterations", "residual", "dissipation", "alpha")


def format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_lines(rows, columns) -> list:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_cell(row[c]) for c in columns))
    return lines


def step(state: SimState, model: ModelSpec, flow_params: FlowParams,
         cfg: StepperConfig, u_of_t) -> SimState:
    """One accepted step as a free function (fresh controller each call)."""
    sim = Simulation(state.phi.grid, model, flow_params, cfg, u_of_t, state=state)
    return sim.step()


def run(config, outdir=None, record=(), record_stride: int = 0) -> RunResult:
    """Build a simulation from a RunConfig and integrate to t_final.

    When ``outdir`` is given, the run CSV, the auxiliary energy/flow series,
    snapshots at the configured stride, and a final checkpoint are written
    there.
    """
    from .config import build_simulation  # deferred to avoid a module cycle
    from . import output

    sim = build_simulation(config, record=record, record_stride=record_stride)
    if outdir is None:
        return sim.run()
    return output.run_with_outputs(sim, config, outdir)
