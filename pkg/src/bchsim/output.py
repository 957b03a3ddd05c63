"""Output management: run CSVs, snapshots, checkpointing, resume."""

from __future__ import annotations

import os

from .errors import ConfigurationError
from .evolution import (
    ENERGY_CSV_COLUMNS,
    FLOW_CSV_COLUMNS,
    RUN_CSV_COLUMNS,
    RunResult,
    Simulation,
    csv_lines,
)
from .snapshots import read_checkpoint, state_fields, write_checkpoint, write_snapshot
from .spectral import ScalarField, VectorField

CHECKPOINT_NAME = "checkpoint.chbk"
OUTPUT_DIR_ENV = "BCHSIM_OUT"


def default_outdir(cli_value=None) -> str:
    if cli_value:
        return cli_value
    return os.environ.get(OUTPUT_DIR_ENV, ".")


def _write_lines(path, lines, append=False):
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def write_result_files(result: RunResult, config, outdir, append=False):
    os.makedirs(outdir, exist_ok=True)
    run_lines = csv_lines(result.rows, RUN_CSV_COLUMNS)
    energy_lines = csv_lines(result.energy_rows, ENERGY_CSV_COLUMNS)
    flow_lines = csv_lines(result.flow_rows, FLOW_CSV_COLUMNS)
    if append:
        run_lines, energy_lines, flow_lines = run_lines[1:], energy_lines[1:], flow_lines[1:]
    _write_lines(os.path.join(outdir, config.output.csv), run_lines, append)
    _write_lines(os.path.join(outdir, "energy.csv"), energy_lines, append)
    _write_lines(os.path.join(outdir, "flow.csv"), flow_lines, append)


def run_with_outputs(sim: Simulation, config, outdir, append=False) -> RunResult:
    """Drive the time loop, writing snapshots at the configured stride and a
    final checkpoint; CSVs are written when the run finishes."""
    os.makedirs(outdir, exist_ok=True)
    stride = config.output.snapshot_stride
    eps = 1e-12 * max(sim.cfg.t_final, 1.0)
    while sim.state.t < sim.cfg.t_final - eps:
        state = sim.step()
        if stride > 0 and state.step_index % stride == 0:
            snap = os.path.join(outdir, f"step-{state.step_index:06d}.chbk")
            write_snapshot(snap, sim.grid, state_fields(state))
    result = sim.result()
    write_result_files(result, config, outdir, append=append)
    write_checkpoint(
        os.path.join(outdir, CHECKPOINT_NAME),
        sim.state, dt=sim.dt, streak=sim.streak, seed=config.seed,
    )
    return result


def load_checkpoint_state(config, path):
    """Rebuild a SimState-compatible start from a checkpoint, checking the grid."""
    from .energetics import compute_energy, compute_mu, compute_w
    from .evolution import SimState

    grid, fields, meta = read_checkpoint(path)
    cgrid = config.grid
    if grid.sizes != cgrid.sizes or tuple(grid.lengths) != tuple(cgrid.lengths):
        raise ConfigurationError(
            f"checkpoint grid {grid.sizes}x{grid.lengths} does not match "
            f"configured grid {cgrid.sizes}x{cgrid.lengths}"
        )
    if "phi" not in fields:
        raise ConfigurationError(f"{path}: checkpoint lacks field 'phi'")
    phi = ScalarField(cgrid, fields["phi"])
    comps = []
    for i in range(1, cgrid.ndim + 1):
        name = f"v_{i}"
        if name not in fields:
            raise ConfigurationError(f"{path}: checkpoint lacks field '{name}'")
        comps.append(ScalarField(cgrid, fields[name]))
    v = VectorField(comps, divergence_free=True)

    model = config.model
    w = compute_w(phi, model)
    mu = compute_mu(phi, model, w=w)
    energy = compute_energy(phi, model, w=w)
    state = SimState(t=meta["t"], phi=phi, mu=mu, w=w, v=v, p=None,
                     energy=energy, step_index=meta["step_index"])
    return state, meta


def resume(config, checkpoint_path, outdir, record=(), record_stride: int = 0) -> RunResult:
    """Continue a checkpointed run to config.stepper.t_final.

    Appends to the CSVs in outdir when they exist, so the combined files are
    bitwise identical to an uninterrupted run at the same thread count.
    """
    from .config import build_forcing

    state, meta = load_checkpoint_state(config, checkpoint_path)
    u_of_t = build_forcing(config)
    sim = Simulation(config.grid, config.model, config.flow, config.stepper,
                     u_of_t, state=state, record=record, record_stride=record_stride)
    sim.dt = meta["dt"]
    sim.streak = meta["streak"]
    append = os.path.exists(os.path.join(outdir, config.output.csv))
    return run_with_outputs(sim, config, outdir, append=append)
