"""Run configuration: INI parsing with strict key checking, validation,
and builders that turn a RunConfig into runtime objects.

Format: INI sections with ``key = value`` pairs, UTF-8, '#' comments.  Dotted
key names group related fields inside a section (e.g. ``eta.kind``).  Every
key is optional and falls back to a documented default; unknown keys are
errors in strict mode, and all violations are reported together, not just the
first.  ``to_flat_dict`` / ``from_flat_dict`` round-trip a RunConfig through
the same parsing path, which is what experiment reports embed as their
parameter echo.
"""

from __future__ import annotations

import configparser
import difflib
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .evolution import Simulation, StepperConfig
from .flow import FlowParams
from .model import (
    Coefficient,
    CoefficientSpec,
    ModelSpec,
    PotentialSpec,
    validate_assumptions,
)
from .snapshots import read_snapshot
from .spectral import Grid, ScalarField, VectorField, leray_project, truncate_modes


@dataclass(frozen=True)
class ForcingConfig:
    kind: str = "zero"
    amplitude: float = 0.0
    wavevector: tuple = (1, 0)
    component: int = 0
    divergence_free: bool = True
    profile: str = "constant"
    profile_scale: float = 1.0
    path: str = ""


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "constant"
    value: float = 0.0
    mean: float = 0.0
    modes: tuple = ()          # ((amplitude, (k1, k2[, k3])), ...)
    amplitude: float = 0.1
    band: float = 8.0
    path: str = ""


@dataclass(frozen=True)
class OutputConfig:
    csv: str = "run.csv"
    snapshot_stride: int = 0
    report_dir: str = "."


@dataclass(frozen=True)
class SweepConfig:
    levels: int = 6
    eta0: float = 1.0
    cutoffs: tuple = (8.0, 16.0, 32.0)
    betas: tuple = (1.0, 0.1, 0.01, 0.0)
    dts: tuple = (0.02, 0.01, 0.005)


@dataclass(frozen=True)
class RunConfig:
    grid: Grid = field(default_factory=lambda: Grid((64, 64), (1.0, 1.0)))
    model: ModelSpec = field(default_factory=ModelSpec)
    flow: FlowParams = field(default_factory=FlowParams)
    stepper: StepperConfig = field(default_factory=StepperConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    threads: int = 1


# -- raw value parsers -----------------------------------------------------


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: '{s}'")


def _floats(s):
    return tuple(float(x) for x in s.split())


def _ints(s):
    return tuple(int(x) for x in s.split())


def _str(s):
    return s.strip()


def _optional_float(s):
    v = s.strip().lower()
    return None if v in ("none", "") else float(s)


def _modes(s):
    groups = []
    for part in s.split(";"):
        part = part.strip()
        if not part:
            continue
        nums = part.split()
        if len(nums) < 3:
            raise ValueError(f"mode entry '{part}' needs amplitude followed by wavevector")
        groups.append((float(nums[0]), tuple(int(x) for x in nums[1:])))
    return tuple(groups)


def _choice(*options):
    def parse(s):
        v = s.strip()
        if v not in options:
            raise ValueError(f"'{v}' is not one of {options}")
        return v
    return parse


_SCHEMA = {
    "grid": {
        "dimensions": _int,
        "points": _ints,
        "lengths": _floats,
    },
    "model": {
        "potential.family": _choice("quartic", "even_poly", "zero"),
        "potential.coeffs": _floats,
        "eta.kind": _choice("constant", "tanh_affine"),
        "eta.value": _float,
        "eta.base": _float,
        "eta.amplitude": _float,
        "eta.scale": _float,
        "eta.lower": _optional_float,
        "eta.upper": _optional_float,
        "lambda.kind": _choice("constant", "tanh_affine"),
        "lambda.value": _float,
        "lambda.base": _float,
        "lambda.amplitude": _float,
        "lambda.scale": _float,
        "lambda.lower": _optional_float,
        "lambda.upper": _optional_float,
        "mobility.kind": _choice("constant", "tanh_affine"),
        "mobility.value": _float,
        "mobility.base": _float,
        "mobility.amplitude": _float,
        "mobility.scale": _float,
        "mobility.lower": _optional_float,
        "mobility.upper": _optional_float,
        "nu": _float,
        "sigma": _float,
        "h.amplitude": _float,
        "h.scale": _float,
        "epsilon": _float,
    },
    "flow": {
        "mode": _choice("brinkman", "darcy"),
        "regularization_beta": _float,
        "max_iterations": _int,
        "residual_tolerance": _float,
    },
    "stepper": {
        "dt": _float,
        "dt_min": _float,
        "dt_max": _float,
        "kappa": _float,
        "adaptive": _bool,
        "energy_increase_tol": _float,
        "shrink": _float,
        "grow": _float,
        "grow_patience": _int,
        "t_final": _float,
        "cutoff": _optional_float,
    },
    "forcing": {
        "kind": _choice("zero", "single_mode", "file"),
        "amplitude": _float,
        "wavevector": _ints,
        "component": _int,
        "divergence_free": _bool,
        "profile": _choice("constant", "ramp", "sinusoid"),
        "profile.scale": _float,
        "path": _str,
    },
    "initial": {
        "kind": _choice("constant", "modes", "random", "file"),
        "value": _float,
        "mean": _float,
        "modes": _modes,
        "amplitude": _float,
        "band": _float,
        "path": _str,
    },
    "output": {
        "csv": _str,
        "snapshot_stride": _int,
        "report_dir": _str,
    },
    "run": {
        "seed": _int,
        "threads": _int,
    },
    "sweep": {
        "levels": _int,
        "eta0": _float,
        "cutoffs": _floats,
        "betas": _floats,
        "dts": _floats,
    },
}


def _coefficient_from(raw: dict, prefix: str) -> Coefficient:
    get = lambda key, default: raw.get(f"{prefix}.{key}", default)
    return Coefficient(
        kind=get("kind", "constant"),
        value=get("value", 1.0),
        base=get("base", 1.0),
        amplitude=get("amplitude", 0.0),
        scale=get("scale", 1.0),
        lower=get("lower", None),
        upper=get("upper", None),
    )


def _assemble(raw: dict) -> RunConfig:
    g = raw.get("grid", {})
    d = g.get("dimensions", 2)
    points = g.get("points", (64,) * d)
    lengths = g.get("lengths", (1.0,) * d)
    if len(points) != d or len(lengths) != d:
        raise ConfigurationError(
            f"grid: expected {d} entries for points/lengths, got {len(points)}/{len(lengths)}"
        )
    grid = Grid(points, lengths)

    m = raw.get("model", {})
    potential = PotentialSpec(
        family=m.get("potential.family", "quartic"),
        coeffs=m.get("potential.coeffs", ()),
    )
    coeffs = CoefficientSpec(
        eta=_coefficient_from(m, "eta"),
        lam=_coefficient_from(m, "lambda"),
        mobility=_coefficient_from(m, "mobility"),
    )
    model = ModelSpec(
        potential=potential,
        coefficients=coeffs,
        nu=m.get("nu", 0.0),
        sigma=m.get("sigma", 0.0),
        h_amplitude=m.get("h.amplitude", 0.0),
        h_scale=m.get("h.scale", 1.0),
        epsilon=m.get("epsilon", 1.0),
    )

    f = raw.get("flow", {})
    flow = FlowParams(
        mode=f.get("mode", "brinkman"),
        regularization_beta=f.get("regularization_beta", 0.0),
        max_iterations=f.get("max_iterations", 500),
        residual_tolerance=f.get("residual_tolerance", 1e-9),
    )

    s = raw.get("stepper", {})
    stepper = StepperConfig(
        dt=s.get("dt", 1e-3),
        dt_min=s.get("dt_min", 1e-8),
        dt_max=s.get("dt_max", 1e-2),
        kappa=s.get("kappa", 0.0),
        adaptive=s.get("adaptive", True),
        energy_increase_tol=s.get("energy_increase_tol", 1e-10),
        shrink=s.get("shrink", 0.5),
        grow=s.get("grow", 1.1),
        grow_patience=s.get("grow_patience", 5),
        t_final=s.get("t_final", 1.0),
        cutoff=s.get("cutoff", None),
    )

    fo = raw.get("forcing", {})
    forcing = ForcingConfig(
        kind=fo.get("kind", "zero"),
        amplitude=fo.get("amplitude", 0.0),
        wavevector=tuple(fo.get("wavevector", (1,) + (0,) * (d - 1))),
        component=fo.get("component", 0),
        divergence_free=fo.get("divergence_free", True),
        profile=fo.get("profile", "constant"),
        profile_scale=fo.get("profile.scale", 1.0),
        path=fo.get("path", ""),
    )

    ini = raw.get("initial", {})
    initial = InitialConfig(
        kind=ini.get("kind", "constant"),
        value=ini.get("value", 0.0),
        mean=ini.get("mean", 0.0),
        modes=ini.get("modes", ()),
        amplitude=ini.get("amplitude", 0.1),
        band=ini.get("band", 8.0),
        path=ini.get("path", ""),
    )

    o = raw.get("output", {})
    output = OutputConfig(
        csv=o.get("csv", "run.csv"),
        snapshot_stride=o.get("snapshot_stride", 0),
        report_dir=o.get("report_dir", "."),
    )

    sw = raw.get("sweep", {})
    sweep = SweepConfig(
        levels=sw.get("levels", 6),
        eta0=sw.get("eta0", 1.0),
        cutoffs=tuple(sw.get("cutoffs", (8.0, 16.0, 32.0))),
        betas=tuple(sw.get("betas", (1.0, 0.1, 0.01, 0.0))),
        dts=tuple(sw.get("dts", (0.02, 0.01, 0.005))),
    )

    r = raw.get("run", {})
    return RunConfig(
        grid=grid, model=model, flow=flow, stepper=stepper, forcing=forcing,
        initial=initial, output=output, sweep=sweep,
        seed=r.get("seed", 0), threads=r.get("threads", 1),
    )


def _parse_items(items, strict: bool, origin: str):
    """items: iterable of (section, key, raw string). Returns raw value dict."""
    raw = {}
    errors = []
    for section, key, text in items:
        if section not in _SCHEMA:
            hint = difflib.get_close_matches(section, _SCHEMA.keys(), n=1)
            msg = f"{origin}: unknown section [{section}]"
            if hint:
                msg += f" (did you mean [{hint[0]}]?)"
            errors.append(msg)
            continue
        schema = _SCHEMA[section]
        if key not in schema:
            hint = difflib.get_close_matches(key, schema.keys(), n=1)
            msg = f"{origin}: unknown key '{key}' in [{section}]"
            if hint:
                msg += f" (did you mean '{hint[0]}'?)"
            if strict:
                errors.append(msg)
            else:
                print(f"warning: ignoring {msg}", file=sys.stderr)
            continue
        try:
            raw.setdefault(section, {})[key] = schema[key](text)
        except ValueError as exc:
            errors.append(f"{origin}: [{section}] {key}: {exc}")
    if errors:
        raise ConfigurationError("\n".join(errors))
    return raw


def parse_config(path, strict: bool = True, validate: bool = True) -> RunConfig:
    """Parse and fully validate an INI run configuration.

    Collects every violated key into one diagnostic.  With ``validate`` the
    model is certified against the structural assumptions before returning.
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None
    )
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cp.read_file(fh, source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc

    items = [
        (section, key, cp.get(section, key))
        for section in cp.sections()
        for key in cp[section]
    ]
    raw = _parse_items(items, strict, str(path))
    config = _assemble(raw)
    if validate:
        validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    """Cross-field validation beyond what the dataclasses enforce."""
    errors = []
    try:
        validate_assumptions(config.model)
    except ConfigurationError as exc:
        errors.append(str(exc))
    d = config.grid.ndim
    if config.forcing.kind == "single_mode":
        if len(config.forcing.wavevector) != d:
            errors.append("forcing: wavevector length must match grid dimension")
        if not np.isfinite(config.forcing.amplitude):
            errors.append("forcing: amplitude must be finite (square-integrable forcing)")
        if not (0 <= config.forcing.component < d):
            errors.append(f"forcing: component must lie in [0, {d})")
    if config.forcing.kind == "file" and not config.forcing.path:
        errors.append("forcing: kind 'file' needs a path")
    if config.initial.kind == "modes":
        for amp, wv in config.initial.modes:
            if len(wv) != d:
                errors.append(f"initial: mode wavevector {wv} does not match dimension {d}")
    if config.initial.kind == "file" and not config.initial.path:
        errors.append("initial: kind 'file' needs a path")
    if config.stepper.cutoff is not None:
        band = config.grid.nyquist_band_limit()
        if config.stepper.cutoff > band + 1e-12:
            errors.append(
                f"stepper: cutoff {config.stepper.cutoff:g} exceeds the dealiased band {band:g}"
            )
    if config.threads < 1:
        errors.append("run: threads must be >= 1")
    if errors:
        raise ConfigurationError("\n".join(errors))


# -- flat echo and round trip ----------------------------------------------


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_format_value(v) for v in value)
    return str(value)


def to_flat_dict(config: RunConfig) -> dict:
    """Flatten to 'section.key' -> string, parseable by from_flat_dict."""
    c = config
    out = {
        "grid.dimensions": c.grid.ndim,
        "grid.points": tuple(c.grid.sizes),
        "grid.lengths": tuple(c.grid.lengths),
        "model.potential.family": c.model.potential.family,
        "model.potential.coeffs": tuple(c.model.potential.coeffs),
        "model.nu": c.model.nu,
        "model.sigma": c.model.sigma,
        "model.h.amplitude": c.model.h_amplitude,
        "model.h.scale": c.model.h_scale,
        "model.epsilon": c.model.epsilon,
        "flow.mode": c.flow.mode,
        "flow.regularization_beta": c.flow.regularization_beta,
        "flow.max_iterations": c.flow.max_iterations,
        "flow.residual_tolerance": c.flow.residual_tolerance,
        "stepper.dt": c.stepper.dt,
        "stepper.dt_min": c.stepper.dt_min,
        "stepper.dt_max": c.stepper.dt_max,
        "stepper.kappa": c.stepper.kappa,
        "stepper.adaptive": c.stepper.adaptive,
        "stepper.energy_increase_tol": c.stepper.energy_increase_tol,
        "stepper.shrink": c.stepper.shrink,
        "stepper.grow": c.stepper.grow,
        "stepper.grow_patience": c.stepper.grow_patience,
        "stepper.t_final": c.stepper.t_final,
        "stepper.cutoff": "none" if c.stepper.cutoff is None else c.stepper.cutoff,
        "forcing.kind": c.forcing.kind,
        "forcing.amplitude": c.forcing.amplitude,
        "forcing.wavevector": tuple(c.forcing.wavevector),
        "forcing.component": c.forcing.component,
        "forcing.divergence_free": c.forcing.divergence_free,
        "forcing.profile": c.forcing.profile,
        "forcing.profile.scale": c.forcing.profile_scale,
        "forcing.path": c.forcing.path,
        "initial.kind": c.initial.kind,
        "initial.value": c.initial.value,
        "initial.mean": c.initial.mean,
        "initial.modes": " ; ".join(
            " ".join([repr(a)] + [str(k) for k in wv]) for a, wv in c.initial.modes
        ),
        "initial.amplitude": c.initial.amplitude,
        "initial.band": c.initial.band,
        "initial.path": c.initial.path,
        "output.csv": c.output.csv,
        "output.snapshot_stride": c.output.snapshot_stride,
        "output.report_dir": c.output.report_dir,
        "run.seed": c.seed,
        "run.threads": c.threads,
        "sweep.levels": c.sweep.levels,
        "sweep.eta0": c.sweep.eta0,
        "sweep.cutoffs": tuple(c.sweep.cutoffs),
        "sweep.betas": tuple(c.sweep.betas),
        "sweep.dts": tuple(c.sweep.dts),
    }
    for prefix, coeff in (
        ("model.eta", c.model.coefficients.eta),
        ("model.lambda", c.model.coefficients.lam),
        ("model.mobility", c.model.coefficients.mobility),
    ):
        out[f"{prefix}.kind"] = coeff.kind
        out[f"{prefix}.value"] = coeff.value
        out[f"{prefix}.base"] = coeff.base
        out[f"{prefix}.amplitude"] = coeff.amplitude
        out[f"{prefix}.scale"] = coeff.scale
        out[f"{prefix}.lower"] = coeff.lower
        out[f"{prefix}.upper"] = coeff.upper
    return {k: _format_value(v) for k, v in out.items()}


def from_flat_dict(flat: dict, strict: bool = True, validate: bool = False) -> RunConfig:
    items = []
    for dotted, text in flat.items():
        section, _, key = dotted.partition(".")
        items.append((section, key, text))
    raw = _parse_items(items, strict, "<echo>")
    config = _assemble(raw)
    if validate:
        validate_config(config)
    return config


# -- builders ---------------------------------------------------------------


def build_initial_field(config: RunConfig) -> ScalarField:
    grid = config.grid
    ini = config.initial
    if ini.kind == "constant":
        values = np.full(grid.shape, ini.value + ini.mean)
    elif ini.kind == "modes":
        values = np.full(grid.shape, ini.mean)
        meshes = grid.meshes()
        for amp, wv in ini.modes:
            phase = sum(
                2.0 * np.pi * wv[i] / grid.lengths[i] * meshes[i] for i in range(grid.ndim)
            )
            values = values + amp * np.cos(phase)
    elif ini.kind == "random":
        rng = np.random.Generator(np.random.Philox(config.seed))
        noise = ScalarField(grid, rng.standard_normal(grid.shape))
        band = min(ini.band, grid.nyquist_band_limit())
        noise = truncate_modes(noise, band)
        centered = noise.values - np.mean(noise.values)
        rms = float(np.sqrt(np.mean(centered ** 2)))
        scale = ini.amplitude / rms if rms > 0 else 0.0
        values = ini.mean + scale * centered
    elif ini.kind == "file":
        fgrid, fields = read_snapshot(ini.path)
        if fgrid.sizes != grid.sizes or fgrid.lengths != grid.lengths:
            raise ConfigurationError(
                f"initial field file grid {fgrid.sizes} does not match run grid {grid.sizes}"
            )
        if "phi" not in fields:
            raise ConfigurationError(f"{ini.path}: snapshot lacks a 'phi' field")
        values = fields["phi"]
        if not np.all(np.isfinite(values)):
            raise ConfigurationError(f"{ini.path}: phi field contains non-finite values")
    else:
        raise ConfigurationError(f"unknown initial kind '{ini.kind}'")
    return ScalarField(grid, values)


def build_forcing(config: RunConfig):
    """Returns u_of_t: t -> VectorField (time profile times a fixed field)."""
    grid = config.grid
    fo = config.forcing
    if fo.kind == "zero":
        base = VectorField.zeros(grid)
    elif fo.kind == "single_mode":
        meshes = grid.meshes()
        phase = sum(
            2.0 * np.pi * fo.wavevector[i] / grid.lengths[i] * meshes[i]
            for i in range(grid.ndim)
        )
        arrays = [np.zeros(grid.shape) for _ in range(grid.ndim)]
        arrays[fo.component] = fo.amplitude * np.cos(phase)
        base = VectorField.from_arrays(grid, arrays)
        if fo.divergence_free:
            base = leray_project(base)
    elif fo.kind == "file":
        fgrid, fields = read_snapshot(fo.path)
        if fgrid.sizes != grid.sizes or fgrid.lengths != grid.lengths:
            raise ConfigurationError(
                f"forcing file grid {fgrid.sizes} does not match run grid {grid.sizes}"
            )
        arrays = []
        for i in range(1, grid.ndim + 1):
            name = f"u_{i}"
            if name not in fields:
                raise ConfigurationError(f"{fo.path}: snapshot lacks field '{name}'")
            arrays.append(fields[name])
        base = VectorField.from_arrays(grid, arrays)
    else:
        raise ConfigurationError(f"unknown forcing kind '{fo.kind}'")

    profile = fo.profile
    scale = fo.profile_scale
    if profile == "constant":
        g_of_t = lambda t: 1.0
    elif profile == "ramp":
        g_of_t = lambda t: t / scale
    elif profile == "sinusoid":
        g_of_t = lambda t: np.sin(2.0 * np.pi * t / scale)
    else:
        raise ConfigurationError(f"unknown forcing profile '{profile}'")

    def u_of_t(t: float) -> VectorField:
        return base * g_of_t(t)

    return u_of_t


def build_simulation(config: RunConfig, record=(), record_stride: int = 0) -> Simulation:
    validate_config(config)
    phi0 = build_initial_field(config)
    u_of_t = build_forcing(config)
    return Simulation(
        config.grid, config.model, config.flow, config.stepper, u_of_t,
        phi0=phi0, record=record, record_stride=record_stride,
    )
