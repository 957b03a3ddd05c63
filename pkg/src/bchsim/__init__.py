"""Pseudo-spectral Brinkman-Cahn-Hilliard simulator with curvature energy."""

__version__ = "0.1.0"

from .spectral import (  # noqa: F401
    Grid,
    ScalarField,
    VectorField,
    divergence,
    forward_transform,
    gradient,
    inverse_transform,
    laplacian,
    leray_project,
    symmetrized_gradient,
    truncate_modes,
)
from .model import (  # noqa: F401
    Coefficient,
    CoefficientSpec,
    ModelSpec,
    PotentialSpec,
    eval_potential,
    eval_source,
    validate_assumptions,
)
from .energetics import (  # noqa: F401
    EnergyBreakdown,
    compute_energy,
    compute_mu,
    compute_w,
    energy_rate,
    mean_mu,
)
from .flow import (  # noqa: F401
    FlowDiagnostics,
    FlowParams,
    flow_dissipation,
    korteweg_force,
    solve_brinkman,
    solve_darcy,
)
from .evolution import (  # noqa: F401
    MassLedger,
    SimState,
    Simulation,
    StepperConfig,
    adapt_dt,
    run,
    step,
    transport_term,
)
from .config import RunConfig, parse_config  # noqa: F401
