"""Double-well potentials, bounded coefficients, source term, and the
numerical certification of the structural assumptions they must satisfy.

Coefficients eta (shear viscosity), lambda (permeability drag) and m
(mobility) are bounded scalar functions of the order parameter with declared
positive lower/upper bounds.  The potential F is an even polynomial with
positive leading coefficient; its derivative f enters both chemical
potentials.  ``validate_assumptions`` certifies the required inequalities on
a dense sample grid and reports the smallest admissible constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .errors import AssumptionViolation
from .spectral import ScalarField


_QUARTIC = [0.25, 0.0, -0.5, 0.0, 0.25]  # F(s) = (s^2 - 1)^2 / 4


@dataclass(frozen=True)
class PotentialSpec:
    """Polynomial double-well potential.

    family:
      * ``quartic``    -- F(s) = (s^2-1)^2/4, the standard choice
      * ``even_poly``  -- even polynomial from ``coeffs`` (low to high degree),
                          positive leading coefficient, degree >= 4
      * ``zero``       -- F = f = 0; diagnostic only, fails structural
                          validation by design (used for linear solver checks)
    """

    family: str = "quartic"
    coeffs: tuple = ()

    def __post_init__(self):
        if self.family == "quartic":
            c = _QUARTIC
        elif self.family == "even_poly":
            c = [float(x) for x in self.coeffs]
            if len(c) < 5:
                raise AssumptionViolation("even_poly potential needs degree >= 4")
            if any(abs(x) > 0 for x in c[1::2]):
                raise AssumptionViolation("potential must be an even polynomial")
            if c[-1] <= 0:
                raise AssumptionViolation("potential leading coefficient must be positive")
        elif self.family == "zero":
            c = [0.0]
        else:
            raise AssumptionViolation(f"unknown potential family '{self.family}'")
        object.__setattr__(self, "coeffs", tuple(c))
        P = Polynomial(c)
        object.__setattr__(self, "_F", P)
        object.__setattr__(self, "_f", P.deriv(1))
        object.__setattr__(self, "_fp", P.deriv(2))
        object.__setattr__(self, "_fpp", P.deriv(3))

    def F(self, s):
        return self._F(s)

    def f(self, s):
        return self._f(s)

    def fp(self, s):
        return self._fp(s)

    def fpp(self, s):
        return self._fpp(s)


@dataclass(frozen=True)
class Coefficient:
    """Bounded scalar coefficient of the order parameter.

    kind ``constant``: value(s) = value.
    kind ``tanh_affine``: value(s) = base + amplitude * tanh(s / scale); the
    smooth clamp keeps the range inside [base - |amplitude|, base + |amplitude|].
    Declared bounds default to the tight range of the chosen form.
    """

    kind: str = "constant"
    value: float = 1.0
    base: float = 1.0
    amplitude: float = 0.0
    scale: float = 1.0
    lower: float = field(default=None)
    upper: float = field(default=None)

    def __post_init__(self):
        if self.kind not in ("constant", "tanh_affine"):
            raise AssumptionViolation(f"unknown coefficient kind '{self.kind}'")
        if self.kind == "tanh_affine" and self.scale <= 0:
            raise AssumptionViolation("tanh_affine coefficient needs scale > 0")
        lo, hi = self.lower, self.upper
        if lo is None:
            lo = self.value if self.kind == "constant" else self.base - abs(self.amplitude)
        if hi is None:
            hi = self.value if self.kind == "constant" else self.base + abs(self.amplitude)
        object.__setattr__(self, "lower", float(lo))
        object.__setattr__(self, "upper", float(hi))

    def __call__(self, s):
        if self.kind == "constant":
            return np.full_like(np.asarray(s, dtype=float), self.value)
        return self.base + self.amplitude * np.tanh(np.asarray(s, dtype=float) / self.scale)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or self.amplitude == 0.0

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class CoefficientSpec:
    eta: Coefficient = Coefficient()
    lam: Coefficient = Coefficient()
    mobility: Coefficient = Coefficient()


@dataclass(frozen=True)
class ModelSpec:
    """Full model: potential, coefficients, curvature weight nu, source.

    The source is S(s) = -sigma*s + h(s) with h(s) = h_amplitude*tanh(s/h_scale),
    so sup|h| = |h_amplitude| and Lip(h) = |h_amplitude|/h_scale.  epsilon is
    kept as a field for configuration echo but the whole package works at the
    normalization epsilon = 1.
    """

    potential: PotentialSpec = PotentialSpec()
    coefficients: CoefficientSpec = CoefficientSpec()
    nu: float = 0.0
    sigma: float = 0.0
    h_amplitude: float = 0.0
    h_scale: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.epsilon != 1.0:
            raise AssumptionViolation("epsilon is fixed to 1 in this implementation")
        if self.h_scale <= 0:
            raise AssumptionViolation("source h needs scale > 0")

    # potential shorthands
    def F(self, s):
        return self.potential.F(s)

    def f(self, s):
        return self.potential.f(s)

    def fp(self, s):
        return self.potential.fp(s)

    def fpp(self, s):
        return self.potential.fpp(s)

    def eta(self, s):
        return self.coefficients.eta(s)

    def lam(self, s):
        return self.coefficients.lam(s)

    def mobility(self, s):
        return self.coefficients.mobility(s)

    def h(self, s):
        if self.h_amplitude == 0.0:
            return np.zeros_like(np.asarray(s, dtype=float))
        return self.h_amplitude * np.tanh(np.asarray(s, dtype=float) / self.h_scale)

    def source(self, s):
        return -self.sigma * np.asarray(s, dtype=float) + self.h(s)

    @property
    def source_active(self) -> bool:
        return self.sigma != 0.0 or self.h_amplitude != 0.0


def eval_potential(spec, s):
    """Evaluate (F, f, f', f'') at s; works pointwise on arrays."""
    pot = spec.potential if isinstance(spec, ModelSpec) else spec
    return pot.F(s), pot.f(s), pot.fp(s), pot.fpp(s)


def eval_source(spec: ModelSpec, phi: ScalarField) -> ScalarField:
    """Pointwise source field S(phi) = -sigma*phi + h(phi)."""
    return ScalarField(phi.grid, spec.source(phi.values))


@dataclass(frozen=True)
class ValidationReport:
    sample_radius: float
    samples: int
    c1: float
    c2: float
    c3: float
    c3_prime: float
    coefficient_ranges: dict
    coefficient_lipschitz: dict
    passed: bool = True


def validate_assumptions(spec: ModelSpec, sample_radius: float = 4.0,
                         samples: int = 100001) -> ValidationReport:
    """Certify the structural inequalities on [-R, R] by dense sampling.

    Returns the smallest constants C1 (from f' >= -C1), C2 (|F| <= C2(|s f|+1)),
    C3 (|s f'| <= C3(|f|+1)) and C3' (|f'| <= C3'(|f|+1)) observed on the
    sample grid, together with the observed coefficient ranges and difference
    quotients.  Raises AssumptionViolation naming the first failed inequality.
    """
    if sample_radius < 4.0:
        raise AssumptionViolation("sample radius must be at least 4")
    if samples < 1000:
        raise AssumptionViolation("need at least 1000 samples")

    s = np.linspace(-sample_radius, sample_radius, int(samples))
    F, f, fp, _ = eval_potential(spec, s)

    # superlinearity of f: positive leading coefficient, degree >= 3
    coeffs = spec.potential.coeffs
    if len(coeffs) < 5 or coeffs[-1] <= 0:
        raise AssumptionViolation(
            "superlinearity fails: f(s)/s must tend to +inf (potential degree >= 4 "
            "with positive leading coefficient required)"
        )
    c1 = float(max(-np.min(fp), 0.0))
    c2 = float(np.max(np.abs(F) / (np.abs(s * f) + 1.0)))
    c3 = float(np.max(np.abs(s * fp) / (np.abs(f) + 1.0)))
    c3p = float(np.max(np.abs(fp) / (np.abs(f) + 1.0)))

    ranges, lips = {}, {}
    coeff = spec.coefficients
    for name, fun in (("eta", coeff.eta), ("lambda", coeff.lam), ("m", coeff.mobility)):
        vals = fun(s)
        lo, hi = float(np.min(vals)), float(np.max(vals))
        ranges[name] = (lo, hi)
        if lo <= 0.0:
            raise AssumptionViolation(
                f"coefficient positivity fails: {name} reaches {lo:.3g} <= 0 on the sample grid"
            )
        if lo < fun.lower - 1e-12 or hi > fun.upper + 1e-12:
            raise AssumptionViolation(
                f"declared bounds violated: {name} takes values in [{lo:.6g}, {hi:.6g}] "
                f"outside [{fun.lower:.6g}, {fun.upper:.6g}]"
            )
        if fun.lower <= 0.0:
            raise AssumptionViolation(
                f"coefficient positivity fails: declared lower bound of {name} must be positive"
            )
        quot = np.abs(np.diff(vals)) / np.diff(s)
        lips[name] = float(np.max(quot)) if quot.size else 0.0
        if not np.isfinite(lips[name]):
            raise AssumptionViolation(f"coefficient {name} is not Lipschitz on the sample range")

    return ValidationReport(
        sample_radius=float(sample_radius),
        samples=int(samples),
        c1=c1,
        c2=c2,
        c3=c3,
        c3_prime=c3p,
        coefficient_ranges=ranges,
        coefficient_lipschitz=lips,
    )
