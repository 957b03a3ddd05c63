"""Stationary velocity solves: Brinkman and Darcy with variable coefficients.

Both problems are posed on the divergence-free subspace after Leray
projection.  The Brinkman operator

    v  ->  P( -div(eta(phi) Dv) + lambda(phi) v )

is symmetric positive definite there (the eta term pairs symmetric gradients
pointwise on the padded grid, the lambda term is a positive multiplier), so
it is solved with preconditioned conjugate gradients.  The preconditioner is
the exact inverse of the constant-coefficient operator with eta, lambda
replaced by the midpoints of their declared bounds; for divergence-free
fields -div(eta_bar D v) = -(eta_bar/2) lap v, so the symbol is
(eta_bar/2)|k|^2 + lambda_bar.  The Darcy operator drops the viscous term.

An optional pseudo-time term beta (v - v_prev)/dt can be added; it shifts the
operator by beta/dt times the identity and feeds beta/dt * v_prev into the
right-hand side.  Residual certificates (full relative-residual history) are
returned with every solve and are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .model import ModelSpec
from .spectral import Grid, ScalarField, VectorField

_KORN_CONSTANT = 2.0  # from ||D v||^2 = ||grad v||^2 / 2 on periodic div-free fields


@dataclass(frozen=True)
class FlowParams:
    mode: str = "brinkman"
    regularization_beta: float = 0.0
    max_iterations: int = 500
    residual_tolerance: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("brinkman", "darcy"):
            raise ValueError(f"unknown flow mode '{self.mode}'")
        if not (0.0 < self.residual_tolerance <= 1e-3):
            raise ValueError("residual_tolerance must lie in (0, 1e-3]")
        if self.regularization_beta < 0:
            raise ValueError("regularization_beta must be >= 0")


@dataclass(frozen=True)
class FlowDiagnostics:
    mode: str
    iterations: int
    final_residual: float
    residual_history: tuple
    coercivity_alpha: float
    dissipation: float


def coercivity_alpha(model: ModelSpec) -> float:
    c = model.coefficients
    return min(c.eta.lower, c.lam.lower) / _KORN_CONSTANT


def korteweg_force(mu: ScalarField, phi: ScalarField) -> VectorField:
    """Capillary body force mu * grad(phi), dealiased."""
    g = mu.grid
    if phi.grid is not g and phi.grid != g:
        raise ValueError("mu and phi must live on the same grid")
    mu_fine = g.upsample(mu.values)
    phi_pad = g.pad_coeffs(phi.spectrum)
    comps = []
    for i in range(g.ndim):
        dphi_fine = g.ifft_fine(1j * g.fine_kd[i] * phi_pad)
        comps.append(ScalarField(g, g.downsample(mu_fine * dphi_fine)))
    return VectorField(comps)


def _leray_spectra(grid: Grid, hats: np.ndarray) -> np.ndarray:
    k2 = grid.k2
    kdotv = np.sum(grid.kd * hats, axis=0)
    scale = np.where(k2 > 0, kdotv / np.where(k2 > 0, k2, 1.0), 0.0)
    return hats - grid.kd * scale


class _ProjectedOperator:
    """Shared machinery for the Leray-projected velocity operators.

    Works on stacked physical arrays of shape (d, *grid.shape).  When a mode
    mask is given, the operator is restricted to that band (the discrete
    velocity analogue of the scalar Galerkin projection).
    """

    def __init__(self, grid: Grid, phi: ScalarField, model: ModelSpec,
                 viscous: bool, shift: float = 0.0, mode_mask=None):
        self.grid = grid
        self.viscous = viscous
        self.shift = float(shift)
        self.mask = mode_mask
        phi_fine = grid.upsample(phi.values)
        self.lam_fine = model.lam(phi_fine)
        self.eta_fine = model.eta(phi_fine) if viscous else None
        eta_bar = model.coefficients.eta.midpoint if viscous else 0.0
        lam_bar = model.coefficients.lam.midpoint
        self.precond_symbol = 0.5 * eta_bar * grid.k2 + lam_bar + self.shift

    def project(self, v: np.ndarray) -> np.ndarray:
        g = self.grid
        hats = np.stack([g.fft(v[i]) for i in range(g.ndim)])
        hats = _leray_spectra(g, hats) * g.nyquist_mask
        if self.mask is not None:
            hats = hats * self.mask
        return np.stack([g.ifft(hats[i]) for i in range(g.ndim)])

    def apply(self, v: np.ndarray) -> np.ndarray:
        g = self.grid
        d = g.ndim
        pads = [g.pad_coeffs(g.fft(v[i])) for i in range(d)]
        out_fine = [np.zeros(g.fine_sizes, dtype=complex) for _ in range(d)]
        if self.viscous:
            for i in range(d):
                for j in range(i, d):
                    dv_ij = 0.5 * (
                        g.ifft_fine(1j * g.fine_kd[i] * pads[j])
                        + g.ifft_fine(1j * g.fine_kd[j] * pads[i])
                    )
                    t_ij = g.fft_fine(self.eta_fine * dv_ij)
                    # -div of the symmetric stress row by row
                    out_fine[i] -= 1j * g.fine_kd[j] * t_ij
                    if i != j:
                        out_fine[j] -= 1j * g.fine_kd[i] * t_ij
        for i in range(d):
            vi_fine = g.ifft_fine(pads[i])
            out_fine[i] += g.fft_fine(self.lam_fine * vi_fine)
        hats = np.stack([g.crop_coeffs(out_fine[i]) for i in range(d)])
        hats = _leray_spectra(g, hats)
        if self.mask is not None:
            hats = hats * self.mask
        result = np.stack([g.ifft(hats[i]) for i in range(d)])
        if self.shift:
            result += self.shift * v
        return result

    def precondition(self, r: np.ndarray) -> np.ndarray:
        g = self.grid
        hats = np.stack([g.fft(r[i]) / self.precond_symbol for i in range(g.ndim)])
        hats = _leray_spectra(g, hats) * g.nyquist_mask
        if self.mask is not None:
            hats = hats * self.mask
        return np.stack([g.ifft(hats[i]) for i in range(g.ndim)])


def _dot(a: np.ndarray, b: np.ndarray, cell_volume: float) -> float:
    return cell_volume * float(np.vdot(a, b).real)


_NOISE_FLOOR_FACTOR = 1e-13  # projecting f leaves cancellation noise ~ eps * ||f||


def _pcg(op: _ProjectedOperator, b: np.ndarray, x0: np.ndarray,
         tol: float, max_iterations: int, noise_floor: float = 0.0):
    """Preconditioned CG on the projected subspace.

    Convergence: ||r|| <= max(tol * ||b||, noise_floor).  The floor covers the
    case of a right-hand side that is pure projection roundoff (e.g. an almost
    exactly gradient Korteweg force), where a relative target is meaningless.
    """
    cv = op.grid.cell_volume
    b_norm = np.sqrt(max(_dot(b, b, cv), 0.0))
    if b_norm <= noise_floor:
        return np.zeros_like(b), 0, 0.0, (0.0,)
    target = max(tol * b_norm, noise_floor)

    x = x0.copy()
    r = b - op.apply(x)
    history = []
    res = np.sqrt(max(_dot(r, r, cv), 0.0))
    history.append(res / b_norm)
    if res <= target:
        return x, 0, res / b_norm, tuple(history)

    z = op.precondition(r)
    p = z.copy()
    rz = _dot(r, z, cv)
    for it in range(1, max_iterations + 1):
        ap = op.apply(p)
        alpha = rz / _dot(p, ap, cv)
        x += alpha * p
        r -= alpha * ap
        res = np.sqrt(max(_dot(r, r, cv), 0.0))
        history.append(res / b_norm)
        if res <= target:
            return x, it, res / b_norm, tuple(history)
        z = op.precondition(r)
        rz_new = _dot(r, z, cv)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"flow solve did not reach tolerance {tol:g} in {max_iterations} iterations "
        f"(relative residual {history[-1]:.3e})",
        residual_history=history,
    )


_symmetry_checked: set = set()


def _check_symmetry(op: _ProjectedOperator, key) -> None:
    if key in _symmetry_checked:
        return
    rng = np.random.Generator(np.random.Philox(20240301))
    g = op.grid
    a = op.project(rng.standard_normal((g.ndim,) + g.shape))
    b = op.project(rng.standard_normal((g.ndim,) + g.shape))
    cv = g.cell_volume
    lhs = _dot(op.apply(a), b, cv)
    rhs = _dot(a, op.apply(b), cv)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    if abs(lhs - rhs) > 1e-10 * scale:
        raise AssertionError("projected flow operator failed the symmetry check")
    _symmetry_checked.add(key)


def _forcing_arrays(mu, phi, u):
    f = korteweg_force(mu, phi)
    return f.stack() + u.stack()


def solve_brinkman(phi: ScalarField, mu: ScalarField, u: VectorField,
                   model: ModelSpec, params: FlowParams,
                   v_prev: VectorField | None = None, dt: float = 1.0,
                   mode_mask=None):
    """Solve the divergence-free Brinkman problem for the given state.

    Returns (v, FlowDiagnostics).  With regularization_beta > 0 the term
    beta (v - v_prev)/dt is included, so v_prev and dt matter; otherwise
    v_prev only serves as the CG warm start.
    """
    g = phi.grid
    beta = params.regularization_beta
    shift = beta / dt if beta > 0 else 0.0
    op = _ProjectedOperator(g, phi, model, viscous=True, shift=shift, mode_mask=mode_mask)
    key = ("brinkman", g.sizes, g.lengths, model.coefficients.eta.kind,
           model.coefficients.lam.kind, shift != 0.0, mode_mask is not None)
    _check_symmetry(op, key)

    b = _forcing_arrays(mu, phi, u)
    if shift and v_prev is not None:
        b = b + shift * v_prev.stack()
    floor = _NOISE_FLOOR_FACTOR * np.sqrt(max(_dot(b, b, g.cell_volume), 0.0))
    b = op.project(b)
    x0 = op.project(v_prev.stack()) if v_prev is not None else np.zeros_like(b)
    x, iters, res, history = _pcg(op, b, x0, params.residual_tolerance,
                                  params.max_iterations, noise_floor=floor)
    v = VectorField.from_arrays(g, x, divergence_free=True)
    diag = FlowDiagnostics(
        mode="brinkman",
        iterations=iters,
        final_residual=res,
        residual_history=history,
        coercivity_alpha=coercivity_alpha(model),
        dissipation=flow_dissipation(v, phi, model),
    )
    return v, diag


def solve_darcy(phi: ScalarField, mu: ScalarField, u: VectorField,
                model: ModelSpec, params: FlowParams,
                v_prev: VectorField | None = None, dt: float = 1.0,
                mode_mask=None):
    """Solve the Darcy problem; returns (v, p, FlowDiagnostics).

    The velocity solve runs on the divergence-free subspace; the mean-zero
    pressure is recovered afterwards from the momentum residual
    grad p = f - lambda(phi) v, which is a pure gradient at convergence.
    """
    g = phi.grid
    beta = params.regularization_beta
    shift = beta / dt if beta > 0 else 0.0
    op = _ProjectedOperator(g, phi, model, viscous=False, shift=shift, mode_mask=mode_mask)
    key = ("darcy", g.sizes, g.lengths, model.coefficients.lam.kind,
           shift != 0.0, mode_mask is not None)
    _check_symmetry(op, key)

    f_phys = _forcing_arrays(mu, phi, u)
    b = f_phys
    if shift and v_prev is not None:
        b = b + shift * v_prev.stack()
    floor = _NOISE_FLOOR_FACTOR * np.sqrt(max(_dot(b, b, g.cell_volume), 0.0))
    b = op.project(b)
    x0 = op.project(v_prev.stack()) if v_prev is not None else np.zeros_like(b)
    x, iters, res, history = _pcg(op, b, x0, params.residual_tolerance,
                                  params.max_iterations, noise_floor=floor)
    v = VectorField.from_arrays(g, x, divergence_free=True)

    # pressure from grad p = f - lambda(phi) v (dealiased), normalized to zero mean
    lam_v = np.stack(
        [g.downsample(op.lam_fine * g.upsample(x[i])) for i in range(g.ndim)]
    )
    residual = f_phys - lam_v
    if shift:
        residual = residual - shift * (x - (v_prev.stack() if v_prev is not None else 0.0))
    ghat = np.stack([g.fft(residual[i]) for i in range(g.ndim)])
    k2 = np.where(g.k2 > 0, g.k2, 1.0)
    p_hat = np.where(g.k2 > 0, -1j * np.sum(g.kd * ghat, axis=0) / k2, 0.0)
    p = ScalarField.from_coeffs(g, p_hat)

    diag = FlowDiagnostics(
        mode="darcy",
        iterations=iters,
        final_residual=res,
        residual_history=history,
        coercivity_alpha=coercivity_alpha(model),
        dissipation=flow_dissipation(v, phi, model, viscous=False),
    )
    return v, p, diag


def recover_pressure(v: VectorField, phi: ScalarField, mu: ScalarField,
                     u: VectorField, model: ModelSpec) -> ScalarField:
    """Optional Brinkman post-processing: mean-zero p from the momentum residual."""
    g = phi.grid
    op = _ProjectedOperator(g, phi, model, viscous=True)
    x = v.stack()
    d = g.ndim
    pads = [g.pad_coeffs(g.fft(x[i])) for i in range(d)]
    stress_div = [np.zeros(g.fine_sizes, dtype=complex) for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            dv_ij = 0.5 * (
                g.ifft_fine(1j * g.fine_kd[i] * pads[j])
                + g.ifft_fine(1j * g.fine_kd[j] * pads[i])
            )
            t_ij = g.fft_fine(op.eta_fine * dv_ij)
            stress_div[i] += 1j * g.fine_kd[j] * t_ij
            if i != j:
                stress_div[j] += 1j * g.fine_kd[i] * t_ij
    lam_v = np.stack([g.downsample(op.lam_fine * g.upsample(x[i])) for i in range(d)])
    div_stress = np.stack([g.ifft(g.crop_coeffs(stress_div[i])) for i in range(d)])
    residual = _forcing_arrays(mu, phi, u) + div_stress - lam_v
    ghat = np.stack([g.fft(residual[i]) for i in range(d)])
    k2 = np.where(g.k2 > 0, g.k2, 1.0)
    p_hat = np.where(g.k2 > 0, -1j * np.sum(g.kd * ghat, axis=0) / k2, 0.0)
    return ScalarField.from_coeffs(g, p_hat)


def eta_dissipation(v: VectorField, phi: ScalarField, model: ModelSpec) -> float:
    """int eta(phi)|Dv|^2 alone (the part that must vanish in the Darcy limit)."""
    g = v.grid
    d = g.ndim
    eta_fine = model.eta(g.upsample(phi.values))
    x = v.stack()
    pads = [g.pad_coeffs(g.fft(x[i])) for i in range(d)]
    total = 0.0
    for i in range(d):
        for j in range(i, d):
            dv_ij = 0.5 * (
                g.ifft_fine(1j * g.fine_kd[i] * pads[j])
                + g.ifft_fine(1j * g.fine_kd[j] * pads[i])
            )
            weight = 1.0 if i == j else 2.0
            total += weight * float(np.sum(eta_fine * dv_ij * dv_ij))
    return g.fine_cell_volume * total


def flow_dissipation(v: VectorField, phi: ScalarField, model: ModelSpec,
                     viscous: bool = True) -> float:
    """int eta(phi)|Dv|^2 + lambda(phi)|v|^2 on the padded grid (nonnegative)."""
    g = v.grid
    d = g.ndim
    phi_fine = g.upsample(phi.values)
    lam_fine = model.lam(phi_fine)
    x = v.stack()
    pads = [g.pad_coeffs(g.fft(x[i])) for i in range(d)]
    total = 0.0
    if viscous:
        eta_fine = model.eta(phi_fine)
        for i in range(d):
            for j in range(i, d):
                dv_ij = 0.5 * (
                    g.ifft_fine(1j * g.fine_kd[i] * pads[j])
                    + g.ifft_fine(1j * g.fine_kd[j] * pads[i])
                )
                weight = 1.0 if i == j else 2.0
                total += weight * float(np.sum(eta_fine * dv_ij * dv_ij))
    for i in range(d):
        vi_fine = g.ifft_fine(pads[i])
        total += float(np.sum(lam_fine * vi_fine * vi_fine))
    return g.fine_cell_volume * total
