"""Periodic-box spectral discretization: grids, transforms, operators.

Normalization
-------------
A real field ``f`` on the grid is represented either by its point values or by
Fourier coefficients ``c_k`` defined through

    c = fftn(values) / prod(N_i),      f(x) = sum_k c_k exp(i k.x),

so coefficients are grid-size independent.  With this choice the discrete
Parseval identity reads

    ||f||^2 = cellvol * sum_x |f(x)|^2 = volume * sum_k |c_k|^2,

i.e. the L2 norm computed by grid quadrature equals the weighted coefficient
sum exactly.  All inner products and norms in this module use the grid
quadrature ``cellvol * sum``.

Two conventions hold everywhere:

* Nyquist modes (k_i = -N_i/2) are zeroed by every derivative operator and by
  the padding/restriction pipeline; their derivative sign is ambiguous on an
  even grid.
* Pointwise products of fields are evaluated on a zero-padded fine grid
  (3/2-rule, i.e. the classical 2/3 dealiasing) via :meth:`Grid.upsample` /
  :meth:`Grid.downsample`.  Up- and downsampling are exact adjoints of each
  other, which makes the chain rule for discrete energies hold to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _axis_wavenumbers(n: int, length: float) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on a d-dimensional box (d = 2 or 3).

    Parameters
    ----------
    sizes : tuple of int
        Points per axis; each must be even and >= 8 (the 2/3 rule needs
        headroom below that).
    lengths : tuple of float
        Box edge lengths, all positive.
    """

    sizes: tuple
    lengths: tuple
    pad_factor: float = field(default=1.5, compare=False)

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        lengths = tuple(float(l) for l in self.lengths)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "lengths", lengths)
        if len(sizes) not in (2, 3):
            raise ValueError("grid dimension must be 2 or 3")
        if len(lengths) != len(sizes):
            raise ValueError("lengths and sizes must have the same dimension")
        if any(n < 8 or n % 2 for n in sizes):
            raise ValueError("grid sizes must be even and >= 8")
        if any(l <= 0 for l in lengths):
            raise ValueError("box lengths must be positive")

        d = len(sizes)
        shape = sizes
        ntot = int(np.prod(sizes))
        volume = float(np.prod(lengths))
        object.__setattr__(self, "ndim", d)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "ntot", ntot)
        object.__setattr__(self, "volume", volume)
        object.__setattr__(self, "cell_volume", volume / ntot)

        axes = [lengths[i] * np.arange(sizes[i]) / sizes[i] for i in range(d)]
        object.__setattr__(self, "axes", axes)

        k1 = [_axis_wavenumbers(sizes[i], lengths[i]) for i in range(d)]
        kfull = np.stack(np.meshgrid(*k1, indexing="ij"))
        # derivative wavenumbers: Nyquist column zeroed per axis
        kd1 = []
        for i in range(d):
            k = k1[i].copy()
            k[sizes[i] // 2] = 0.0
            kd1.append(k)
        kd = np.stack(np.meshgrid(*kd1, indexing="ij"))
        object.__setattr__(self, "k", kfull)
        object.__setattr__(self, "kd", kd)
        object.__setattr__(self, "k2", np.sum(kd * kd, axis=0))
        object.__setattr__(self, "k_mag", np.sqrt(np.sum(kfull * kfull, axis=0)))

        # fine (padded) grid for dealiased products
        fine_sizes = tuple(_even_ceil(self.pad_factor * n) for n in sizes)
        fine_ntot = int(np.prod(fine_sizes))
        object.__setattr__(self, "fine_sizes", fine_sizes)
        object.__setattr__(self, "fine_ntot", fine_ntot)
        object.__setattr__(self, "fine_cell_volume", volume / fine_ntot)
        # per-axis index lists mapping non-Nyquist coarse modes into the fine layout
        coarse_ix, fine_ix = [], []
        for i in range(d):
            n, m = sizes[i], fine_sizes[i]
            head = list(range(0, n // 2))
            tail = list(range(n // 2 + 1, n))
            coarse_ix.append(np.array(head + tail))
            fine_ix.append(np.array(head + [m - n + t for t in tail]))
        object.__setattr__(self, "_coarse_ix", tuple(coarse_ix))
        object.__setattr__(self, "_fine_ix", tuple(fine_ix))

        fkd1 = []
        for i in range(d):
            k = _axis_wavenumbers(fine_sizes[i], lengths[i])
            k[fine_sizes[i] // 2] = 0.0
            fkd1.append(k)
        object.__setattr__(self, "fine_kd", np.stack(np.meshgrid(*fkd1, indexing="ij")))

        # True where no axis sits on its Nyquist frequency; the working space
        # for evolution and velocity solves (pad/crop drop Nyquist anyway)
        nyq = np.ones(shape, dtype=bool)
        for i in range(d):
            index = [slice(None)] * d
            index[i] = sizes[i] // 2
            nyq[tuple(index)] = False
        object.__setattr__(self, "nyquist_mask", nyq)

    # -- transforms -------------------------------------------------------

    def fft(self, values: np.ndarray) -> np.ndarray:
        """Forward transform to normalized Fourier coefficients."""
        return np.fft.fftn(values) / self.ntot

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        """Inverse transform; returns the real part."""
        return np.real(np.fft.ifftn(coeffs)) * self.ntot

    def pad_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Embed coarse coefficients into the fine layout (Nyquist dropped)."""
        fine = np.zeros(self.fine_sizes, dtype=complex)
        fine[np.ix_(*self._fine_ix)] = coeffs[np.ix_(*self._coarse_ix)]
        return fine

    def crop_coeffs(self, fine_coeffs: np.ndarray) -> np.ndarray:
        """Restrict fine coefficients to the coarse band (Nyquist zeroed)."""
        coarse = np.zeros(self.shape, dtype=complex)
        coarse[np.ix_(*self._coarse_ix)] = fine_coeffs[np.ix_(*self._fine_ix)]
        return coarse

    def fft_fine(self, fine_values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(fine_values) / self.fine_ntot

    def ifft_fine(self, fine_coeffs: np.ndarray) -> np.ndarray:
        return np.real(np.fft.ifftn(fine_coeffs)) * self.fine_ntot

    def upsample(self, values: np.ndarray) -> np.ndarray:
        """Spectral interpolation of grid values onto the fine grid."""
        return self.ifft_fine(self.pad_coeffs(self.fft(values)))

    def downsample(self, fine_values: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`upsample`: band-restrict fine values to the grid."""
        return self.ifft(self.crop_coeffs(self.fft_fine(fine_values)))

    def mode_mask(self, cutoff: float) -> np.ndarray:
        return self.k_mag <= cutoff

    def nyquist_band_limit(self) -> float:
        """Largest wavenumber magnitude usable after 2/3 dealiasing."""
        return min(
            (2.0 / 3.0) * np.pi * n / l for n, l in zip(self.sizes, self.lengths)
        )

    def meshes(self):
        return np.meshgrid(*self.axes, indexing="ij")


def _even_ceil(x: float) -> int:
    m = int(np.ceil(x))
    return m + (m % 2)


class ScalarField:
    """Real scalar field with lazily cached Fourier coefficients."""

    __slots__ = ("grid", "values", "_coeffs")

    def __init__(self, grid: Grid, values: np.ndarray, coeffs: np.ndarray | None = None):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.values = values
        self._coeffs = coeffs

    @classmethod
    def from_coeffs(cls, grid: Grid, coeffs: np.ndarray) -> "ScalarField":
        return cls(grid, grid.ifft(coeffs), coeffs=np.asarray(coeffs, dtype=complex))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def spectrum(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = self.grid.fft(self.values)
        return self._coeffs

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other))

    def __mul__(self, scalar):
        return ScalarField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


class VectorField:
    """d-component field; ``divergence_free`` marks Leray-projected fields."""

    __slots__ = ("grid", "components", "divergence_free")

    def __init__(self, components, divergence_free: bool = False):
        components = tuple(components)
        if not components:
            raise ValueError("vector field needs at least one component")
        grid = components[0].grid
        if len(components) != grid.ndim:
            raise ValueError("component count must match grid dimension")
        self.grid = grid
        self.components = components
        self.divergence_free = divergence_free

    @classmethod
    def from_arrays(cls, grid: Grid, arrays, divergence_free: bool = False) -> "VectorField":
        return cls([ScalarField(grid, a) for a in arrays], divergence_free)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls([ScalarField.zeros(grid) for _ in range(grid.ndim)], divergence_free=True)

    def stack(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    def copy(self) -> "VectorField":
        return VectorField([c.copy() for c in self.components], self.divergence_free)

    def __add__(self, other):
        return VectorField(
            [a + b for a, b in zip(self.components, other.components)],
            self.divergence_free and other.divergence_free,
        )

    def __sub__(self, other):
        return VectorField(
            [a - b for a, b in zip(self.components, other.components)],
            self.divergence_free and other.divergence_free,
        )

    def __mul__(self, scalar):
        return VectorField([c * scalar for c in self.components], self.divergence_free)

    __rmul__ = __mul__


# -- transforms as free operations ---------------------------------------


def forward_transform(f: ScalarField) -> np.ndarray:
    return f.spectrum


def inverse_transform(grid: Grid, coeffs: np.ndarray) -> ScalarField:
    if coeffs.shape != grid.shape:
        raise ValueError(f"spectrum shape {coeffs.shape} does not match grid {grid.shape}")
    return ScalarField.from_coeffs(grid, coeffs)


# -- differential operators (diagonal in mode space) ----------------------


def laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField.from_coeffs(g, -g.k2 * f.spectrum)

def biharmonic(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField.from_coeffs(g, g.k2 * g.k2 * f.spectrum)


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    c = f.spectrum
    comps = [ScalarField.from_coeffs(g, 1j * g.kd[i] * c) for i in range(g.ndim)]
    return VectorField(comps)


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    out = np.zeros(g.shape, dtype=complex)
    for i, c in enumerate(v.components):
        out += 1j * g.kd[i] * c.spectrum
    return ScalarField.from_coeffs(g, out)


def leray_project(v: VectorField) -> VectorField:
    """Remove the gradient part mode by mode; the k = 0 mode passes through."""
    g = v.grid
    hats = np.stack([c.spectrum for c in v.components])
    k2 = g.k2
    with np.errstate(invalid="ignore", divide="ignore"):
        kdotv = np.sum(g.kd * hats, axis=0)
        scale = np.where(k2 > 0, kdotv / np.where(k2 > 0, k2, 1.0), 0.0)
    hats = hats - g.kd * scale
    comps = [ScalarField.from_coeffs(g, hats[i]) for i in range(g.ndim)]
    return VectorField(comps, divergence_free=True)


def truncate_modes(f: ScalarField, cutoff: float) -> ScalarField:
    """Galerkin projection: zero all modes with wavenumber magnitude > cutoff."""
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    g = f.grid
    return ScalarField.from_coeffs(g, np.where(g.mode_mask(cutoff), f.spectrum, 0.0))


def truncate_vector(v: VectorField, cutoff: float) -> VectorField:
    return VectorField(
        [truncate_modes(c, cutoff) for c in v.components], v.divergence_free
    )


def symmetrized_gradient(v: VectorField) -> np.ndarray:
    """Symmetric part of the velocity gradient, shape (d, d, *grid.shape)."""
    g = v.grid
    d = g.ndim
    dv = np.empty((d, d) + g.shape)
    for j, c in enumerate(v.components):
        cj = c.spectrum
        for i in range(d):
            dv[i, j] = g.ifft(1j * g.kd[i] * cj)
    return 0.5 * (dv + np.swapaxes(dv, 0, 1))


def full_gradient(v: VectorField) -> np.ndarray:
    """(grad v)_{ij} = d_i v_j, shape (d, d, *grid.shape)."""
    g = v.grid
    d = g.ndim
    dv = np.empty((d, d) + g.shape)
    for j, c in enumerate(v.components):
        cj = c.spectrum
        for i in range(d):
            dv[i, j] = g.ifft(1j * g.kd[i] * cj)
    return dv


# -- inner products and norms ---------------------------------------------


def inner(f: ScalarField, g: ScalarField) -> float:
    return f.grid.cell_volume * float(np.vdot(f.values, g.values).real)


def inner_vector(u: VectorField, w: VectorField) -> float:
    return u.grid.cell_volume * float(
        sum(np.vdot(a.values, b.values).real for a, b in zip(u.components, w.components))
    )


def l2_norm(f) -> float:
    if isinstance(f, VectorField):
        return float(np.sqrt(max(inner_vector(f, f), 0.0)))
    return float(np.sqrt(max(inner(f, f), 0.0)))


def grad_norm_sq(f: ScalarField) -> float:
    """||grad f||^2 by Parseval (exact for the spectral gradient)."""
    g = f.grid
    c = f.spectrum
    return g.volume * float(np.sum(g.k2 * np.abs(c) ** 2))


def grad_inner(f: ScalarField, h: ScalarField) -> float:
    """<grad f, grad h> by Parseval."""
    g = f.grid
    return g.volume * float(np.sum(g.k2 * (f.spectrum * np.conj(h.spectrum)).real))


def h1_norm(f: ScalarField) -> float:
    return float(np.sqrt(max(inner(f, f) + grad_norm_sq(f), 0.0)))


def mean_value(f: ScalarField) -> float:
    return float(np.mean(f.values))


def vector_grad_norm_sq(v: VectorField) -> float:
    return float(sum(grad_norm_sq(c) for c in v.components))


def divergence_inf_norm(v: VectorField) -> float:
    return float(np.max(np.abs(divergence(v).values)))


def assert_divergence_free(v: VectorField, rel: float = 1e-10) -> None:
    """Check the divergence-free invariant at a scale-relative tolerance."""
    sup = float(np.max(np.abs(v.stack())))
    scale = sup / min(v.grid.lengths)
    if divergence_inf_norm(v) > rel * max(scale, 1e-300):
        raise AssertionError("vector field marked divergence-free has nonzero divergence")
