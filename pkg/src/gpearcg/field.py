"""Periodic box discretization: grid, transforms, inner products, random states.

Fields live on the square box [-a/2, a/2)^2 sampled on a uniform n x n grid
and are stored as spectral (DFT) coefficients.  The scaling convention is
fixed once here and used everywhere:

    coeffs = (a/n) * fft2(samples, norm="ortho")
    samples = ifft2(coeffs, norm="ortho") / (a/n)

With this convention the plain Euclidean norm of the coefficient array equals
the discrete L2 norm of the sampled field, obtained with the cell-area
quadrature weight (a/n)^2.  Norms and inner products therefore need no scale
factors in either representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

__all__ = [
    "Grid",
    "State",
    "TangentField",
    "GridMismatchError",
    "make_grid",
    "to_real",
    "to_spectral",
    "inner_l2",
    "l2_norm",
    "random_state",
    "project_tangent",
    "save_state",
    "load_state",
]


class GridMismatchError(ValueError):
    """Two fields from incompatible grids were combined."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic grid on the square box [-a/2, a/2)^2.

    Attributes
    ----------
    a : float
        Box width.
    n : int
        Points per axis (power of two).
    xs : ndarray, shape (n,)
        Node coordinates, spanning [-a/2, a/2) with spacing a/n.
    ks : ndarray, shape (n,)
        Angular wavenumbers 2*pi*m/a in standard DFT frequency order.
    """

    a: float
    n: int
    xs: np.ndarray
    ks: np.ndarray

    @property
    def spacing(self) -> float:
        return self.a / self.n

    @property
    def cell_area(self) -> float:
        return (self.a / self.n) ** 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.a == other.a and self.n == other.n

    def __hash__(self) -> int:
        return hash((self.a, self.n))

    def __repr__(self) -> str:
        return f"Grid(a={self.a}, n={self.n})"


def make_grid(a: float, n: int, *, allow_small: bool = False) -> Grid:
    """Build the grid for box width ``a`` with ``n`` points per axis.

    ``n`` must be a power of two and at least 16 (divisible by 16, as the
    five-level downsampling of the correction network requires).  Internal
    test builds may pass ``allow_small=True`` to admit n >= 4.
    """
    if a <= 0:
        raise ValueError(f"box width must be positive, got a={a}")
    if n < 4 or (n & (n - 1)) != 0:
        raise ValueError(f"grid size must be a power of two >= 16, got n={n}")
    if n % 16 != 0 and not allow_small:
        raise ValueError(f"grid size must be divisible by 16, got n={n}")
    spacing = a / n
    xs = -a / 2 + spacing * np.arange(n)
    ks = 2 * np.pi * _fft.fftfreq(n, d=spacing)
    return Grid(a=float(a), n=int(n), xs=xs, ks=ks)


@dataclass(frozen=True, eq=False)
class State:
    """Complex field on a grid, stored as spectral coefficients.

    States produced by normalizing constructors (``random_state``,
    ``State.normalized``, retraction) have unit L2 norm; the raw constructor
    does not renormalize, so e.g. network outputs can be carried around
    before their norm is inspected.
    """

    grid: Grid
    coeffs: np.ndarray

    @classmethod
    def normalized(cls, grid: Grid, coeffs: np.ndarray) -> "State":
        nrm = np.linalg.norm(coeffs)
        if nrm < 1e-14:
            raise ValueError("cannot normalize a (near-)zero field")
        return cls(grid=grid, coeffs=coeffs / nrm)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True, eq=False)
class TangentField:
    """Complex field constrained L2-orthogonal (real inner product) to ``base``."""

    grid: Grid
    coeffs: np.ndarray
    base: State

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def _coeffs_of(x) -> np.ndarray:
    if isinstance(x, (State, TangentField)):
        return x.coeffs
    return np.asarray(x)


def _grid_of(x) -> Grid | None:
    if isinstance(x, (State, TangentField)):
        return x.grid
    return None


def _check_same_grid(v, w) -> None:
    gv, gw = _grid_of(v), _grid_of(w)
    if gv is not None and gw is not None and gv != gw:
        raise GridMismatchError(f"grid mismatch: {gv} vs {gw}")
    cv, cw = _coeffs_of(v), _coeffs_of(w)
    if cv.shape != cw.shape:
        raise GridMismatchError(f"shape mismatch: {cv.shape} vs {cw.shape}")


def real_from_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral coefficients -> complex samples on the real-space grid."""
    return _fft.ifft2(coeffs, norm="ortho") / grid.spacing


def coeffs_from_real(samples: np.ndarray, grid: Grid) -> np.ndarray:
    """Complex real-space samples -> spectral coefficients."""
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.shape != grid.shape:
        raise GridMismatchError(
            f"sample array of shape {samples.shape} does not match grid {grid}"
        )
    return _fft.fft2(samples, norm="ortho") * grid.spacing


def to_real(field: State | TangentField) -> np.ndarray:
    """Complex real-space samples of a field."""
    return real_from_coeffs(field.coeffs, field.grid)


def to_spectral(samples: np.ndarray, grid: Grid) -> np.ndarray:
    """Inverse of :func:`to_real` under the fixed scaling convention."""
    return coeffs_from_real(samples, grid)


def inner_l2(v, w) -> float:
    """Real L2 inner product Re <v, w>.

    Evaluated on spectral coefficients, where it equals the cell-area
    weighted sum over real-space samples by unitarity of the transform.
    """
    _check_same_grid(v, w)
    return float(np.vdot(_coeffs_of(v), _coeffs_of(w)).real)


def l2_norm(v) -> float:
    """L2 norm of a field (spectral or wrapped)."""
    return float(np.linalg.norm(_coeffs_of(v)))


def random_state(grid: Grid, seed: int) -> State:
    """Unit-norm state with i.i.d. standard-normal spectral coefficients.

    Every real and imaginary coefficient is drawn N(0, 1) from a generator
    seeded with ``seed``, then the whole field is L2-normalized.
    """
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return State.normalized(grid, coeffs)


def project_tangent(base: State, coeffs: np.ndarray) -> TangentField:
    """Project raw coefficients onto the tangent space at ``base``."""
    coeffs = coeffs - base.coeffs * np.vdot(base.coeffs, coeffs).real
    return TangentField(grid=base.grid, coeffs=coeffs, base=base)


def save_state(state: State, path) -> None:
    """Persist a state (spectral coefficients + box width) as .npz."""
    np.savez(path, coeffs=state.coeffs, a=state.grid.a)


def load_state(path, *, allow_small: bool = False) -> State:
    with np.load(path) as data:
        coeffs = np.asarray(data["coeffs"], dtype=np.complex128)
        a = float(data["a"])
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise ValueError(f"state file holds a {coeffs.shape} array, expected square")
    grid = make_grid(a, coeffs.shape[0], allow_small=allow_small)
    return State(grid=grid, coeffs=coeffs)
