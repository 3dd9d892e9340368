"""Rectangular-domain discretization and divergence-form operator assembly.

Cell-centered finite volumes on an axis-aligned box with zero-flux
boundaries.  The central object is the conservative two-point-flux
discretization of ``u -> div(w grad(a u))``: face coefficients come from
harmonic averaging of ``w`` while ``a`` is differenced exactly through
``g = a*u``, which makes ``u = 1/a`` an exact kernel element, keeps all
off-diagonal entries non-negative, and telescopes fluxes so that column
sums vanish identically.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    CoefficientError,
    CompatibilityError,
    ConfigurationError,
    NumericalError,
)

__all__ = [
    "RectDomain",
    "ScalarField",
    "FaceField",
    "SparseOperator",
    "build_grid",
    "mass",
    "l2_norm",
    "weighted_norm",
    "divergence_form_operator",
    "neumann_laplacian",
    "neumann_poisson_solve",
    "face_difference",
    "face_mean",
    "face_log_difference",
]


@dataclasses.dataclass(frozen=True)
class RectDomain:
    """Axis-aligned box split into a uniform cell-centered grid.

    ``lengths[k]`` is the extent along axis ``k`` and ``cells[k]`` the cell
    count; spacing is derived.  Zero-flux boundaries are structural: no
    face unknowns exist on the boundary.
    """

    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(l / n for l, n in zip(self.lengths, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def center_grids(self) -> list[np.ndarray]:
        """Cell-center coordinate arrays, each shaped like the grid."""
        axes = [self.axis_centers(d) for d in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def face_pairs(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Flat cell indices (left, right) across each interior face of
        the given axis, in the same C order as raveled face arrays."""
        idx = np.arange(self.cell_count).reshape(self.cells)
        lo = [slice(None)] * self.dim
        hi = [slice(None)] * self.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        return idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.cells)
        s[axis] -= 1
        return tuple(s)


def build_grid(dim: int, lengths: Sequence[float], cells: Sequence[int]) -> RectDomain:
    """Validate and construct a rectangular grid (1D or 2D)."""
    if dim not in (1, 2):
        raise ConfigurationError(f"dimension must be 1 or 2, got {dim}")
    if len(lengths) != dim or len(cells) != dim:
        raise ConfigurationError(
            f"expected {dim} lengths and cell counts, got {len(lengths)}/{len(cells)}"
        )
    lengths = tuple(float(l) for l in lengths)
    cells_t = tuple(int(n) for n in cells)
    if any(l <= 0 or not math.isfinite(l) for l in lengths):
        raise ConfigurationError(f"lengths must be positive, got {lengths}")
    if any(n < 2 for n in cells_t):
        raise ConfigurationError(f"need at least 2 cells per axis, got {cells_t}")
    return RectDomain(lengths=lengths, cells=cells_t)


@dataclasses.dataclass(eq=False)
class ScalarField:
    """One real value per cell on a :class:`RectDomain`."""

    domain: RectDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.domain.shape:
            if self.values.size == self.domain.cell_count:
                self.values = self.values.reshape(self.domain.shape)
            else:
                raise ConfigurationError(
                    f"field shape {self.values.shape} does not match grid {self.domain.shape}"
                )
        if not np.all(np.isfinite(self.values)):
            raise CoefficientError("field contains non-finite values")

    @classmethod
    def constant(cls, domain: RectDomain, value: float) -> "ScalarField":
        return cls(domain, np.full(domain.shape, float(value)))

    @classmethod
    def from_function(cls, domain: RectDomain, fn: Callable[..., np.ndarray]) -> "ScalarField":
        return cls(domain, np.asarray(fn(*domain.center_grids()), dtype=float))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def copy(self) -> "ScalarField":
        return ScalarField(self.domain, self.values.copy())

    def normalized(self) -> "ScalarField":
        """Rescale to unit mass."""
        m = mass(self)
        if m <= 0:
            raise CoefficientError("cannot normalize a field with non-positive mass")
        return ScalarField(self.domain, self.values / m)


def mass(field: ScalarField) -> float:
    """Total integral: sum of cell values times cell volume."""
    return float(np.sum(field.values)) * field.domain.cell_volume


def l2_norm(field: ScalarField) -> float:
    return math.sqrt(float(np.sum(field.values**2)) * field.domain.cell_volume)


def weighted_norm(field: ScalarField, weight: ScalarField) -> float:
    """Discrete weighted L2 norm with cellwise weight (used with weight = a)."""
    return math.sqrt(
        float(np.sum(field.values**2 * weight.values)) * field.domain.cell_volume
    )


@dataclasses.dataclass(eq=False)
class FaceField:
    """Velocity-like quantity on interior faces, one array per axis.

    Boundary faces carry no value: the zero-flux condition is structural.
    Component ``d`` has the grid shape with one fewer entry along axis
    ``d`` (the shape of ``np.diff`` along that axis).
    """

    domain: RectDomain
    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        comps = []
        for d, c in enumerate(self.components):
            c = np.asarray(c, dtype=float)
            if c.shape != self.domain.face_shape(d):
                raise ConfigurationError(
                    f"axis-{d} face array has shape {c.shape}, expected {self.domain.face_shape(d)}"
                )
            if not np.all(np.isfinite(c)):
                raise CoefficientError("face field contains non-finite values")
            comps.append(c)
        self.components = tuple(comps)

    @classmethod
    def zero(cls, domain: RectDomain) -> "FaceField":
        return cls(domain, tuple(np.zeros(domain.face_shape(d)) for d in range(domain.dim)))

    def max_abs(self) -> float:
        vals = [float(np.max(np.abs(c))) if c.size else 0.0 for c in self.components]
        return max(vals) if vals else 0.0


def face_difference(field: ScalarField, axis: int) -> np.ndarray:
    """(u_R - u_L) / h across interior faces of one axis."""
    return np.diff(field.values, axis=axis) / field.domain.spacing[axis]


def face_mean(field: ScalarField, axis: int) -> np.ndarray:
    v = field.values
    lo = [slice(None)] * field.domain.dim
    hi = [slice(None)] * field.domain.dim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (v[tuple(lo)] + v[tuple(hi)])


def face_log_difference(field: ScalarField, axis: int) -> np.ndarray:
    """(log u_R - log u_L) / h; requires a strictly positive field.

    This is the face evaluation of grad(u)/u that makes Gibbs-type
    profiles exact equilibria of the exponential-fitted flux.
    """
    if np.min(field.values) <= 0:
        raise CoefficientError("log-difference requires a strictly positive field")
    return np.diff(np.log(field.values), axis=axis) / field.domain.spacing[axis]


@dataclasses.dataclass(eq=False)
class SparseOperator:
    """Assembled divergence-form operator with its coefficient fields.

    ``matrix`` maps flat cell vectors to flat cell vectors and represents
    ``u -> div(w grad(a u))`` with zero-flux faces.  Treat instances as
    immutable after assembly; they are safe to share across threads.
    """

    domain: RectDomain
    matrix: sp.csr_matrix
    a_values: np.ndarray
    w_values: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, field: ScalarField) -> ScalarField:
        return ScalarField(self.domain, self.matrix @ field.flat)

    def symmetrized(self) -> np.ndarray:
        """Dense symmetric similarity transform diag(sqrt(a)) L diag(1/sqrt(a)).

        The assembled operator is self-adjoint in the a-weighted inner
        product; this conjugation exposes that symmetry for
        eigendecomposition.
        """
        sa = np.sqrt(self.a_values.reshape(-1))
        dense = self.matrix.toarray()
        s = (dense * (1.0 / sa)[None, :]) * sa[:, None]
        return 0.5 * (s + s.T)

    def spectral_gap(self) -> float:
        """Smallest nonzero eigenvalue of -L (the decay rate of the flow)."""
        n = self.n
        if n <= 4096:
            vals = np.linalg.eigvalsh(-self.symmetrized())
            return float(vals[1])
        # shift-invert Lanczos for larger grids; the shift sits just below
        # zero so the factorization never touches the singular point
        s = sp.csr_matrix(-self.symmetrized())
        sigma = -1e-6 * float(np.max(np.abs(s.diagonal())))
        vals = spla.eigsh(s, k=2, sigma=sigma, which="LM", return_eigenvectors=False)
        return float(np.sort(vals)[1])


def divergence_form_operator(a: ScalarField, w: ScalarField | None = None) -> SparseOperator:
    """Assemble the conservative discretization of div(w grad(a u)).

    With ``w = 1`` this is the weighted-heat generator; with ``w = 1/a``
    it is the generator of the flow that relaxes toward ``f = 1/a``.

    Preconditions: both coefficients strictly positive cellwise.
    """
    domain = a.domain
    if w is None:
        w = ScalarField.constant(domain, 1.0)
    if w.domain != domain:
        raise ConfigurationError("coefficient fields live on different grids")
    if np.min(a.values) <= 0:
        raise CoefficientError(f"coefficient a must be positive, min = {np.min(a.values)}")
    if np.min(w.values) <= 0:
        raise CoefficientError(f"coefficient w must be positive, min = {np.min(w.values)}")

    n = domain.cell_count
    a_flat = a.flat
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for axis in range(domain.dim):
        h = domain.spacing[axis]
        left, right = domain.face_pairs(axis)
        wl = w.flat[left]
        wr = w.flat[right]
        wf = 2.0 * wl * wr / (wl + wr)  # harmonic face conductance
        coef = wf / (h * h)
        # flux = wf * (a_R u_R - a_L u_L)/h leaving the left cell
        rows += [left, right]
        cols += [right, left]
        data += [coef * a_flat[right], coef * a_flat[left]]
    off_diag = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    # diagonal balances the off-diagonal column sums exactly, so the
    # conservation identity 1^T L = 0 holds in floating point
    diagonal = -np.asarray(off_diag.sum(axis=0)).ravel()
    matrix = (off_diag + sp.diags(diagonal)).tocsr()
    return SparseOperator(domain, matrix, a.values.copy(), w.values.copy())


def neumann_laplacian(domain: RectDomain) -> SparseOperator:
    ones = ScalarField.constant(domain, 1.0)
    return divergence_form_operator(ones, ones)


@functools.lru_cache(maxsize=16)
def _poisson_factorization(domain: RectDomain):
    """LU of the bordered system [[-L, m], [m^T, 0]] enforcing zero mean.

    The border vector is the mass functional, which spans the kernel of
    the zero-flux Laplacian; the bordered matrix is nonsingular and its
    solution is the unique zero-mean solution.
    """
    lap = neumann_laplacian(domain).matrix
    n = domain.cell_count
    m = np.full((n, 1), domain.cell_volume)
    bordered = sp.bmat(
        [[-lap, sp.csr_matrix(m)], [sp.csr_matrix(m.T), None]], format="csc"
    )
    return spla.splu(bordered)


def neumann_poisson_solve(rhs: ScalarField) -> ScalarField:
    """Solve -lap(phi) = rhs with zero-flux boundary, zero-mean phi.

    The right-hand side must have zero mass (the discrete solvability
    condition); tolerance 1e-10.
    """
    m = mass(rhs)
    if abs(m) > 1e-10:
        raise CompatibilityError(
            f"zero-flux Poisson problem needs a zero-mass right-hand side, got mass {m:.3e}"
        )
    domain = rhs.domain
    lu = _poisson_factorization(domain)
    b = np.concatenate([rhs.flat, [0.0]])
    sol = lu.solve(b)
    phi = sol[:-1]
    if not np.all(np.isfinite(phi)):
        raise NumericalError("Poisson solve produced non-finite values")
    residual = (-neumann_laplacian(domain).matrix) @ phi - rhs.flat
    scale = max(1.0, float(np.max(np.abs(rhs.values))))
    if float(np.max(np.abs(residual))) > 1e-9 * scale:
        raise NumericalError(
            f"Poisson residual {np.max(np.abs(residual)):.3e} above tolerance"
        )
    return ScalarField(domain, phi)
