"""Sampled maps on rectangular grids, their Jacobians, energies, residuals.

A map u: R^m -> R^{4n} is carried as node values of shape res + (4n,).
Jacobian fields have shape res + (4n, m) with du[..., s, i] = d u^s / d x^i.
Domain dimension m = 4 is required by the quaternionic residuals; forms and
grids also support m = 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import _stencils
from .algebra import StructureTriple, block_structure, standard_triple
from .errors import GridError, QuadratureDomainError, ValidationError

MIN_RES = 8

# Coefficient tensor of the first-order quaternionic system: one 4x4 block
# of equations, residual_s = sum_{t,i} COEFFS[s, t, i] * du[4b + t, i].
_COEFFS = np.zeros((4, 4, 4))
_COEFFS[0, 0, 0] = 1; _COEFFS[0, 1, 1] = 1; _COEFFS[0, 2, 2] = 1; _COEFFS[0, 3, 3] = 1
_COEFFS[1, 1, 0] = 1; _COEFFS[1, 0, 1] = -1; _COEFFS[1, 3, 2] = 1; _COEFFS[1, 2, 3] = -1
_COEFFS[2, 2, 0] = 1; _COEFFS[2, 0, 2] = -1; _COEFFS[2, 3, 1] = -1; _COEFFS[2, 1, 3] = 1
_COEFFS[3, 3, 0] = 1; _COEFFS[3, 0, 3] = -1; _COEFFS[3, 1, 2] = -1; _COEFFS[3, 2, 1] = 1


def residual_coefficients() -> np.ndarray:
    """The 4x4x4 coefficient tensor of the coordinate-level system."""
    return _COEFFS.copy()


@dataclass(frozen=True)
class GridSpec:
    """Rectangular tensor grid on a box in R^m."""

    m: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    res: tuple[int, ...]

    def __post_init__(self):
        if self.m not in (3, 4):
            raise GridError(f"domain dimension must be 3 or 4, got {self.m}")
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        res = tuple(int(v) for v in np.atleast_1d(self.res))
        if len(lo) == 1:
            lo = lo * self.m
        if len(hi) == 1:
            hi = hi * self.m
        if len(res) == 1:
            res = res * self.m
        if not (len(lo) == len(hi) == len(res) == self.m):
            raise GridError("lo, hi, res must each have length m (or be scalars)")
        for a, b in zip(lo, hi):
            if not a < b:
                raise GridError(f"need lo < hi per axis, got [{a}, {b}]")
        for r in res:
            if r < MIN_RES:
                raise GridError(f"need at least {MIN_RES} samples per axis, got {r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "res", res)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / (r - 1) for a, b, r in zip(self.lo, self.hi, self.res))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, r) for a, b, r in zip(self.lo, self.hi, self.res)]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape res + (m,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def shifted(self, offsets) -> "GridSpec":
        """Same spacing and node count, box translated by per-axis offsets."""
        offs = np.broadcast_to(np.asarray(offsets, dtype=float), (self.m,))
        lo = tuple(a + o for a, o in zip(self.lo, offs))
        hi = tuple(b + o for b, o in zip(self.hi, offs))
        return GridSpec(self.m, lo, hi, self.res)

    def volume_element(self) -> float:
        return float(np.prod(self.h))

    def as_dict(self) -> dict:
        return {"m": self.m, "lo": list(self.lo), "hi": list(self.hi), "res": list(self.res)}

    @staticmethod
    def from_dict(d: dict) -> "GridSpec":
        return GridSpec(int(d["m"]), tuple(d["lo"]), tuple(d["hi"]), tuple(d["res"]))


@dataclass(frozen=True)
class MapField:
    """Sampled map into R^{4n}, optionally backed by analytic evaluators.

    evaluator(points) takes (..., m) coordinates and returns (..., 4n)
    values; jacobian_evaluator(points) returns (..., 4n, m).
    """

    grid: GridSpec
    n: int
    values: np.ndarray
    evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    jacobian_evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"target block count must be >= 1, got {self.n}")
        vals = np.asarray(self.values, dtype=float)
        expected = self.grid.res + (4 * self.n,)
        if vals.shape != expected:
            raise ValidationError(f"values shape {vals.shape} != grid shape {expected}")
        if not np.isfinite(vals).all():
            raise ValidationError("map values contain non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def target_dim(self) -> int:
        return 4 * self.n

    @staticmethod
    def from_function(grid: GridSpec, n: int, func, jacobian=None) -> "MapField":
        pts = grid.nodes()
        vals = np.asarray(func(pts), dtype=float)
        return MapField(grid, n, vals, evaluator=func, jacobian_evaluator=jacobian)


@dataclass(frozen=True)
class JacobianField:
    """Per-node derivative matrices du[..., s, i] = d u^s / d x^i."""

    grid: GridSpec
    n: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = self.grid.res + (4 * self.n, self.grid.m)
        if vals.shape != expected:
            raise ValidationError(f"jacobian shape {vals.shape} != expected {expected}")
        if not np.isfinite(vals).all():
            raise ValidationError("jacobian contains non-finite entries")
        object.__setattr__(self, "values", vals)


def jacobian(u: MapField, order: int = 2) -> JacobianField:
    """Differentiate a sampled map.

    Central stencils of the requested order in the interior, one-sided at
    the boundary layer.  An attached analytic Jacobian short-circuits the
    stencils entirely.
    """
    if order not in (2, 4):
        raise GridError(f"stencil order must be 2 or 4, got {order}")
    if u.jacobian_evaluator is not None:
        du = np.asarray(u.jacobian_evaluator(u.grid.nodes()), dtype=float)
        return JacobianField(u.grid, u.n, du)
    for r in u.grid.res:
        if r < order + 1:
            raise GridError(f"grid too coarse for order-{order} stencils (res {r})")
    h = u.grid.h
    cols = [
        _stencils.apply_derivative(u.values, axis, h[axis], order)
        for axis in range(u.grid.m)
    ]
    du = np.stack(cols, axis=-1)
    return JacobianField(u.grid, u.n, du)


def energy_density(du: JacobianField) -> np.ndarray:
    """Pointwise squared gradient norm, sum over all components and axes."""
    return np.einsum("...si,...si->...", du.values, du.values)


def quaternionic_residual(du: JacobianField, n: int | None = None) -> np.ndarray:
    """Left-hand sides of the coordinate-level first-order system, per block.

    Returns an array of shape res + (4n,); a vanishing residual is the
    coordinate form of the quaternionic condition.
    """
    if du.grid.m != 4:
        raise GridError("quaternionic residual requires domain dimension 4")
    n = du.n if n is None else n
    if n != du.n:
        raise ValidationError(f"block count {n} does not match jacobian ({du.n})")
    blocks = du.values.reshape(du.grid.res + (n, 4, 4))
    res = np.einsum("sti,...bti->...bs", _COEFFS, blocks)
    return res.reshape(du.grid.res + (4 * n,))


def triholomorphic_sum_residual(du: JacobianField, t: StructureTriple | None = None,
                                n: int | None = None) -> np.ndarray:
    """Summed intertwining residual sum_a B_a . du . J_a - du.

    B_a are the 4n x 4n block extensions of the triple; the same triple
    supplies the domain-side 4x4 matrices.  Shape res + (4n, 4).
    """
    if du.grid.m != 4:
        raise GridError("summed residual requires domain dimension 4")
    n = du.n if n is None else n
    if n != du.n:
        raise ValidationError(f"block count {n} does not match jacobian ({du.n})")
    t = standard_triple() if t is None else t
    blocks = block_structure(t, n).matrices
    vals = du.values
    out = -vals.copy()
    for big, small in zip(blocks, t.matrices):
        out = out + np.einsum("st,...ti,ij->...sj", big.astype(float), vals, small.astype(float))
    return out


def density_ratio(e: np.ndarray, grid: GridSpec, x, r: float) -> float:
    """Scaled ball energy r^(2-m) * integral of e over B_r(x).

    Grid quadrature with a node-in-ball indicator; nodes within h/2 of the
    sphere get half weight.  The ball must lie inside the grid box.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.m,):
        raise ValidationError(f"point must have {grid.m} coordinates")
    if r <= 0:
        raise ValidationError("radius must be positive")
    for a, b, c in zip(grid.lo, grid.hi, x):
        if c - r < a - 1e-12 or c + r > b + 1e-12:
            raise QuadratureDomainError(f"ball of radius {r} at {x.tolist()} exits the box")
    if np.asarray(e).shape != grid.res:
        raise ValidationError("energy field shape does not match grid")

    h = grid.h
    band = 0.5 * max(h)
    # restrict to the bounding box of the ball before forming distances
    slices = []
    for axis in range(grid.m):
        lo_i = int(np.floor((x[axis] - r - band - grid.lo[axis]) / h[axis]))
        hi_i = int(np.ceil((x[axis] + r + band - grid.lo[axis]) / h[axis])) + 1
        slices.append(slice(max(lo_i, 0), min(hi_i, grid.res[axis])))
    sub = e[tuple(slices)]
    axes = grid.axes()
    local = [axes[a][slices[a]] - x[a] for a in range(grid.m)]
    d2 = np.zeros(sub.shape)
    for a in range(grid.m):
        shape = [1] * grid.m
        shape[a] = -1
        d2 = d2 + (local[a] ** 2).reshape(shape)
    dist = np.sqrt(d2)
    w = np.where(dist <= r - band, 1.0, np.where(dist < r + band, 0.5, 0.0))
    integral = float(np.sum(sub * w)) * grid.volume_element()
    return r ** (2 - grid.m) * integral


def reduced_family_jacobian(params: np.ndarray, grid: GridSpec | None = None) -> np.ndarray:
    """Constant Jacobian of the two-variable solution family, blockwise.

    params has shape (n, 4): per block, column 2 of du is (a, b, c, d) and
    column 1 is (-b, a, d, -c); columns 3 and 4 vanish.  Returns a single
    (4n, 4) matrix.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    n = params.shape[0]
    if params.shape != (n, 4):
        raise ValidationError("family parameters must have shape (n, 4)")
    du = np.zeros((4 * n, 4))
    a, b, c, d = params.T
    du[0::4, 0] = -b
    du[1::4, 0] = a
    du[2::4, 0] = d
    du[3::4, 0] = -c
    du[0::4, 1] = a
    du[1::4, 1] = b
    du[2::4, 1] = c
    du[3::4, 1] = d
    return du


def constant_jacobian_field(grid: GridSpec, du: np.ndarray) -> JacobianField:
    """Broadcast one derivative matrix to every node of a grid."""
    du = np.asarray(du, dtype=float)
    if du.ndim != 2 or du.shape[0] % 4 != 0 or du.shape[1] != grid.m:
        raise ValidationError(f"need a (4n, m) matrix, got {du.shape}")
    n = du.shape[0] // 4
    vals = np.broadcast_to(du, grid.res + du.shape).copy()
    return JacobianField(grid, n, vals)


def equivalence_study(tol: float = 1e-10) -> dict:
    """Compare the kernels of the coordinate system and the summed residual.

    Both are linear operators on single-block derivative matrices; the
    study reports their nullities, worst cross-residuals, and the subspace
    alignment, so agreement (or failure) is recorded rather than assumed.
    """
    coord_matrix = _COEFFS.reshape(4, 16)
    coord_kernel = scipy.linalg.null_space(coord_matrix)

    t = standard_triple()
    summed = np.zeros((16, 16))
    for idx in range(16):
        unit = np.zeros(16)
        unit[idx] = 1.0
        m = unit.reshape(4, 4)
        image = sum(J.astype(float) @ m @ J.astype(float) for J in t.matrices) - m
        summed[:, idx] = image.reshape(16)
    summed_kernel = scipy.linalg.null_space(summed)

    max_sum_on_coord = float(np.abs(summed @ coord_kernel).max())
    max_coord_on_sum = float(np.abs(coord_matrix @ summed_kernel).max())
    overlap = np.linalg.svd(coord_kernel.T @ summed_kernel, compute_uv=False)
    alignment = float(overlap.min()) if overlap.size else 1.0
    equivalent = (
        coord_kernel.shape[1] == summed_kernel.shape[1]
        and max_sum_on_coord <= tol
        and max_coord_on_sum <= tol
        and 1.0 - alignment <= tol
    )
    return {
        "coordinate_system_nullity": int(coord_kernel.shape[1]),
        "summed_residual_nullity": int(summed_kernel.shape[1]),
        "max_summed_residual_on_coordinate_kernel": max_sum_on_coord,
        "max_coordinate_residual_on_summed_kernel": max_coord_on_sum,
        "kernel_alignment": alignment,
        "equivalent": bool(equivalent),
    }


def swap_map(grid: GridSpec, n: int = 1) -> MapField:
    """Affine solution exchanging the first two coordinates, zero elsewhere."""

    def func(pts):
        vals = np.zeros(pts.shape[:-1] + (4 * n,))
        vals[..., 0] = pts[..., 1]
        vals[..., 1] = pts[..., 0]
        return vals

    def jac(pts):
        du = np.zeros(pts.shape[:-1] + (4 * n, grid.m))
        du[..., 0, 1] = 1.0
        du[..., 1, 0] = 1.0
        return du

    return MapField.from_function(grid, n, func, jacobian=jac)


def identity_map(grid: GridSpec) -> MapField:
    """The identity on R^4 (requires m = 4, n = 1)."""
    if grid.m != 4:
        raise GridError("identity map needs a 4-dimensional domain")

    def func(pts):
        return pts.copy()

    def jac(pts):
        return np.broadcast_to(np.eye(4), pts.shape[:-1] + (4, 4)).copy()

    return MapField.from_function(grid, 1, func, jacobian=jac)
