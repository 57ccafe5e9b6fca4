"""Unit-sphere quadrature, sphere maps, and the radial-extension identity.

Quadrature crosses Gauss-Legendre nodes in cos(theta) with a uniform
azimuthal rule, so spherical polynomials are integrated exactly up to a
degree growing with the level.  Tangent frames are the oriented
(theta-hat, phi-hat) pair; the intrinsic rotation acts as e1 -> e2,
e2 -> -e1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _stencils
from .algebra import StructureTriple, block_structure, standard_triple
from .errors import GridError, QuadratureDomainError, ValidationError
from .fields import GridSpec, MapField
from .forms import KForm, TargetTwoForm, TestForm


@dataclass(frozen=True)
class SphereGrid:
    """Quadrature nodes on S^2 with weights and oriented tangent frames."""

    nodes: np.ndarray    # (N, 3) unit vectors
    weights: np.ndarray  # (N,) positive, summing to 4 pi
    e1: np.ndarray       # (N, 3) theta-hat
    e2: np.ndarray       # (N, 3) phi-hat

    def __post_init__(self):
        norms = np.linalg.norm(self.nodes, axis=1)
        if np.abs(norms - 1.0).max() > 1e-14:
            raise ValidationError("sphere nodes must be unit vectors")
        if abs(self.weights.sum() - 4.0 * np.pi) > 1e-10:
            raise ValidationError("sphere weights must sum to 4 pi")

    def __len__(self) -> int:
        return self.nodes.shape[0]


def tangent_frame(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Oriented orthonormal frame (theta-hat, phi-hat) away from the poles."""
    pts = np.asarray(points, dtype=float)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    rho = np.hypot(x, y)
    if np.any(rho < 1e-13):
        raise ValidationError("tangent frame is singular on the polar axis")
    cph, sph = x / rho, y / rho
    e1 = np.stack([z * cph, z * sph, -rho], axis=-1)
    e2 = np.stack([-sph, cph, np.zeros_like(sph)], axis=-1)
    return e1, e2


def sphere_quadrature(level: int) -> SphereGrid:
    """Product quadrature: 2*level Gauss-Legendre x 4*level uniform azimuth."""
    if level < 1:
        raise ValidationError(f"quadrature level must be >= 1, got {level}")
    n_t = 2 * level
    n_p = 4 * level
    mu, w_mu = np.polynomial.legendre.leggauss(n_t)
    phi = (np.arange(n_p) + 0.5) * (2.0 * np.pi / n_p)
    w_phi = 2.0 * np.pi / n_p
    st = np.sqrt(1.0 - mu ** 2)
    nodes = np.empty((n_t * n_p, 3))
    weights = np.empty(n_t * n_p)
    k = 0
    for i in range(n_t):
        for j in range(n_p):
            nodes[k] = (st[i] * np.cos(phi[j]), st[i] * np.sin(phi[j]), mu[i])
            weights[k] = w_mu[i] * w_phi
            k += 1
    e1, e2 = tangent_frame(nodes)
    return SphereGrid(nodes=nodes, weights=weights, e1=e1, e2=e2)


class SphereMap:
    """Map from S^2 into R^d with value and tangential-derivative access.

    ambient_jacobian, when given, returns (..., d, 3) matrices D with
    dphi(e) = D e for tangent e; otherwise directional derivatives come
    from a fourth-order great-circle stencil.  domain_mask marks where a
    chart-level map is defined.
    """

    def __init__(self, value: Callable[[np.ndarray], np.ndarray], dim: int,
                 ambient_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 domain_mask: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 name: str = "", step: float = 5e-3):
        self.value = value
        self.dim = int(dim)
        self.ambient_jacobian = ambient_jacobian
        self.domain_mask = domain_mask
        self.name = name
        self.step = float(step)

    def mask(self, points: np.ndarray) -> np.ndarray:
        if self.domain_mask is None:
            return np.ones(points.shape[:-1], dtype=bool)
        return np.asarray(self.domain_mask(points), dtype=bool)

    def directional_derivative(self, points: np.ndarray, direction: np.ndarray) -> np.ndarray:
        if self.ambient_jacobian is not None:
            jac = np.asarray(self.ambient_jacobian(points))
            return np.einsum("...di,...i->...d", jac, direction)
        eps = self.step

        def at(t):
            moved = points + t * direction
            moved = moved / np.linalg.norm(moved, axis=-1, keepdims=True)
            return np.asarray(self.value(moved))

        return (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12 * eps)

    def frame_derivatives(self, grid: SphereGrid) -> tuple[np.ndarray, np.ndarray]:
        d1 = self.directional_derivative(grid.nodes, grid.e1)
        d2 = self.directional_derivative(grid.nodes, grid.e2)
        return d1, d2


# ---------------------------------------------------------------------------
# builtin sphere maps
# ---------------------------------------------------------------------------

def constant_sphere_map(value=(0.0, 0.0, 1.0)) -> SphereMap:
    vec = np.asarray(value, dtype=float)

    def f(points):
        return np.broadcast_to(vec, points.shape[:-1] + vec.shape).copy()

    def jac(points):
        return np.zeros(points.shape[:-1] + (vec.shape[0], 3))

    return SphereMap(f, dim=vec.shape[0], ambient_jacobian=jac, name="constant")


def identity_sphere_map() -> SphereMap:
    def f(points):
        return np.asarray(points, dtype=float).copy()

    def jac(points):
        return np.broadcast_to(np.eye(3), points.shape[:-1] + (3, 3)).copy()

    return SphereMap(f, dim=3, ambient_jacobian=jac, name="identity")


def antipodal_sphere_map() -> SphereMap:
    def f(points):
        return -np.asarray(points, dtype=float)

    def jac(points):
        return np.broadcast_to(-np.eye(3), points.shape[:-1] + (3, 3)).copy()

    return SphereMap(f, dim=3, ambient_jacobian=jac, name="antipodal")


def _stereographic(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """North-pole chart z = (x1 + i x2) / (1 - x3), as (Re z, Im z)."""
    pts = np.asarray(points, dtype=float)
    denom = 1.0 - pts[..., 2]
    return pts[..., 0] / denom, pts[..., 1] / denom


def _stereographic_differential(points: np.ndarray, direction: np.ndarray
                                ) -> tuple[np.ndarray, np.ndarray]:
    """dz applied to a tangent direction, as (Re, Im)."""
    pts = np.asarray(points, dtype=float)
    d = np.asarray(direction, dtype=float)
    denom = 1.0 - pts[..., 2]
    re = d[..., 0] / denom + pts[..., 0] * d[..., 2] / denom ** 2
    im = d[..., 1] / denom + pts[..., 1] * d[..., 2] / denom ** 2
    return re, im


def _inverse_stereographic(wr: np.ndarray, wi: np.ndarray) -> np.ndarray:
    d = 1.0 + wr ** 2 + wi ** 2
    return np.stack([2.0 * wr / d, 2.0 * wi / d, (wr ** 2 + wi ** 2 - 1.0) / d], axis=-1)


def _inverse_stereographic_jacobian(wr: np.ndarray, wi: np.ndarray) -> np.ndarray:
    """d(inverse chart)/d(wr, wi), shape (..., 3, 2)."""
    d = 1.0 + wr ** 2 + wi ** 2
    out = np.empty(wr.shape + (3, 2))
    out[..., 0, 0] = (2.0 * d - 4.0 * wr ** 2) / d ** 2
    out[..., 0, 1] = -4.0 * wr * wi / d ** 2
    out[..., 1, 0] = -4.0 * wi * wr / d ** 2
    out[..., 1, 1] = (2.0 * d - 4.0 * wi ** 2) / d ** 2
    out[..., 2, 0] = 4.0 * wr / d ** 2
    out[..., 2, 1] = 4.0 * wi / d ** 2
    return out


class _DilationMap(SphereMap):
    """Conformal dilation toward the north pole, chart action z -> lam z."""

    def __init__(self, lam: float):
        if lam <= 0:
            raise ValidationError("dilation factor must be positive")
        self.lam = float(lam)
        super().__init__(self._value, dim=3, name=f"conformal-dilation({lam:g})")

    def _value(self, points):
        zr, zi = _stereographic(points)
        return _inverse_stereographic(self.lam * zr, self.lam * zi)

    def directional_derivative(self, points, direction):
        zr, zi = _stereographic(points)
        dzr, dzi = _stereographic_differential(points, direction)
        jac = _inverse_stereographic_jacobian(self.lam * zr, self.lam * zi)
        dw = np.stack([self.lam * dzr, self.lam * dzi], axis=-1)
        return np.einsum("...ik,...k->...i", jac, dw)


def conformal_dilation_map(lam: float) -> SphereMap:
    return _DilationMap(lam)


class _ChartAntiholomorphicMap(SphereMap):
    """Chart-level anti-holomorphic map into the first invariant plane.

    In the north-pole chart the map is w = z, embedded into R^4 on the
    plane spanned by components 1 and 4 (the invariant plane of the first
    structure matrix, on which that matrix acts as multiplication by i).
    Defined on the chart region x3 <= cap.
    """

    def __init__(self, cap: float = 0.5):
        self.cap = float(cap)
        super().__init__(self._value, dim=4,
                         domain_mask=lambda pts: np.asarray(pts)[..., 2] <= self.cap,
                         name="chart-antiholomorphic")

    def _value(self, points):
        zr, zi = _stereographic(points)
        out = np.zeros(np.asarray(points).shape[:-1] + (4,))
        out[..., 0] = zr
        out[..., 3] = zi
        return out

    def directional_derivative(self, points, direction):
        dzr, dzi = _stereographic_differential(points, direction)
        out = np.zeros(np.asarray(points).shape[:-1] + (4,))
        out[..., 0] = dzr
        out[..., 3] = dzi
        return out


def chart_antiholomorphic_map(cap: float = 0.5) -> SphereMap:
    return _ChartAntiholomorphicMap(cap)


def build_sphere_map(name: str) -> SphereMap:
    """Resolve a CLI map name like 'identity' or 'conformal-dilation:2'."""
    base, _, arg = name.partition(":")
    base = base.strip().lower()
    if base == "constant":
        return constant_sphere_map()
    if base == "identity":
        return identity_sphere_map()
    if base == "antipodal":
        return antipodal_sphere_map()
    if base == "conformal-dilation":
        return conformal_dilation_map(float(arg) if arg else 2.0)
    if base == "chart-antiholomorphic":
        return chart_antiholomorphic_map(float(arg) if arg else 0.5)
    raise ValidationError(f"unknown sphere map '{name}'")


def sphere_area_form(dim: int = 3) -> TargetTwoForm:
    """The oriented area 2-form of the unit sphere, as an ambient form.

    At a target point y the coefficient matrix is the cross-product matrix
    [.., y], so on the sphere Omega(a, b) = det[y, a, b].  With dim=4 the
    same form is padded with a zero row and column.
    """
    if dim not in (3, 4):
        raise ValidationError("area form supports dim 3 or 4")

    def evaluator(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (dim, dim))
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        out[..., 0, 1] = y3
        out[..., 1, 0] = -y3
        out[..., 0, 2] = -y2
        out[..., 2, 0] = y2
        out[..., 1, 2] = y1
        out[..., 2, 1] = -y1
        return out

    return TargetTwoForm(evaluator=evaluator, dim=dim, label="sphere-area")


# ---------------------------------------------------------------------------
# sphere-level checks
# ---------------------------------------------------------------------------

def tangential_energy(phi: SphereMap, omega: TargetTwoForm, grid: SphereGrid) -> float:
    """Integral over S^2 of the pullback of a target 2-form.

    This is the toolkit's fixed convention for the tangential energy; the
    same convention is used on both sides of the radial-extension identity.
    """
    if omega.dim != phi.dim:
        raise ValidationError(f"two-form dim {omega.dim} != map dim {phi.dim}")
    d1, d2 = phi.frame_derivatives(grid)
    vals = np.asarray(phi.value(grid.nodes))
    mats = omega.evaluate(vals)
    dens = np.einsum("ns,nst,nt->n", d1, mats, d2)
    return float(np.sum(grid.weights * dens))


def stationarity_moment(phi: SphereMap, grid: SphereGrid) -> np.ndarray:
    """The vector of first moments of the energy density over S^2."""
    d1, d2 = phi.frame_derivatives(grid)
    dens = np.einsum("ns,ns->n", d1, d1) + np.einsum("ns,ns->n", d2, d2)
    return np.array([float(np.sum(grid.weights * grid.nodes[:, i] * dens))
                     for i in range(3)])


def frame_alignment_residual(phi: SphereMap, direction, t: StructureTriple | None = None,
                             grid: SphereGrid | None = None) -> np.ndarray:
    """Pointwise alignment residual of a sphere map against a frame direction.

    Measures the Frobenius norm of dphi . rot + sum_k a_k B_k . dphi where
    rot is the +90 degree tangent rotation and B_k the block structure
    matrices.  NaN outside the map's chart domain.
    """
    if grid is None:
        grid = sphere_quadrature(8)
    t = standard_triple() if t is None else t
    if phi.dim % 4 != 0:
        raise ValidationError("frame alignment needs a target dimension divisible by 4")
    n = phi.dim // 4
    blocks = [m.astype(float) for m in block_structure(t, n).matrices]

    a = np.asarray(direction, dtype=float)
    if a.shape == (3,):
        a = np.broadcast_to(a, (len(grid), 3))
    if a.shape != (len(grid), 3):
        raise ValidationError("direction must be a 3-vector or per-node (N, 3) field")
    norms = np.linalg.norm(a, axis=1)
    if np.abs(norms - 1.0).max() > 1e-10:
        raise ValidationError("direction field must be unit length at every node")

    d1, d2 = phi.frame_derivatives(grid)
    combo = np.einsum("nk,kst->nst", a, np.stack(blocks))
    # columns of dphi o rot: rot e1 = e2, rot e2 = -e1
    col1 = d2 + np.einsum("nst,nt->ns", combo, d1)
    col2 = -d1 + np.einsum("nst,nt->ns", combo, d2)
    res = np.sqrt(np.einsum("ns,ns->n", col1, col1) + np.einsum("ns,ns->n", col2, col2))
    mask = phi.mask(grid.nodes)
    res = np.where(mask, res, np.nan)
    return res


# ---------------------------------------------------------------------------
# homogeneous radial extension
# ---------------------------------------------------------------------------

def _padded_dim(dim: int) -> tuple[int, int]:
    """Target padding: map dim -> (4n, n)."""
    if dim == 3:
        return 4, 1
    if dim % 4 == 0:
        return dim, dim // 4
    raise ValidationError(f"cannot embed target dimension {dim} into 4n coordinates")


def homogeneous_extension(phi: SphereMap, grid4: GridSpec) -> MapField:
    """Extend a sphere map to R^4 by u(x, x4) = phi(x / |x|).

    The grid must keep every node off the singular axis x = 0; analytic
    Jacobians are attached via the chain rule (zero radial and axis
    derivatives).  Three-dimensional targets are padded with a zero fourth
    coordinate.
    """
    if grid4.m != 4:
        raise GridError("homogeneous extension needs a 4-dimensional grid")
    dim4, n = _padded_dim(phi.dim)

    def spatial_radius(pts):
        return np.linalg.norm(pts[..., :3], axis=-1)

    nodes = grid4.nodes()
    r = spatial_radius(nodes)
    if r.min() < 1e-9:
        raise GridError("grid contains a node on the singular axis x = 0")
    axis_dist = np.hypot(nodes[..., 0], nodes[..., 1])
    if axis_dist.min() < 1e-9:
        raise GridError("grid touches the polar axis of the sphere frame; "
                        "offset the box by half a spacing in x1")

    def pad(values):
        if phi.dim == dim4:
            return values
        out = np.zeros(values.shape[:-1] + (dim4,))
        out[..., :phi.dim] = values
        return out

    def evaluator(pts):
        pts = np.asarray(pts, dtype=float)
        xi = pts[..., :3] / spatial_radius(pts)[..., None]
        return pad(np.asarray(phi.value(xi)))

    def jacobian_evaluator(pts):
        pts = np.asarray(pts, dtype=float)
        rr = spatial_radius(pts)
        xi = pts[..., :3] / rr[..., None]
        t1, t2 = tangent_frame(xi)
        d1 = pad(phi.directional_derivative(xi, t1))
        d2 = pad(phi.directional_derivative(xi, t2))
        # d xi / d x_j = (e_j - xi xi_j) / r, a tangent vector; expand in frame
        du = np.zeros(pts.shape[:-1] + (dim4, 4))
        for j in range(3):
            ej = np.zeros(pts.shape[:-1] + (3,))
            ej[..., j] = 1.0
            tang = (ej - xi * xi[..., j:j + 1]) / rr[..., None]
            c1 = np.einsum("...i,...i->...", tang, t1)
            c2 = np.einsum("...i,...i->...", tang, t2)
            du[..., j] = c1[..., None] * d1 + c2[..., None] * d2
        return du

    return MapField.from_function(grid4, n, evaluator, jacobian=jacobian_evaluator)


# ---------------------------------------------------------------------------
# two-sided radial-extension pairing check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtensionPairingResult:
    lhs: float
    rhs: float
    tangential: float
    rel_err: float

    def as_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs,
                "tangential_energy": self.tangential, "rel_err": self.rel_err}


def _wedge_coefficient_4d(deta: dict, p01, p02, p12):
    """Top coefficient of (d eta) ^ P when P has no axis components."""
    return (deta[(0, 3)] * p12 - deta[(1, 3)] * p02 + deta[(2, 3)] * p01)


def extension_pairing_check(phi: SphereMap, omega: TargetTwoForm, eta: TestForm,
                            resolution: int = 2) -> ExtensionPairingResult:
    """Both sides of the radial-extension pairing identity, independently.

    Left side: quadrature of (d eta) ^ (pullback of omega through the
    extension of phi) in radial-spherical-axis product coordinates, so the
    1/r^2 derivative scale meets the r^2 Jacobian exactly.  Right side:
    minus the tangential energy times the axis integral of eta.
    """
    if eta.grid.m != 4:
        raise ValidationError("the identity lives on a 4-dimensional domain")
    if not eta.is_analytic():
        raise ValidationError("extension check needs an analytic test form")
    if omega.dim != phi.dim:
        raise ValidationError("two-form and sphere map dimensions differ")
    if phi.domain_mask is not None:
        raise ValidationError("extension check needs a globally defined sphere map")
    margin_ok = all(hi - lo > 2 * eta.margin for lo, hi in zip(eta.grid.lo, eta.grid.hi))
    if not margin_ok:
        raise QuadratureDomainError("test form support touches the box boundary")

    if resolution < 1:
        raise ValidationError("resolution must be >= 1")
    n_r = 8 * resolution
    level = 2 + 2 * resolution
    n_t = 8 * resolution + 1

    box_lo, box_hi = eta.grid.lo, eta.grid.hi
    r_corner = float(np.sqrt(sum(max(abs(a), abs(b)) ** 2
                                 for a, b in zip(box_lo[:3], box_hi[:3]))))
    r_nodes, r_weights = np.polynomial.legendre.leggauss(n_r)
    r_nodes = 0.5 * r_corner * (r_nodes + 1.0)
    r_weights = 0.5 * r_corner * r_weights

    sgrid = sphere_quadrature(level)
    d1, d2 = phi.frame_derivatives(sgrid)
    vals = np.asarray(phi.value(sgrid.nodes))
    mats = omega.evaluate(vals)

    t_nodes = np.linspace(box_lo[3], box_hi[3], n_t)
    t_weights = _stencils.quadrature_weights(n_t, (box_hi[3] - box_lo[3]) / (n_t - 1))

    # pullback coefficients on the unit sphere: P_ij(xi) from the two frame
    # derivatives; spatial derivative of the extension at radius r is the
    # tangential expansion divided by r.
    t1, t2 = sgrid.e1, sgrid.e2
    n_s = len(sgrid)
    dcols = np.zeros((n_s, phi.dim, 3))
    for j in range(3):
        ej = np.zeros((n_s, 3))
        ej[:, j] = 1.0
        tang = ej - sgrid.nodes * sgrid.nodes[:, j:j + 1]
        c1 = np.einsum("ni,ni->n", tang, t1)
        c2 = np.einsum("ni,ni->n", tang, t2)
        dcols[:, :, j] = c1[:, None] * d1 + c2[:, None] * d2
    # unit-radius pullback components; at radius r they scale by 1/r^2
    punit = np.einsum("nsi,nst,ntj->nij", dcols, mats, dcols)
    p01, p02, p12 = punit[:, 0, 1], punit[:, 0, 2], punit[:, 1, 2]

    lhs = 0.0
    for t_val, t_w in zip(t_nodes, t_weights):
        for r_val, r_w in zip(r_nodes, r_weights):
            pts = np.empty((n_s, 4))
            pts[:, :3] = r_val * sgrid.nodes
            pts[:, 3] = t_val
            deta = eta.derivative_components(pts)
            coeff = _wedge_coefficient_4d(deta, p01, p02, p12)
            # (1/r^2 pullback scale) * (r^2 radial Jacobian) = 1
            lhs += t_w * r_w * float(np.sum(sgrid.weights * coeff))

    tangential = float(np.sum(sgrid.weights * np.einsum("ns,nst,nt->n", d1, mats, d2)))

    n_axis = 4 * n_t + 1
    ax = np.linspace(box_lo[3], box_hi[3], n_axis)
    ax_w = _stencils.quadrature_weights(n_axis, (box_hi[3] - box_lo[3]) / (n_axis - 1))
    axis_integral = float(np.sum(ax_w * eta.restricted_to_axis(ax)))
    rhs = -tangential * axis_integral

    scale = max(abs(rhs), 1e-14)
    return ExtensionPairingResult(lhs=lhs, rhs=rhs, tangential=tangential,
                                  rel_err=abs(lhs - rhs) / scale)


def radial_bump_test_form(grid: GridSpec, radius: float, margin: float) -> TestForm:
    """The axis-component test form f(|x|^2 + x4^2) dx4 with f a bump.

    Supported in the centered ball of the given radius; the grid box must
    contain that ball with the declared margin to spare.
    """
    if grid.m != 4:
        raise ValidationError("radial test form needs m = 4")
    for lo, hi in zip(grid.lo, grid.hi):
        if lo > -radius + 1e-12 or hi < radius - 1e-12:
            raise ValidationError("grid box does not contain the support ball")
    r2 = radius * radius

    def value(pts):
        pts = np.asarray(pts, dtype=float)
        q = np.sum(pts * pts, axis=-1) / r2
        out = np.zeros(q.shape)
        inside = q < 1.0
        out[inside] = np.exp(1.0 / (q[inside] - 1.0))
        return out

    def gradient(pts):
        pts = np.asarray(pts, dtype=float)
        q = np.sum(pts * pts, axis=-1) / r2
        out = np.zeros(pts.shape)
        inside = q < 1.0
        qi = q[inside]
        scale = np.exp(1.0 / (qi - 1.0)) * (-1.0 / (qi - 1.0) ** 2) * (2.0 / r2)
        out[inside] = scale[..., None] * pts[inside]
        return out

    form = KForm(grid, 1)
    form.set_component((3,), value(grid.nodes()))
    return TestForm(form=form, margin=margin,
                    component_functions={(3,): (value, gradient)},
                    label=f"radial-bump-r{radius:g}")
