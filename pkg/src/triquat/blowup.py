"""Defect-measure pipeline: detection, density, frame direction, formula.

The pipeline consumes per-member energy densities e_k and flux 2-forms
P_k (one per structure channel), which is exactly what the weak-limit
statement uses.  Manufactured sequences concentrate a normalized profile
layer onto a coordinate 2-plane, injected consistently into the energy
and into chosen flux channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.ndimage

from . import _kernels, _stencils
from .algebra import FrameRotation
from .errors import NoDefectError, QuadratureDomainError, ValidationError
from .fields import GridSpec, MapField, energy_density, jacobian
from .forms import (KForm, TargetTwoForm, TestForm, exterior_derivative,
                    pairing_with_form, pullback_two_form, structure_two_forms)

DEFAULT_ORDER = 4


# ---------------------------------------------------------------------------
# data carriers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanePatch:
    """Affine 2-plane patch: base point, orthonormal 2-frame, rectangle bounds."""

    point: np.ndarray                    # (4,)
    frame: np.ndarray                    # (2, 4) orthonormal rows
    bounds: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        point = np.asarray(self.point, dtype=float)
        frame = np.asarray(self.frame, dtype=float)
        if point.shape != (4,) or frame.shape != (2, 4):
            raise ValidationError("patch needs a 4-point and a (2, 4) frame")
        gram = frame @ frame.T
        if np.abs(gram - np.eye(2)).max() > 1e-10:
            raise ValidationError("patch frame must be orthonormal")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "frame", frame)

    def embed(self, s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
        """Map patch coordinates to ambient points; broadcasts s1, s2."""
        s1 = np.asarray(s1, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        return (self.point
                + s1[..., None] * self.frame[0]
                + s2[..., None] * self.frame[1])

    def normal_distance(self, pts: np.ndarray) -> np.ndarray:
        rel = np.asarray(pts, dtype=float) - self.point
        q1 = rel @ self.frame[0]
        q2 = rel @ self.frame[1]
        tang = q1[..., None] * self.frame[0] + q2[..., None] * self.frame[1]
        return np.linalg.norm(rel - tang, axis=-1)


@dataclass(frozen=True)
class DensitySamples:
    """Per-patch density estimates on a regular patch-coordinate grid."""

    s1: np.ndarray          # (n1,)
    s2: np.ndarray          # (n2,)
    values: np.ndarray      # (n1, n2) last-tail estimates
    cauchy_gap: float       # max successive gap over the tail
    tail_values: np.ndarray  # (K, n1, n2) per tail member

    def variance(self) -> float:
        return float(np.var(self.values))


@dataclass(frozen=True)
class DefectMeasure:
    """Codimension-2 support patches with density samples."""

    patches: tuple[PlanePatch, ...]
    densities: tuple[DensitySamples, ...]

    def __post_init__(self):
        if len(self.patches) != len(self.densities):
            raise ValidationError("one density table per patch required")

    def is_empty(self) -> bool:
        return len(self.patches) == 0


@dataclass(frozen=True)
class FrameEstimate:
    """Channel-space direction of the defect plus completion and quality."""

    direction: np.ndarray          # (3,) unit
    orthogonal_basis: np.ndarray   # (2, 3) unit, orthogonal to direction
    rank_one_residual: float       # second singular value over first
    channel_matrix: np.ndarray     # (3, n_eta) defect pairings
    per_patch: tuple[np.ndarray, ...] = ()
    max_patch_disagreement: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValidationError("defect direction must be a unit vector")
        b = np.asarray(self.orthogonal_basis, dtype=float)
        if np.abs(b @ a).max() > 1e-12:
            raise ValidationError("orthogonal basis must be orthogonal to the direction")


@dataclass(frozen=True)
class SequenceMember:
    index: int
    energy: np.ndarray
    fluxes: tuple[KForm, KForm, KForm]


class SequenceSource:
    """Indexed family of (energy, flux) fields sharing one grid.

    Build with from_fields (direct mode) or from_map_fields (derived mode);
    the two modes cannot be mixed.
    """

    def __init__(self, grid: GridSpec, members: Sequence[SequenceMember],
                 limit: SequenceMember, mode: str):
        if grid.m != 4:
            raise ValidationError("the pipeline runs on 4-dimensional grids")
        if len(members) < 1:
            raise ValidationError("sequence needs at least one member")
        indices = [m.index for m in members]
        if sorted(indices) != indices or len(set(indices)) != len(indices):
            raise ValidationError("member indices must be strictly increasing")
        for m in list(members) + [limit]:
            if np.asarray(m.energy).shape != grid.res:
                raise ValidationError("energy field shape does not match the grid")
            if np.min(m.energy) < -1e-12:
                raise ValidationError("energy density must be nonnegative")
            if len(m.fluxes) != 3:
                raise ValidationError("three flux channels required")
            for f in m.fluxes:
                if f.grid != grid or f.degree != 2:
                    raise ValidationError("fluxes must be degree-2 forms on the grid")
        self.grid = grid
        self.members = tuple(members)
        self.limit = limit
        self.mode = mode

    @staticmethod
    def from_fields(grid: GridSpec, members: Sequence[SequenceMember],
                    limit: SequenceMember) -> "SequenceSource":
        return SequenceSource(grid, members, limit, mode="fields")

    @staticmethod
    def from_map_fields(grid: GridSpec, maps: Sequence[tuple[int, MapField]],
                        limit_map: MapField, order: int = DEFAULT_ORDER) -> "SequenceSource":
        omegas = structure_two_forms(n=limit_map.n)

        def derive(idx: int, u: MapField) -> SequenceMember:
            du = jacobian(u, order)
            e = energy_density(du)
            fluxes = tuple(pullback_two_form(u, om, du=du) for om in omegas)
            return SequenceMember(index=idx, energy=e, fluxes=fluxes)

        members = [derive(k, u) for k, u in maps]
        limit = derive(members[-1].index + 1, limit_map)
        return SequenceSource(grid, members, limit, mode="maps")

    def total_energies(self) -> list[float]:
        weights = [_stencils.quadrature_weights(n, h)
                   for n, h in zip(self.grid.res, self.grid.h)]

        def integrate(e):
            out = np.asarray(e, dtype=float)
            for axis in range(self.grid.m - 1, -1, -1):
                out = np.tensordot(out, weights[axis], axes=(axis, 0))
            return float(out)

        return [integrate(m.energy) for m in self.members]


@dataclass(frozen=True)
class BlowupConfig:
    """Thresholds and window sizes of the pipeline."""

    eps0: float
    lambda_cap: float
    radii: tuple[float, ...]
    tail_start: int = 0
    theta_cap: Optional[float] = None
    slab_halfwidth: float = 0.0        # in-plane half side of the density slab
    slab_normal_extent: float = 0.0    # normal reach of the density slab
    sample_spacing: float = 0.0        # density sample spacing on the patch
    sample_inset: float = 0.0          # keep samples this far inside patch bounds
    cauchy_tol: float = 0.25           # relative tail-gap tolerance
    defect_floor: float = 1e-9         # channel defect below this is "no defect"
    min_cluster: int = 4               # smallest point cloud fitted with a patch

    def validated(self, grid: GridSpec) -> "BlowupConfig":
        if self.eps0 <= 0:
            raise ValidationError("density threshold must be positive")
        if self.lambda_cap <= 0:
            raise ValidationError("energy cap must be positive")
        radii = tuple(float(r) for r in self.radii)
        if len(radii) < 1 or any(r2 >= r1 for r1, r2 in zip(radii, radii[1:])):
            raise ValidationError("radii must be strictly decreasing")
        hmax = max(grid.h)
        if min(radii) < 3 * hmax - 1e-12:
            raise ValidationError("each detection radius must be at least 3 grid spacings")
        return self


@dataclass(frozen=True)
class BlowupDetection:
    mask: np.ndarray
    cloud: np.ndarray                 # (N, 4)
    patches: tuple[PlanePatch, ...]
    min_ratio: np.ndarray             # pointwise min over tail and radii (NaN margins)

    def is_empty(self) -> bool:
        return self.cloud.shape[0] == 0


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

def detect_blowup_set(seq: SequenceSource, cfg: BlowupConfig,
                      backend: str | None = None) -> BlowupDetection:
    """Threshold the scaled ball energies of the tail and fit plane patches.

    A node passes when the minimum over tail members of the density ratio
    stays at or above the threshold for every configured radius.
    """
    cfg = cfg.validated(seq.grid)
    totals = seq.total_energies()
    if max(totals) > cfg.lambda_cap:
        raise ValidationError(
            f"member energy {max(totals):.3g} exceeds the configured cap {cfg.lambda_cap:.3g}")
    tail = seq.members[cfg.tail_start:]
    if len(tail) < 3:
        raise ValidationError("detection needs at least 3 tail members")

    grid = seq.grid
    vol = grid.volume_element()
    min_ratio = None
    for r in cfg.radii:
        offsets, weights = _kernels.ball_stencil(grid.h, r)
        for member in tail:
            sums = _kernels.ball_sums(np.asarray(member.energy, dtype=float),
                                      offsets, weights, backend=backend)
            ratio = (r ** (2 - grid.m) * vol) * sums
            min_ratio = ratio if min_ratio is None else np.fmin(min_ratio, ratio)

    with np.errstate(invalid="ignore"):
        mask = min_ratio >= cfg.eps0
    nodes = grid.nodes()
    cloud = nodes[mask]

    patches = fit_patches(mask, nodes, min_cluster=cfg.min_cluster)
    return BlowupDetection(mask=mask, cloud=cloud, patches=patches, min_ratio=min_ratio)


def fit_patches(mask: np.ndarray, nodes: np.ndarray,
                min_cluster: int = 4) -> tuple[PlanePatch, ...]:
    """Least-squares affine 2-planes, one per connected cluster of the mask."""
    if not mask.any():
        return ()
    structure = np.ones((3,) * mask.ndim, dtype=int)
    labels, count = scipy.ndimage.label(mask, structure=structure)
    patches = []
    for lab in range(1, count + 1):
        pts = nodes[labels == lab]
        if pts.shape[0] < min_cluster:
            continue
        centroid = pts.mean(axis=0)
        rel = pts - centroid
        _, _, vt = np.linalg.svd(rel, full_matrices=False)
        frame = vt[:2]
        s1 = rel @ frame[0]
        s2 = rel @ frame[1]
        bounds = ((float(s1.min()), float(s1.max())),
                  (float(s2.min()), float(s2.max())))
        patches.append(PlanePatch(point=centroid, frame=frame, bounds=bounds))
    return tuple(patches)


# ---------------------------------------------------------------------------
# density estimation
# ---------------------------------------------------------------------------

def estimate_density(seq: SequenceSource, patches: Sequence[PlanePatch],
                     cfg: BlowupConfig) -> DefectMeasure:
    """Per-patch density of the concentration layer from slab integrals.

    theta(s) integrates e_k - e_limit over a slab orthogonal to the patch
    with a small square base at s, divided by the base area; the reported
    value is the last tail member, with the worst successive gap as the
    Cauchy diagnostic.
    """
    if not patches:
        raise ValidationError("density estimation needs at least one patch")
    cfg = cfg.validated(seq.grid)
    grid = seq.grid
    hmax = max(grid.h)
    half = cfg.slab_halfwidth if cfg.slab_halfwidth > 0 else 2.0 * hmax
    extent = cfg.slab_normal_extent if cfg.slab_normal_extent > 0 else min(cfg.radii)
    spacing = cfg.sample_spacing if cfg.sample_spacing > 0 else 2.0 * hmax
    tail = seq.members[cfg.tail_start:]
    vol = grid.volume_element()
    base_area = (2.0 * half) ** 2

    nodes_flat = grid.nodes().reshape(-1, 4)
    diffs = [(np.asarray(m.energy, dtype=float)
              - np.asarray(seq.limit.energy, dtype=float)).reshape(-1) for m in tail]

    densities = []
    for patch in patches:
        rel = nodes_flat - patch.point
        q1 = rel @ patch.frame[0]
        q2 = rel @ patch.frame[1]
        tang = q1[:, None] * patch.frame[0] + q2[:, None] * patch.frame[1]
        dn = np.linalg.norm(rel - tang, axis=1)
        near = dn <= extent
        q1n, q2n = q1[near], q2[near]
        layer_diffs = [d[near] for d in diffs]

        (b1lo, b1hi), (b2lo, b2hi) = patch.bounds
        inset = cfg.sample_inset if cfg.sample_inset > 0 else half
        s1 = _sample_line(b1lo + inset, b1hi - inset, spacing)
        s2 = _sample_line(b2lo + inset, b2hi - inset, spacing)
        cell = max(grid.h)
        tail_vals = np.zeros((len(tail), len(s1), len(s2)))
        for i, v1 in enumerate(s1):
            w1 = _cell_overlap(q1n - v1, half, cell)
            nz1 = w1 > 0
            for j, v2 in enumerate(s2):
                w2 = _cell_overlap(q2n[nz1] - v2, half, cell)
                w12 = w1[nz1] * w2
                for t_idx, d in enumerate(layer_diffs):
                    tail_vals[t_idx, i, j] = (d[nz1] * w12).sum() * vol / base_area
        values = tail_vals[-1]
        gaps = np.abs(np.diff(tail_vals, axis=0))
        gap = float(gaps.max()) if gaps.size else 0.0
        scale = max(float(np.abs(values).max()), cfg.eps0 / np.pi)
        if gap > cfg.cauchy_tol * scale:
            raise ValidationError(
                f"density tail is not Cauchy: gap {gap:.3g} vs scale {scale:.3g}")
        if cfg.theta_cap is not None and float(values.max()) > cfg.theta_cap:
            raise ValidationError(
                f"estimated density {values.max():.3g} exceeds the configured cap")
        densities.append(DensitySamples(s1=s1, s2=s2, values=values,
                                        cauchy_gap=gap, tail_values=tail_vals))
    return DefectMeasure(patches=tuple(patches), densities=tuple(densities))


def _sample_line(lo: float, hi: float, spacing: float) -> np.ndarray:
    if hi <= lo:
        return np.array([(lo + hi) / 2.0])
    count = max(int(np.floor((hi - lo) / spacing)) + 1, 2)
    return np.linspace(lo, hi, count)


def _cell_overlap(offsets: np.ndarray, half: float, cell: float) -> np.ndarray:
    """Fraction of each node cell [q - cell/2, q + cell/2] inside [-half, half].

    Partial-cell weighting keeps slab sums from jittering when the window
    edges fall between grid nodes.
    """
    lo = np.maximum(offsets - 0.5 * cell, -half)
    hi = np.minimum(offsets + 0.5 * cell, half)
    return np.clip((hi - lo) / cell, 0.0, 1.0)


# ---------------------------------------------------------------------------
# pairings and frame direction
# ---------------------------------------------------------------------------

def limit_pairing(seq: SequenceSource, eta: TestForm, alpha: int,
                  cfg: BlowupConfig | None = None,
                  order: int = DEFAULT_ORDER) -> tuple[float, float]:
    """Tail pairings against one flux channel: (last value, max gap)."""
    if alpha not in (0, 1, 2):
        raise ValidationError("channel index must be 0, 1, or 2")
    start = cfg.tail_start if cfg is not None else 0
    tail = seq.members[start:]
    values = [pairing_with_form(eta, m.fluxes[alpha], order=order) for m in tail]
    gaps = [abs(b - a) for a, b in zip(values, values[1:])]
    return values[-1], (max(gaps) if gaps else 0.0)


def base_pairing(seq: SequenceSource, eta: TestForm, alpha: int,
                 order: int = DEFAULT_ORDER) -> float:
    return pairing_with_form(eta, seq.limit.fluxes[alpha], order=order)


def defect_matrix(seq: SequenceSource, battery: Sequence[TestForm],
                  cfg: BlowupConfig | None = None,
                  order: int = DEFAULT_ORDER) -> np.ndarray:
    """Channel-by-form matrix of pairing defects (limit minus base)."""
    out = np.zeros((3, len(battery)))
    for j, eta in enumerate(battery):
        for alpha in range(3):
            lim, _ = limit_pairing(seq, eta, alpha, cfg=cfg, order=order)
            out[alpha, j] = lim - base_pairing(seq, eta, alpha, order=order)
    return out


def _leading_direction(v: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    u, s, _ = np.linalg.svd(v, full_matrices=True)
    a = u[:, 0]
    pivot = int(np.argmax(np.abs(a)))
    if a[pivot] < 0:
        a = -a
        u = u.copy()
        u[:, 0] = a
    residual = float(s[1] / s[0]) if len(s) > 1 and s[0] > 0 else 0.0
    return a, u[:, 1:3].T, residual


def estimate_frame_direction(seq: SequenceSource, battery: Sequence[TestForm],
                             cfg: BlowupConfig, patches: Sequence[PlanePatch] = (),
                             order: int = DEFAULT_ORDER) -> FrameEstimate:
    """Channel-space direction of the concentration from the defect matrix.

    The leading left singular direction of the defect matrix, sign-fixed by
    making its largest entry positive; the remaining singular directions
    complete the frame.  With several patches, per-patch directions are
    estimated from the forms supported near each patch and the worst
    angular disagreement is reported.
    """
    if len(battery) < 3:
        raise ValidationError("frame estimation needs at least 3 test forms")
    v = defect_matrix(seq, battery, cfg=cfg, order=order)
    scale = float(np.abs(v).max())
    if scale < cfg.defect_floor:
        raise NoDefectError(
            f"defect matrix below the noise floor ({scale:.3g} < {cfg.defect_floor:.3g})")
    a, b_basis, residual = _leading_direction(v)

    per_patch = []
    disagreement = 0.0
    if len(patches) > 1:
        boxes = [_support_box(eta) for eta in battery]
        for patch in patches:
            cols = [j for j, box in enumerate(boxes)
                    if box is not None and _box_near_patch(box, patch)]
            if len(cols) < 3:
                continue
            sub = v[:, cols]
            if np.abs(sub).max() < cfg.defect_floor:
                continue
            ap, _, _ = _leading_direction(sub)
            per_patch.append(ap)
            disagreement = max(disagreement,
                               float(np.arccos(np.clip(abs(ap @ a), -1.0, 1.0))))
    return FrameEstimate(direction=a, orthogonal_basis=b_basis,
                         rank_one_residual=residual, channel_matrix=v,
                         per_patch=tuple(per_patch),
                         max_patch_disagreement=disagreement)


def _support_box(eta: TestForm):
    """Bounding box of the sampled support, or None for a zero form."""
    grid = eta.grid
    axes = grid.axes()
    lo = [np.inf] * grid.m
    hi = [-np.inf] * grid.m
    found = False
    for arr in eta.form.coeffs.values():
        nz = np.abs(arr) > 0
        if not nz.any():
            continue
        found = True
        for axis in range(grid.m):
            other = tuple(a for a in range(grid.m) if a != axis)
            line = nz.any(axis=other)
            idx = np.nonzero(line)[0]
            lo[axis] = min(lo[axis], axes[axis][idx[0]])
            hi[axis] = max(hi[axis], axes[axis][idx[-1]])
    return (np.array(lo), np.array(hi)) if found else None


def _box_near_patch(box, patch: PlanePatch) -> bool:
    lo, hi = box
    center = (lo + hi) / 2.0
    halfdiag = float(np.linalg.norm(hi - lo)) / 2.0
    return float(patch.normal_distance(center[None, :])[0]) <= halfdiag


# ---------------------------------------------------------------------------
# surface integral and the formula
# ---------------------------------------------------------------------------

def surface_integral(dm: DefectMeasure, eta: TestForm | KForm,
                     order: int = DEFAULT_ORDER, refine: int = 4) -> float:
    """Integral over the support patches of density times restricted d eta.

    Patch quadrature is 2-D composite Simpson in patch coordinates; the
    density samples are interpolated onto the quadrature nodes.  eta may be
    a TestForm (analytic d eta used when available) or a bare (m-3)-form
    with analytic components required.
    """
    total = 0.0
    for patch, dens in zip(dm.patches, dm.densities):
        total += _surface_integral_patch(patch, dens, eta, order=order, refine=refine)
    return total


def surface_integral_with_density(patch: PlanePatch, density_fn, eta: TestForm | KForm,
                                  n_nodes: int = 121, order: int = DEFAULT_ORDER) -> float:
    """Oracle-style patch integral with an analytic density function."""
    (b1lo, b1hi), (b2lo, b2hi) = patch.bounds
    s1 = np.linspace(b1lo, b1hi, n_nodes)
    s2 = np.linspace(b2lo, b2hi, n_nodes)
    w1 = _stencils.quadrature_weights(len(s1), (b1hi - b1lo) / (len(s1) - 1))
    w2 = _stencils.quadrature_weights(len(s2), (b2hi - b2lo) / (len(s2) - 1))
    g1, g2 = np.meshgrid(s1, s2, indexing="ij")
    pts = patch.embed(g1, g2)
    restricted = _restricted_two_form(eta, patch, pts, order=order)
    theta = density_fn(g1, g2)
    return float(np.einsum("i,j,ij->", w1, w2, theta * restricted))


def _surface_integral_patch(patch: PlanePatch, dens: DensitySamples,
                            eta: TestForm | KForm, order: int, refine: int) -> float:
    (b1lo, b1hi), (b2lo, b2hi) = patch.bounds
    n1 = max(refine * (len(dens.s1) - 1) + 1, 9)
    n2 = max(refine * (len(dens.s2) - 1) + 1, 9)
    s1 = np.linspace(b1lo, b1hi, n1)
    s2 = np.linspace(b2lo, b2hi, n2)
    w1 = _stencils.quadrature_weights(n1, (b1hi - b1lo) / (n1 - 1))
    w2 = _stencils.quadrature_weights(n2, (b2hi - b2lo) / (n2 - 1))
    g1, g2 = np.meshgrid(s1, s2, indexing="ij")
    pts = patch.embed(g1, g2)
    restricted = _restricted_two_form(eta, patch, pts, order=order)
    theta = _interpolate_samples(dens, g1, g2)
    return float(np.einsum("i,j,ij->", w1, w2, theta * restricted))


def _interpolate_samples(dens: DensitySamples, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    from scipy.interpolate import RegularGridInterpolator

    if len(dens.s1) == 1 and len(dens.s2) == 1:
        return np.full(g1.shape, float(dens.values[0, 0]))
    if len(dens.s1) == 1 or len(dens.s2) == 1:
        axis_vals = dens.s1 if len(dens.s2) == 1 else dens.s2
        flat = dens.values.ravel()
        coords = (g1 if len(dens.s2) == 1 else g2).ravel()
        out = np.interp(coords, axis_vals, flat)
        return out.reshape(g1.shape)
    interp = RegularGridInterpolator((dens.s1, dens.s2), dens.values,
                                     bounds_error=False, fill_value=None)
    return interp(np.stack([g1.ravel(), g2.ravel()], axis=1)).reshape(g1.shape)


def _restricted_two_form(eta: TestForm | KForm, patch: PlanePatch,
                         pts: np.ndarray, order: int) -> np.ndarray:
    """d eta evaluated on the patch frame: d eta(f1, f2) at the given points."""
    import itertools

    f1, f2 = patch.frame
    if isinstance(eta, TestForm) and eta.is_analytic():
        comps = eta.derivative_components(pts)
        grid_m = eta.grid.m
    elif isinstance(eta, (TestForm, KForm)):
        form = eta.form if isinstance(eta, TestForm) else eta
        grid_m = form.grid.m
        deta = exterior_derivative(form, order=order)
        comps = _interpolated_components(deta, pts)
    else:
        raise ValidationError("eta must be a TestForm or a KForm")
    out = np.zeros(pts.shape[:-1])
    for (i, j) in itertools.combinations(range(grid_m), 2):
        if (i, j) not in comps:
            continue
        out = out + comps[(i, j)] * (f1[i] * f2[j] - f1[j] * f2[i])
    return out


def _interpolated_components(form: KForm, pts: np.ndarray) -> dict:
    from scipy.interpolate import RegularGridInterpolator

    axes = form.grid.axes()
    flat = pts.reshape(-1, form.grid.m)
    out = {}
    for idx, arr in form.coeffs.items():
        interp = RegularGridInterpolator(axes, arr, bounds_error=False, fill_value=0.0)
        out[idx] = interp(flat).reshape(pts.shape[:-1])
    return out


def normal_frame(patch: PlanePatch) -> np.ndarray:
    """An orthonormal basis (2, 4) of the plane orthogonal to the patch."""
    _, _, vt = np.linalg.svd(patch.frame, full_matrices=True)
    return vt[2:]


def patch_orientation_factor(seq: SequenceSource, patch: PlanePatch,
                             direction: np.ndarray) -> float:
    """Sign relating the fitted patch frame to the formula's orientation.

    The concentration formula orients the support so that the defect flux
    restricted to the normal plane is a positive density and the pair
    (normal frame, patch frame) is positively oriented in the ambient
    space.  The fitted frame carries neither convention, so the surface
    term picks up this data-determined sign.
    """
    n1, n2 = normal_frame(patch)
    f1, f2 = patch.frame
    amb = float(np.linalg.det(np.stack([n1, n2, f1, f2])))
    total = 0.0
    for alpha in range(3):
        if abs(direction[alpha]) < 1e-15:
            continue
        last = seq.members[-1].fluxes[alpha]
        base = seq.limit.fluxes[alpha]
        for (i, j) in set(last.coeffs) | set(base.coeffs):
            delta = last.component((i, j)) - base.component((i, j))
            pair = n1[i] * n2[j] - n1[j] * n2[i]
            if abs(pair) > 1e-15:
                total += direction[alpha] * pair * float(delta.sum())
    if total == 0.0:
        return float(np.sign(amb)) or 1.0
    return float(np.sign(amb) * np.sign(total))


@dataclass(frozen=True)
class FormulaRow:
    label: str
    line: str                      # "a" or "b0"/"b1"
    lhs: float
    rhs: float
    surface_term: float
    cauchy_gap: float

    @property
    def discrepancy(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass(frozen=True)
class FormulaReport:
    rows: tuple[FormulaRow, ...]
    scale: float

    def relative(self, row: FormulaRow) -> float:
        return row.discrepancy / self.scale if self.scale > 0 else 0.0

    def max_relative(self, line_prefix: str = "") -> float:
        rel = [self.relative(r) for r in self.rows if r.line.startswith(line_prefix)]
        return max(rel) if rel else 0.0

    def as_rows(self) -> list[dict]:
        return [{"eta": r.label, "line": r.line, "lhs": r.lhs, "rhs": r.rhs,
                 "surface_term": r.surface_term, "cauchy_gap": r.cauchy_gap,
                 "abs_discrepancy": r.discrepancy,
                 "rel_discrepancy": self.relative(r)} for r in self.rows]


def verify_blowup_formula(seq: SequenceSource, battery: Sequence[TestForm],
                          dm: DefectMeasure | None, frame: FrameEstimate,
                          cfg: BlowupConfig, order: int = DEFAULT_ORDER) -> FormulaReport:
    """Check both lines of the concentration formula over a form battery.

    Line a: direction-weighted limit pairing equals the same pairing of the
    limit plus the patch surface integral.  Lines b: orthogonal-direction
    combinations see no defect at all.  Relative discrepancies are measured
    against the largest term appearing anywhere in the battery.
    """
    if not battery:
        raise ValidationError("formula verification needs a nonempty battery")
    if dm is None or dm.is_empty():
        v = defect_matrix(seq, battery, cfg=cfg, order=order)
        if float(np.abs(v).max()) > cfg.defect_floor:
            raise ValidationError(
                "nonzero defect present but no defect measure was supplied")
        dm = DefectMeasure(patches=(), densities=())

    a = frame.direction
    orientations = [patch_orientation_factor(seq, patch, a) for patch in dm.patches]
    rows = []
    for eta in battery:
        lims = []
        gaps = []
        bases = []
        for alpha in range(3):
            lim, gap = limit_pairing(seq, eta, alpha, cfg=cfg, order=order)
            lims.append(lim)
            gaps.append(gap)
            bases.append(base_pairing(seq, eta, alpha, order=order))
        lims = np.array(lims)
        bases = np.array(bases)
        gap = float(max(gaps))
        surf = 0.0
        for orient, patch, dens in zip(orientations, dm.patches, dm.densities):
            surf += orient * _surface_integral_patch(patch, dens, eta,
                                                     order=order, refine=4)
        rows.append(FormulaRow(label=eta.label or "eta", line="a",
                               lhs=float(a @ lims), rhs=float(a @ bases) + surf,
                               surface_term=surf, cauchy_gap=gap))
        for b_idx, b in enumerate(frame.orthogonal_basis):
            rows.append(FormulaRow(label=eta.label or "eta", line=f"b{b_idx}",
                                   lhs=float(b @ lims), rhs=float(b @ bases),
                                   surface_term=0.0, cauchy_gap=gap))
    scale = max(max(abs(r.lhs), abs(r.rhs)) for r in rows)
    return FormulaReport(rows=tuple(rows), scale=scale)


@dataclass(frozen=True)
class ConstancyVerdict:
    passed: bool
    max_surface_integral: float
    max_variance: float
    jump_location: Optional[tuple[float, float, float, float]]
    jump_size: float

    def as_dict(self) -> dict:
        return {"passed": self.passed,
                "max_surface_integral": self.max_surface_integral,
                "max_variance": self.max_variance,
                "jump_location": list(self.jump_location) if self.jump_location else None,
                "jump_size": self.jump_size}


def density_constancy_check(dm: DefectMeasure, battery: Sequence[TestForm],
                            surface_tol: float, variance_tol: float,
                            order: int = DEFAULT_ORDER) -> ConstancyVerdict:
    """PASS when every surface integral and the sample variance are small.

    An empty support passes vacuously.  The largest adjacent-sample jump is
    localized in ambient coordinates when the verdict fails.
    """
    if dm.is_empty():
        return ConstancyVerdict(True, 0.0, 0.0, None, 0.0)
    max_surf = max(abs(surface_integral(dm, eta, order=order)) for eta in battery)
    max_var = max(d.variance() for d in dm.densities)
    passed = max_surf <= surface_tol and max_var <= variance_tol

    jump_loc = None
    jump = 0.0
    for patch, dens in zip(dm.patches, dm.densities):
        v = dens.values
        for axis in (0, 1):
            d = np.abs(np.diff(v, axis=axis))
            if d.size == 0:
                continue
            local = float(d.max())
            if local > jump:
                jump = local
                i, j = np.unravel_index(int(np.argmax(d)), d.shape)
                if axis == 0:
                    s1 = 0.5 * (dens.s1[i] + dens.s1[i + 1])
                    s2 = dens.s2[j]
                else:
                    s1 = dens.s1[i]
                    s2 = 0.5 * (dens.s2[j] + dens.s2[j + 1])
                pt = patch.embed(np.array(s1), np.array(s2))
                jump_loc = tuple(float(c) for c in np.atleast_2d(pt)[0])
    return ConstancyVerdict(passed, max_surf, max_var, jump_loc, jump)
