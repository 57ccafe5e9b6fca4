"""Discrete differential forms on tensor grids and the weak pairing.

Forms store one coefficient field per strictly increasing multi-index.
Orientation is fixed once and for all: dx^1 ^ ... ^ dx^m is positive.
The pairing integrate(d eta ^ pullback(u, Omega)) is the only closedness
probe; pointwise discrete derivatives of smooth pullbacks are always small
and say nothing about singular-set flux.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _stencils
from .errors import GridError, QuadratureDomainError, ValidationError
from .fields import GridSpec, JacobianField, MapField, jacobian

SKEW_TOL = 1e-12


def merge_sign(left: tuple[int, ...], right: tuple[int, ...]) -> int:
    """Sign of sorting the concatenation of two increasing index tuples."""
    inversions = sum(1 for a in left for b in right if a > b)
    return -1 if inversions % 2 else 1


def insertion_sign(i: int, idx: tuple[int, ...]) -> int:
    """Sign of inserting axis i in front of an increasing tuple."""
    return merge_sign((i,), idx)


class KForm:
    """Degree-k form with grid-sampled coefficients on increasing indices."""

    def __init__(self, grid: GridSpec, degree: int,
                 coeffs: dict[tuple[int, ...], np.ndarray] | None = None):
        if not 0 <= degree <= grid.m:
            raise ValidationError(f"degree must lie in [0, {grid.m}], got {degree}")
        self.grid = grid
        self.degree = degree
        self.coeffs: dict[tuple[int, ...], np.ndarray] = {}
        for idx, arr in (coeffs or {}).items():
            self.set_component(idx, arr)

    def set_component(self, idx: Sequence[int], arr: np.ndarray) -> None:
        idx = tuple(int(i) for i in idx)
        if len(idx) != self.degree:
            raise ValidationError(f"index {idx} has wrong length for degree {self.degree}")
        if any(not 0 <= i < self.grid.m for i in idx):
            raise ValidationError(f"index {idx} out of range for m={self.grid.m}")
        if list(idx) != sorted(set(idx)):
            raise ValidationError(f"only strictly increasing indices are stored, got {idx}")
        arr = np.asarray(arr, dtype=float)
        if arr.shape != self.grid.res:
            raise ValidationError(f"coefficient shape {arr.shape} != grid {self.grid.res}")
        if not np.isfinite(arr).all():
            raise ValidationError(f"coefficient {idx} contains non-finite values")
        self.coeffs[idx] = arr

    def component(self, idx: Sequence[int]) -> np.ndarray:
        """Coefficient on an arbitrary index tuple, permutation sign applied."""
        idx = tuple(int(i) for i in idx)
        if len(set(idx)) != len(idx):
            return np.zeros(self.grid.res)
        order = tuple(np.argsort(idx))
        sorted_idx = tuple(sorted(idx))
        perm_sign = _permutation_sign(order)
        base = self.coeffs.get(sorted_idx)
        if base is None:
            return np.zeros(self.grid.res)
        return perm_sign * base

    def indices(self):
        return sorted(self.coeffs.keys())

    def max_abs(self) -> float:
        if not self.coeffs:
            return 0.0
        return max(float(np.abs(a).max()) for a in self.coeffs.values())

    def scaled(self, factor: float) -> "KForm":
        return KForm(self.grid, self.degree,
                     {i: factor * a for i, a in self.coeffs.items()})

    def __add__(self, other: "KForm") -> "KForm":
        if other.degree != self.degree or other.grid is not self.grid and other.grid != self.grid:
            raise ValidationError("can only add forms of equal degree on one grid")
        out = {i: a.copy() for i, a in self.coeffs.items()}
        for i, a in other.coeffs.items():
            out[i] = out[i] + a if i in out else a.copy()
        return KForm(self.grid, self.degree, out)


def _permutation_sign(perm: tuple[int, ...]) -> int:
    sign = 1
    seen = [False] * len(perm)
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@dataclass(frozen=True)
class TestForm:
    """Compactly supported (m-3)-form with a declared boundary margin.

    Analytic coefficient and gradient callables, when present, allow
    off-grid evaluation (radial-coordinate quadrature, restriction to
    surfaces).  component_functions maps an increasing index tuple to a
    pair (value(points), gradient(points)) with gradient shape (..., m).
    """

    form: KForm
    margin: float
    component_functions: Optional[dict] = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        grid = self.form.grid
        if self.form.degree != grid.m - 3:
            raise ValidationError(
                f"test form degree must be m-3={grid.m - 3}, got {self.form.degree}")
        if self.margin <= 0:
            raise ValidationError("support margin must be positive")
        for axis in range(grid.m):
            width = int(np.floor(self.margin / grid.h[axis]))
            if width < 1:
                raise ValidationError("margin thinner than one grid spacing")
            for idx, arr in self.form.coeffs.items():
                sl_lo = [slice(None)] * grid.m
                sl_lo[axis] = slice(0, width)
                sl_hi = [slice(None)] * grid.m
                sl_hi[axis] = slice(grid.res[axis] - width, grid.res[axis])
                if np.abs(arr[tuple(sl_lo)]).max() > 0 or np.abs(arr[tuple(sl_hi)]).max() > 0:
                    raise ValidationError(
                        f"component {idx} is not zero within the declared margin")

    @property
    def grid(self) -> GridSpec:
        return self.form.grid

    def is_analytic(self) -> bool:
        return self.component_functions is not None

    def derivative_components(self, points: np.ndarray) -> dict[tuple[int, ...], np.ndarray]:
        """Analytic components of d eta at arbitrary points.

        For 1-form eta: d eta[(l, j)] = d_l f_j - d_j f_l on l < j.
        For 0-form eta: d eta[(l,)] = d_l f.
        """
        if not self.is_analytic():
            raise ValidationError("test form carries no analytic evaluators")
        m = self.grid.m
        grads = {}
        for idx, (_, grad) in self.component_functions.items():
            grads[idx] = np.asarray(grad(points))
        out: dict[tuple[int, ...], np.ndarray] = {}
        if self.form.degree == 0:
            g = grads[()]
            for axis in range(m):
                out[(axis,)] = g[..., axis]
            return out
        for l_j in itertools.combinations(range(m), 2):
            l, j = l_j
            total = np.zeros(points.shape[:-1])
            if (j,) in grads:
                total = total + grads[(j,)][..., l]
            if (l,) in grads:
                total = total - grads[(l,)][..., j]
            out[l_j] = total
        return out

    def restricted_to_axis(self, t: np.ndarray) -> np.ndarray:
        """Pullback density of the 1-form to the line x=(0,0,0,t): f_4(0,t)."""
        if self.grid.m != 4 or not self.is_analytic():
            raise ValidationError("axis restriction needs an analytic 1-form on m=4")
        pts = np.zeros(t.shape + (4,))
        pts[..., 3] = t
        comp = self.component_functions.get((3,))
        if comp is None:
            return np.zeros(t.shape)
        return np.asarray(comp[0](pts))


class TargetTwoForm:
    """A 2-form on the target: constant skew matrix or analytic coefficients."""

    def __init__(self, matrix: np.ndarray | None = None,
                 evaluator: Callable[[np.ndarray], np.ndarray] | None = None,
                 dim: int | None = None, label: str = ""):
        if (matrix is None) == (evaluator is None):
            raise ValidationError("provide exactly one of matrix or evaluator")
        self.label = label
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValidationError("constant two-form must be a square matrix")
            if np.abs(matrix + matrix.T).max() > SKEW_TOL:
                raise ValidationError("constant two-form must be skew-symmetric")
            self.matrix = matrix
            self.evaluator = None
            self.dim = matrix.shape[0]
        else:
            if dim is None:
                raise ValidationError("analytic two-form needs an explicit dimension")
            self.matrix = None
            self.evaluator = evaluator
            self.dim = int(dim)

    def is_constant(self) -> bool:
        return self.matrix is not None

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        """Coefficient matrices at target points y (..., dim) -> (..., dim, dim)."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise ValidationError(f"points have dim {y.shape[-1]}, form has {self.dim}")
        if self.matrix is not None:
            return np.broadcast_to(self.matrix, y.shape[:-1] + (self.dim, self.dim))
        out = np.asarray(self.evaluator(y), dtype=float)
        if out.shape != y.shape[:-1] + (self.dim, self.dim):
            raise ValidationError("two-form evaluator returned wrong shape")
        flat = out.reshape(-1, self.dim, self.dim)
        probe = flat[:: max(1, flat.shape[0] // 16)]
        if np.abs(probe + np.swapaxes(probe, -1, -2)).max() > SKEW_TOL:
            raise ValidationError("two-form evaluator is not skew-symmetric")
        return out


def structure_two_forms(triple=None, n: int = 1) -> list[TargetTwoForm]:
    """The three constant two-forms of a structure triple on R^{4n}."""
    from .algebra import block_structure, standard_triple

    triple = standard_triple() if triple is None else triple
    mats = block_structure(triple, n).matrices
    return [TargetTwoForm(matrix=m.astype(float), label=f"structure-{k + 1}")
            for k, m in enumerate(mats)]


def exterior_derivative(w: KForm, order: int = 2) -> KForm:
    """Discrete exterior derivative, coefficient-wise stencil differencing."""
    if w.degree >= w.grid.m:
        raise ValidationError("cannot raise degree above the domain dimension")
    out = KForm(w.grid, w.degree + 1)
    acc: dict[tuple[int, ...], np.ndarray] = {}
    h = w.grid.h
    for idx, arr in w.coeffs.items():
        for axis in range(w.grid.m):
            if axis in idx:
                continue
            deriv = _stencils.apply_derivative(arr, axis, h[axis], order)
            sign = insertion_sign(axis, idx)
            key = tuple(sorted(idx + (axis,)))
            acc[key] = acc.get(key, 0) + sign * deriv
    for key, arr in acc.items():
        out.set_component(key, arr)
    return out


def wedge(w1: KForm, w2: KForm) -> KForm:
    """Pointwise wedge product with shuffle signs."""
    if w1.grid != w2.grid:
        raise ValidationError("wedge operands must share a grid")
    if w1.degree + w2.degree > w1.grid.m:
        raise ValidationError("wedge degree exceeds the domain dimension")
    out = KForm(w1.grid, w1.degree + w2.degree)
    acc: dict[tuple[int, ...], np.ndarray] = {}
    for i1, a1 in w1.coeffs.items():
        for i2, a2 in w2.coeffs.items():
            if set(i1) & set(i2):
                continue
            sign = merge_sign(i1, i2)
            key = tuple(sorted(i1 + i2))
            acc[key] = acc.get(key, 0) + sign * (a1 * a2)
    for key, arr in acc.items():
        out.set_component(key, arr)
    return out


def integrate_top_form(w: KForm) -> float:
    """Tensor-product composite Simpson integral of a top-degree form."""
    if w.degree != w.grid.m:
        raise ValidationError("only top-degree forms can be integrated")
    key = tuple(range(w.grid.m))
    arr = w.coeffs.get(key)
    if arr is None:
        return 0.0
    out = arr
    for axis in range(w.grid.m - 1, -1, -1):
        weights = _stencils.quadrature_weights(w.grid.res[axis], w.grid.h[axis])
        out = np.tensordot(out, weights, axes=(axis, 0))
    return float(out)


def pullback_two_form(u: MapField, omega: TargetTwoForm,
                      du: JacobianField | None = None, order: int = 2) -> KForm:
    """Pull a target 2-form back through a sampled map.

    Coefficient on (i < j) is (d_i u)^T Omega(u) (d_j u).
    """
    if omega.dim != u.target_dim:
        raise ValidationError(
            f"two-form dimension {omega.dim} != map target dimension {u.target_dim}")
    du = jacobian(u, order) if du is None else du
    vals = du.values
    out = KForm(u.grid, 2)
    if omega.is_constant():
        full = np.einsum("...si,st,...tj->...ij", vals, omega.matrix, vals)
    else:
        mats = omega.evaluate(u.values)
        full = np.einsum("...si,...st,...tj->...ij", vals, mats, vals)
    for i, j in itertools.combinations(range(u.grid.m), 2):
        out.set_component((i, j), full[..., i, j])
    return out


def pairing(eta: TestForm, u: MapField, omega: TargetTwoForm,
            du: JacobianField | None = None, order: int = 2) -> float:
    """The weak-closedness pairing integrate(d eta ^ pullback(u, Omega))."""
    return pairing_with_form(eta, pullback_two_form(u, omega, du=du, order=order), order=order)


def pairing_with_form(eta: TestForm, flux: KForm, order: int = 2) -> float:
    """Pairing against a precomputed pullback/flux 2-form."""
    if eta.grid != flux.grid:
        raise ValidationError("test form and flux must share a grid")
    if not flux.coeffs:
        return 0.0
    deta = exterior_derivative(eta.form, order=order)
    return integrate_top_form(wedge(deta, flux))


def closedness_defect(u: MapField, omegas: Sequence[TargetTwoForm],
                      battery: Sequence[TestForm], du: JacobianField | None = None,
                      order: int = 2) -> list[float]:
    """Per-form max |pairing| over a normalized battery of test forms."""
    if not battery:
        raise ValidationError("test-form battery must be nonempty")
    for eta in battery:
        dmax = exterior_derivative(eta.form, order=order).max_abs()
        if abs(dmax - 1.0) > 1e-2:
            raise ValidationError(
                "battery forms must be normalized to max |d eta| = 1 "
                f"(got {dmax:.3e}); build them with bump_battery(normalize=True)")
    du = jacobian(u, order) if du is None else du
    out = []
    for omega in omegas:
        flux = pullback_two_form(u, omega, du=du)
        out.append(max(abs(pairing_with_form(eta, flux, order=order)) for eta in battery))
    return out


# ---------------------------------------------------------------------------
# bump test forms
# ---------------------------------------------------------------------------

def bump(t: np.ndarray) -> np.ndarray:
    """The smooth bump exp(1/((t-1)(t+1))) on (-1, 1), zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 / ((ti - 1.0) * (ti + 1.0)))
    return out


def bump_derivative(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    q = ti * ti - 1.0
    out[inside] = np.exp(1.0 / q) * (-2.0 * ti / (q * q))
    return out


def _transition(u: np.ndarray) -> np.ndarray:
    """Smooth step from 1 at u=0 to 0 at u=1, flat to all orders at both ends."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        g1 = np.where(u < 1.0, np.exp(-1.0 / np.maximum(1.0 - u, 1e-300)), 0.0)
        g0 = np.where(u > 0.0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
    return g1 / (g0 + g1)


def _transition_derivative(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = (u > 0.0) & (u < 1.0)
    ui = u[inside]
    g1 = np.exp(-1.0 / (1.0 - ui))
    g0 = np.exp(-1.0 / ui)
    dg1 = -g1 / (1.0 - ui) ** 2
    dg0 = g0 / ui ** 2
    denom = (g0 + g1) ** 2
    out[inside] = (dg1 * g0 - g1 * dg0) / denom
    return out


def plateau(t: np.ndarray, core: float) -> np.ndarray:
    """Flat-top profile: 1 on |t| <= core, smooth decay to 0 at |t| = 1."""
    t = np.abs(np.asarray(t, dtype=float))
    return _transition((t - core) / (1.0 - core))


def plateau_derivative(t: np.ndarray, core: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.sign(t) * _transition_derivative((np.abs(t) - core) / (1.0 - core)) / (1.0 - core)


def _axis_profiles(profiles, plateau_core: float, m: int):
    if profiles is None:
        profiles = ("bump",) * m
    fns = []
    for name in profiles:
        if name == "bump":
            fns.append((bump, bump_derivative))
        elif name == "plateau":
            fns.append((lambda t, c=plateau_core: plateau(t, c),
                        lambda t, c=plateau_core: plateau_derivative(t, c)))
        else:
            raise ValidationError(f"unknown axis profile '{name}'")
    return fns


def _product_bump(center: np.ndarray, scale: np.ndarray,
                  profiles=None, plateau_core: float = 0.75):
    """Value and gradient callables for a per-axis product profile.

    Each axis carries either the standard bump or a flat-top plateau,
    evaluated at (x_a - c_a) / s_a.
    """
    center = np.asarray(center, dtype=float)
    scale = np.asarray(scale, dtype=float)
    fns = _axis_profiles(profiles, plateau_core, len(center))

    def value(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        t = (pts - center) / scale
        out = np.ones(pts.shape[:-1])
        for a, (f, _) in enumerate(fns):
            out = out * f(t[..., a])
        return out

    def gradient(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        t = (pts - center) / scale
        vals = [f(t[..., a]) for a, (f, _) in enumerate(fns)]
        grads = np.empty(pts.shape)
        m = pts.shape[-1]
        for a, (_, df) in enumerate(fns):
            others = np.ones(pts.shape[:-1])
            for b in range(m):
                if b != a:
                    others = others * vals[b]
            grads[..., a] = df(t[..., a]) / scale[a] * others
        return grads

    return value, gradient


@dataclass(frozen=True)
class BatteryEntry:
    component: tuple[int, ...]
    center: tuple[float, ...]
    scale: tuple[float, ...]
    profiles: tuple[str, ...] | None = None   # per-axis: "bump" or "plateau"
    plateau_core: float = 0.75

    def as_dict(self) -> dict:
        out = {"component": list(self.component), "center": list(self.center),
               "scale": list(self.scale)}
        if self.profiles is not None:
            out["profiles"] = list(self.profiles)
            out["plateau_core"] = self.plateau_core
        return out


def default_battery_entries(grid: GridSpec, margin: float,
                            scales: Sequence[float] = (0.85, 0.6, 0.4),
                            center: Sequence[float] | None = None) -> list[BatteryEntry]:
    """All (m-3)-form coordinate directions at several support scales.

    Scales are fractions of the largest centered box that keeps the
    declared margin clear.
    """
    m = grid.m
    if center is None:
        center = [(a + b) / 2.0 for a, b in zip(grid.lo, grid.hi)]
    center = tuple(float(c) for c in center)
    max_half = [min(c - a - margin, b - c - margin)
                for a, b, c in zip(grid.lo, grid.hi, center)]
    if min(max_half) <= 0:
        raise ValidationError("margin leaves no room for a bump support")
    comps: list[tuple[int, ...]] = [()] if m == 3 else [(i,) for i in range(4)]
    entries = []
    for s in scales:
        half = tuple(s * v for v in max_half)
        for comp in comps:
            entries.append(BatteryEntry(component=comp, center=center, scale=half))
    return entries


def build_test_form(grid: GridSpec, entry: BatteryEntry, margin: float,
                    normalize: bool = True, order: int = 2,
                    label: str = "") -> TestForm:
    """Materialize one battery entry as a (normalized) TestForm."""
    value, gradient = _product_bump(np.array(entry.center), np.array(entry.scale),
                                    profiles=entry.profiles,
                                    plateau_core=entry.plateau_core)
    pts = grid.nodes()
    form = KForm(grid, grid.m - 3)
    form.set_component(entry.component, value(pts))
    factor = 1.0
    if normalize:
        dmax = exterior_derivative(form, order=order).max_abs()
        if dmax == 0.0:
            raise ValidationError("battery entry produced an exact-zero form")
        factor = 1.0 / dmax
        form = form.scaled(factor)
    scaled_value = (lambda p, f=value, c=factor: c * f(p))
    scaled_grad = (lambda p, g=gradient, c=factor: c * g(p))
    funcs = {entry.component: (scaled_value, scaled_grad)}
    return TestForm(form=form, margin=margin, component_functions=funcs,
                    label=label or f"bump{entry.component}s{entry.scale[0]:.3g}")


def bump_battery(grid: GridSpec, margin: float,
                 scales: Sequence[float] = (0.85, 0.6, 0.4),
                 center: Sequence[float] | None = None,
                 normalize: bool = True, order: int = 2) -> list[TestForm]:
    entries = default_battery_entries(grid, margin, scales=scales, center=center)
    return [build_test_form(grid, e, margin, normalize=normalize, order=order,
                            label=f"eta{k:02d}")
            for k, e in enumerate(entries)]


def battery_to_json(entries: Sequence[BatteryEntry], margin: float) -> str:
    return json.dumps({"margin": margin,
                       "entries": [e.as_dict() for e in entries]}, indent=2)


def battery_from_json(text: str, grid: GridSpec, normalize: bool = True,
                      order: int = 2) -> list[TestForm]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"battery file is not valid JSON: {exc}") from exc
    margin = float(payload["margin"])
    out = []
    for k, d in enumerate(payload["entries"]):
        entry = BatteryEntry(component=tuple(d["component"]),
                             center=tuple(d["center"]), scale=tuple(d["scale"]),
                             profiles=tuple(d["profiles"]) if "profiles" in d else None,
                             plateau_core=float(d.get("plateau_core", 0.75)))
        out.append(build_test_form(grid, entry, margin, normalize=normalize,
                                   order=order, label=f"eta{k:02d}"))
    return out


def pairings_to_csv(path, rows: Sequence[tuple[str, int, float]]) -> None:
    """Write (battery id, alpha, value) rows to CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["battery_id", "alpha", "value"])
        for name, alpha, value in rows:
            writer.writerow([name, alpha, repr(float(value))])
