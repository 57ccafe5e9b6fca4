"""Manufactured concentration sequences for exercising the pipeline.

Members are (energy, flux) field pairs: a smooth base map plus a
normalized concentration layer squeezed onto a coordinate 2-plane.  The
layer profile is the polynomial bump (1 - t^2)^4, whose radial mass
constant is exactly pi/5, so every member carries the same area density.
Injecting the layer with channel weights w and into the energy with the
same amplitude realizes data satisfying the concentration formula with
density theta and direction w.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .algebra import FrameRotation
from .blowup import (BlowupConfig, PlanePatch, SequenceMember, SequenceSource)
from .errors import ValidationError
from .fields import GridSpec
from .forms import BatteryEntry, KForm, TestForm, build_test_form

PROFILE_MASS = np.pi / 5.0  # 2 pi * int_0^1 (1 - t^2)^4 t dt

VARIANTS = ("default", "rotated", "constant", "step", "strong", "tiny", "twopatch")

# fixed frame rotation for the rotated variant; second row is the ground
# truth direction and has its largest entry positive
_ROTATION = FrameRotation(np.array([
    [-0.8, 0.6, 0.0],
    [0.48, 0.64, 0.6],
    [0.36, 0.48, -0.8],
]))


def profile(t: np.ndarray) -> np.ndarray:
    """Compactly supported radial profile (1 - t^2)^4 on (-1, 1)."""
    t = np.asarray(t, dtype=float)
    q = 1.0 - t * t
    return np.where(np.abs(t) < 1.0, q ** 4, 0.0)


def layer_field(grid: GridSpec, planes: Sequence[PlanePatch], width: float,
                theta_fns: Sequence[Callable]) -> np.ndarray:
    """Concentration layer of the given normal width around each plane.

    Area density at in-plane coordinates (s1, s2) is theta_fn(s1, s2); the
    profile is normalized so the continuum transverse mass is exact.
    """
    nodes = grid.nodes()
    out = np.zeros(grid.res)
    for plane, theta_fn in zip(planes, theta_fns):
        rel = nodes - plane.point
        q1 = rel @ plane.frame[0]
        q2 = rel @ plane.frame[1]
        tang = q1[..., None] * plane.frame[0] + q2[..., None] * plane.frame[1]
        dn = np.linalg.norm(rel - tang, axis=-1)
        radial = profile(dn / width) / (PROFILE_MASS * width * width)
        out = out + theta_fn(q1, q2) * radial
    return out


@dataclass(frozen=True)
class ManufacturedData:
    seq: SequenceSource
    cfg: BlowupConfig
    battery: list[TestForm]
    battery_entries: list[BatteryEntry]
    battery_margin: float
    truth: dict


def _swap_base(grid: GridSpec) -> tuple[np.ndarray, list[KForm]]:
    """Base fields of the coordinate-swap solution: e = 2, flux2 = dx1^dx2."""
    e = np.full(grid.res, 2.0)
    p1 = KForm(grid, 2)
    p2 = KForm(grid, 2)
    p2.set_component((0, 1), np.ones(grid.res))
    p3 = KForm(grid, 2)
    return e, [p1, p2, p3]


def _member(grid: GridSpec, k: int, layer: np.ndarray,
            weights: np.ndarray) -> SequenceMember:
    e, fluxes = _swap_base(grid)
    e = e + layer
    for alpha in range(3):
        if abs(weights[alpha]) > 0:
            extra = weights[alpha] * layer
            if (0, 1) in fluxes[alpha].coeffs:
                fluxes[alpha].set_component((0, 1), fluxes[alpha].coeffs[(0, 1)] + extra)
            else:
                fluxes[alpha].set_component((0, 1), extra)
    return SequenceMember(index=k, energy=e, fluxes=tuple(fluxes))


def _battery(grid: GridSpec, window: float, order: int,
             flat_radius: float) -> tuple[list[TestForm], list[BatteryEntry], float]:
    """Battery for the pipeline: plateau profiles across the normal plane.

    The two normal axes carry a flat-top profile whose core square contains
    the narrowest layer, so the finite-width pairing already equals its
    concentration limit there; the tangential axes vary over three bump
    scales.
    """
    s_n = 0.95 * window
    core = min(flat_radius / s_n + 0.1, 0.85)
    if core * s_n < flat_radius:
        raise ValidationError("window too small to keep the layer inside the "
                              "plateau core")
    tangential = (0.95 * window, 0.7 * window, 0.48 * window)
    margin = (grid.hi[0] - grid.lo[0]) / 2.0 - max(s_n, max(tangential))
    entries = []
    for s_t in tangential:
        for comp in range(4):
            entries.append(BatteryEntry(component=(comp,),
                                        center=(0.0, 0.0, 0.0, 0.0),
                                        scale=(s_n, s_n, s_t, s_t),
                                        profiles=("plateau", "plateau", "bump", "bump"),
                                        plateau_core=core))
    battery = [build_test_form(grid, e, margin, normalize=True, order=order,
                               label=f"eta{k:02d}") for k, e in enumerate(entries)]
    return battery, entries, margin


def _coordinate_plane(offset: tuple[float, float], window: float) -> PlanePatch:
    point = np.array([offset[0], offset[1], 0.0, 0.0])
    frame = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    return PlanePatch(point=point, frame=frame,
                      bounds=((-window, window), (-window, window)))


def build_manufactured(variant: str, res: int = 33, theta0: float = 1.0,
                       order: int = 4) -> ManufacturedData:
    """Construct one named sequence variant on the centered unit box."""
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant '{variant}'; pick from {VARIANTS}")
    grid = GridSpec(4, (-1.0,), (1.0,), (res,))
    h = max(grid.h)
    radii = (9.0 * h, 7.0 * h, 5.0 * h)
    margin_nodes = int(np.ceil((radii[0] + 0.5 * h) / h))
    window = 1.0 - margin_nodes * h
    ks = (3, 4, 5)
    widths = [1.0 / k for k in ks]

    battery, entries, battery_margin = _battery(grid, window, order)

    base_cfg = dict(
        eps0=0.0,
        lambda_cap=80.0,
        radii=radii,
        tail_start=0,
        theta_cap=None,
        slab_halfwidth=2.0 * h,
        slab_normal_extent=0.45,
        sample_spacing=2.0 * h,
        cauchy_tol=0.25,
        defect_floor=1e-9,
    )

    gamma = 0.3
    direction = np.array([0.0, 1.0, 0.0])
    planes = [_coordinate_plane((0.0, 0.0), window)]
    # eps0 splits the on-plane ratio (base + layer) from the off-plane base
    # ratio 2 pi^2 r_min^2; see the detection notes in the README
    base_ratio = 2.0 * np.pi ** 2 * radii[-1] ** 2
    eps0_default = base_ratio + 0.55 * np.pi * theta0

    if variant in ("default", "rotated"):
        theta_fns = [lambda q1, q2: theta0 * (1.0 + gamma * q1)]
        weights = direction if variant == "default" else _ROTATION.a[1]
        truth_theta = lambda s1, s2: theta0 * (1.0 + gamma * s1)
        cfg = BlowupConfig(**{**base_cfg, "eps0": base_ratio + 0.45 * np.pi * theta0 * (1 - gamma)})
        truth_dir = direction if variant == "default" else _ROTATION.a[1].copy()
    elif variant == "constant":
        theta_fns = [lambda q1, q2: theta0 * np.ones_like(q1)]
        weights = direction
        truth_theta = lambda s1, s2: theta0 * np.ones_like(np.asarray(s1, dtype=float))
        cfg = BlowupConfig(**{**base_cfg, "eps0": eps0_default})
        truth_dir = direction
    elif variant == "step":
        jump = 0.5 * theta0
        theta_fns = [lambda q1, q2: theta0 + jump * (q1 > 0)]
        weights = direction
        truth_theta = lambda s1, s2: theta0 + jump * (np.asarray(s1) > 0)
        cfg = BlowupConfig(**{**base_cfg, "eps0": eps0_default})
        truth_dir = direction
    elif variant == "tiny":
        cfg = BlowupConfig(**{**base_cfg, "eps0": eps0_default})
        small = cfg.eps0 / (4.0 * np.pi)
        theta_fns = [lambda q1, q2: small * np.ones_like(q1)]
        weights = direction
        truth_theta = lambda s1, s2: small * np.ones_like(np.asarray(s1, dtype=float))
        truth_dir = direction
    elif variant == "twopatch":
        # planes 0.6 apart with a 0.25 slab reach: slabs never touch the
        # neighbor layer (0.25 + max width 1/3 < 0.6)
        planes = [_coordinate_plane((-0.3, 0.0), window),
                  _coordinate_plane((0.3, 0.0), window)]
        theta_fns = [lambda q1, q2: theta0 * np.ones_like(q1),
                     lambda q1, q2: 2.0 * theta0 * np.ones_like(q1)]
        weights = direction
        truth_theta = None
        cfg = BlowupConfig(**{**base_cfg, "eps0": eps0_default,
                              "slab_normal_extent": 0.25})
        truth_dir = direction
    else:  # strong
        theta_fns = []
        weights = direction
        truth_theta = None
        cfg = BlowupConfig(**{**base_cfg, "eps0": eps0_default})
        truth_dir = None

    members = []
    if variant == "strong":
        nodes = grid.nodes()
        wobble = np.prod(np.cos(0.5 * np.pi * nodes), axis=-1) ** 2
        for k in ks:
            e, fluxes = _swap_base(grid)
            e = e + wobble / k
            fluxes[1].set_component((0, 1), fluxes[1].coeffs[(0, 1)] + wobble / (2.0 * k))
            members.append(SequenceMember(index=k, energy=e, fluxes=tuple(fluxes)))
    else:
        for k, width in zip(ks, widths):
            layer = layer_field(grid, planes, width, theta_fns)
            members.append(_member(grid, k, layer, weights))

    e_lim, fluxes_lim = _swap_base(grid)
    limit = SequenceMember(index=ks[-1] + 1, energy=e_lim, fluxes=tuple(fluxes_lim))
    seq = SequenceSource.from_fields(grid, members, limit)
    cfg = cfg.validated(grid)

    truth = {
        "variant": variant,
        "planes": [{"point": p.point.tolist(), "frame": p.frame.tolist()} for p in planes],
        "theta0": theta0,
        "gamma": gamma if variant in ("default", "rotated") else 0.0,
        "direction": truth_dir.tolist() if truth_dir is not None else None,
        "window": window,
        "rotation": _ROTATION.a.tolist() if variant == "rotated" else None,
        "theta_fn": truth_theta,
    }
    return ManufacturedData(seq=seq, cfg=cfg, battery=battery,
                            battery_entries=entries, battery_margin=battery_margin,
                            truth=truth)


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------

def _save_form(path: Path, form: KForm) -> None:
    arrays = {"_".join(str(i) for i in idx): arr for idx, arr in form.coeffs.items()}
    np.savez_compressed(path, degree=np.array(form.degree), **arrays)


def _load_form(path: Path, grid: GridSpec) -> KForm:
    with np.load(path) as data:
        degree = int(data["degree"])
        form = KForm(grid, degree)
        for key in data.files:
            if key == "degree":
                continue
            idx = tuple(int(p) for p in key.split("_"))
            form.set_component(idx, data[key])
    return form


def save_manifest(data_dir: Path, seq: SequenceSource) -> Path:
    """Write a sequence as manifest JSON plus field files."""
    data_dir = Path(data_dir)
    fields_dir = data_dir / "fields"
    fields_dir.mkdir(parents=True, exist_ok=True)

    def dump_member(member: SequenceMember, tag: str) -> dict:
        e_path = fields_dir / f"{tag}_e.npy"
        np.save(e_path, member.energy)
        entry = {"k": member.index, "e": str(e_path.relative_to(data_dir))}
        for alpha in range(3):
            p_path = fields_dir / f"{tag}_P{alpha + 1}.npz"
            _save_form(p_path, member.fluxes[alpha])
            entry[f"P{alpha + 1}"] = str(p_path.relative_to(data_dir))
        return entry

    manifest = {
        "grid": seq.grid.as_dict(),
        "members": [dump_member(m, f"k{m.index:03d}") for m in seq.members],
        "limit": dump_member(seq.limit, "limit"),
    }
    path = data_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_manifest(path: Path) -> SequenceSource:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest is not valid JSON: {exc}") from exc
    base = path.parent
    grid = GridSpec.from_dict(manifest["grid"])

    def read_member(entry: dict) -> SequenceMember:
        e = np.load(base / entry["e"])
        fluxes = tuple(_load_form(base / entry[f"P{alpha + 1}"], grid)
                       for alpha in range(3))
        return SequenceMember(index=int(entry["k"]), energy=e, fluxes=fluxes)

    members = [read_member(e) for e in manifest["members"]]
    limit = read_member(manifest["limit"])
    return SequenceSource.from_fields(grid, members, limit)


def config_to_json(cfg: BlowupConfig) -> str:
    payload = {
        "eps0": cfg.eps0, "lambda_cap": cfg.lambda_cap, "radii": list(cfg.radii),
        "tail_start": cfg.tail_start, "theta_cap": cfg.theta_cap,
        "slab_halfwidth": cfg.slab_halfwidth,
        "slab_normal_extent": cfg.slab_normal_extent,
        "sample_spacing": cfg.sample_spacing, "sample_inset": cfg.sample_inset,
        "cauchy_tol": cfg.cauchy_tol, "defect_floor": cfg.defect_floor,
        "min_cluster": cfg.min_cluster,
    }
    return json.dumps(payload, indent=2)


def config_from_json(text: str) -> BlowupConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    payload["radii"] = tuple(payload["radii"])
    return BlowupConfig(**payload)
