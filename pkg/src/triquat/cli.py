"""Command-line entry point.

Subcommands: algebra-verify, map-check, sphere-check, prop-yn,
blowup-report, make-blowup-data.  Exit codes: 0 all checks pass, 1 any
check fails, 2 configuration or I/O trouble.  Reports land in --out
(default: $TRIQUAT_OUTPUT_DIR or ./triquat-reports).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, algebra, blowup, fields, forms, io, manufactured, sphere
from ._kernels import BACKEND
from .errors import ConfigError, TriquatError, ValidationError
from .report import Report, digest


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("TRIQUAT_OUTPUT_DIR")
    return Path(env) if env else Path("triquat-reports")


def _apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace,
                       argv: list[str]) -> argparse.Namespace:
    """Fill settings from --config JSON; explicit flags win."""
    if not getattr(args, "config", None):
        return args
    try:
        payload = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a JSON object")
    given = {a.split("=")[0].lstrip("-").replace("-", "_")
             for a in argv if a.startswith("--")}
    for key, value in payload.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ConfigError(f"config key '{key}' is not a known setting")
        if dest in given:
            continue
        setattr(args, dest, value)
    return args


def _parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# algebra-verify
# ---------------------------------------------------------------------------

def run_algebra_verify(args) -> Report:
    rep = Report(command="algebra-verify")
    if args.triple:
        try:
            text = Path(args.triple).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read triple file: {exc}") from exc
        triple, rotation = algebra.triple_from_json(text)
    else:
        triple, rotation = algebra.standard_triple(), None

    rel = algebra.verify_quaternion_relations(triple)
    rep.add("quaternion-relations", rel.as_dict(),
            tolerance=0.0 if triple.is_exact() else 1e-12,
            passed=rel.holds(0.0 if triple.is_exact() else 1e-12),
            inputs_digest=digest(*[m for m in triple.matrices]))

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    worst_round = 0.0
    for _ in range(args.rotations):
        rot = algebra.random_rotation(rng)
        rotated = algebra.rotate_triple(rot, triple)
        worst = max(worst, algebra.verify_quaternion_relations(rotated).max_deviation())
        back = algebra.rotate_triple(algebra.FrameRotation(rot.a.T), rotated)
        worst_round = max(worst_round, max(np.abs(b - m.astype(float)).max()
                                           for b, m in zip(back.matrices, triple.matrices)))
    rep.add("rotation-equivariance", {"count": args.rotations, "max_deviation": worst},
            tolerance=1e-12, passed=worst <= 1e-12, inputs_digest=digest(args.seed))
    rep.add("rotation-roundtrip", {"max_deviation": worst_round},
            tolerance=1e-12, passed=worst_round <= 1e-12, inputs_digest=digest(args.seed))

    block_dev = 0.0
    for n in (1, 2, 3):
        bs = algebra.block_structure(triple, n)
        eye = np.eye(4 * n)
        block_dev = max(block_dev,
                        max(np.abs(m.astype(float) @ m.astype(float) + eye).max()
                            for m in bs.matrices))
    rep.add("block-structure-squares", {"max_deviation": block_dev},
            tolerance=0.0 if triple.is_exact() else 1e-12,
            passed=block_dev <= (0.0 if triple.is_exact() else 1e-12))

    if rotation is not None:
        rotated = algebra.rotate_triple(rotation, triple)
        r = algebra.verify_quaternion_relations(rotated)
        rep.add("file-rotation-relations", r.as_dict(), tolerance=1e-12,
                passed=r.holds(1e-12))

    study = fields.equivalence_study()
    rep.add("system-equivalence-study", study, tolerance=1e-10,
            passed=study["equivalent"])
    return rep


# ---------------------------------------------------------------------------
# map-check
# ---------------------------------------------------------------------------

def run_map_check(args) -> Report:
    rep = Report(command="map-check")
    u = io.load_map_field(args.map)
    if u.grid.m != 4:
        raise ConfigError("map-check requires a 4-dimensional domain")
    du = fields.jacobian(u, order=args.order)
    resid = fields.quaternionic_residual(du)
    resid_max = np.abs(resid).max(axis=tuple(range(u.grid.m)))
    summed = fields.triholomorphic_sum_residual(du)
    summed_max = float(np.abs(summed).max())
    e = fields.energy_density(du)

    rep.add("coordinate-residual", {
        "max_per_channel": resid_max.tolist(),
        "max": float(resid_max.max()),
        "energy_max": float(e.max()),
    }, tolerance=args.residual_tol, passed=resid_max.max() <= args.residual_tol,
        inputs_digest=digest(u.values))
    rep.add("summed-residual", {"max": summed_max},
            tolerance=args.residual_tol, passed=summed_max <= args.residual_tol,
            inputs_digest=digest(u.values))

    if args.battery:
        battery = forms.battery_from_json(Path(args.battery).read_text(), u.grid,
                                          order=args.order)
    else:
        margin = 0.15 * min(b - a for a, b in zip(u.grid.lo, u.grid.hi))
        battery = forms.bump_battery(u.grid, margin, order=args.order)
    omegas = forms.structure_two_forms(n=u.n)
    defects = forms.closedness_defect(u, omegas, battery, du=du, order=args.order)
    rows = []
    for alpha, omega in enumerate(omegas):
        flux = forms.pullback_two_form(u, omega, du=du)
        for eta in battery:
            rows.append({"battery_id": eta.label, "alpha": alpha + 1,
                         "value": forms.pairing_with_form(eta, flux, order=args.order)})
    rep.tables["pairings"] = rows
    rep.add("closedness-defect", {"per_channel": defects, "max": max(defects)},
            tolerance=args.defect_tol, passed=max(defects) <= args.defect_tol,
            inputs_digest=digest(u.values, args.order))

    study = fields.equivalence_study()
    rep.add("system-equivalence-study", study, tolerance=1e-10,
            passed=study["equivalent"])
    return rep


# ---------------------------------------------------------------------------
# sphere-check
# ---------------------------------------------------------------------------

def run_sphere_check(args) -> Report:
    rep = Report(command="sphere-check")
    phi = sphere.build_sphere_map(args.phi)
    grid = sphere.sphere_quadrature(args.sphere_level)

    if phi.dim == 3:
        et = sphere.tangential_energy(phi, sphere.sphere_area_form(3), grid)
        rep.add("tangential-energy-area-form", {"value": et}, tolerance=np.inf,
                passed=True, inputs_digest=digest(phi.name, args.sphere_level))
    moments = sphere.stationarity_moment(phi, grid)
    rep.add("stationarity-moment", {"vector": moments.tolist(),
                                    "max_abs": float(np.abs(moments).max())},
            tolerance=np.inf, passed=True,
            inputs_digest=digest(phi.name, args.sphere_level))

    if phi.dim % 4 == 0:
        for direction in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                          np.array([0.0, 0.0, 1.0])):
            res = sphere.frame_alignment_residual(phi, direction, grid=grid)
            rep.add(f"frame-alignment-{direction.tolist()}",
                    {"max_residual": float(np.nanmax(res))},
                    tolerance=np.inf, passed=True)
    return rep


# ---------------------------------------------------------------------------
# prop-yn
# ---------------------------------------------------------------------------

def run_prop_yn(args) -> Report:
    rep = Report(command="prop-yn")
    phi = sphere.build_sphere_map(args.phi)
    if phi.domain_mask is not None:
        raise ConfigError("the identity check needs a globally defined sphere map")
    grid = fields.GridSpec(4, (-1.0,), (1.0,), (17,))
    eta = sphere.radial_bump_test_form(grid, radius=args.support_radius, margin=0.15)

    cases = []
    if phi.dim == 3:
        cases.append(("area-form", sphere.sphere_area_form(3), phi))
    padded = _pad_sphere_map(phi)
    for alpha, omega in enumerate(forms.structure_two_forms(n=1)):
        cases.append((f"structure-{alpha + 1}", omega, padded))

    resolutions = args.resolutions
    rows = []

    def run_case(case):
        name, omega, mapped = case
        out = []
        for res in resolutions:
            result = sphere.extension_pairing_check(mapped, omega, eta, resolution=res)
            out.append({"eta": eta.label, "omega": name, "resolution": res,
                        **result.as_dict()})
        return out

    for chunk in _parallel_map(run_case, cases, args.threads):
        rows.extend(chunk)
    rep.tables["identity"] = rows

    # order estimate and final error for the nontrivial case (if present)
    nontrivial = [r for r in rows if abs(r["rhs"]) > 1e-8]
    if nontrivial:
        by_res = sorted(nontrivial, key=lambda r: r["resolution"])
        errs = [max(abs(r["lhs"] - r["rhs"]), 1e-16) for r in by_res]
        ns = [8 * r["resolution"] for r in by_res]
        order = -np.polyfit(np.log(ns), np.log(errs), 1)[0] if len(errs) >= 2 else np.inf
        final_rel = by_res[-1]["rel_err"]
        rep.add("identity-nontrivial", {"rel_err_finest": final_rel,
                                        "observed_order": float(order)},
                tolerance=args.rel_tol,
                passed=final_rel <= args.rel_tol and order >= 2.0,
                inputs_digest=digest(args.phi, resolutions))
    trivial = [r for r in rows if abs(r["rhs"]) <= 1e-8]
    if trivial:
        worst = max(max(abs(r["lhs"]), abs(r["rhs"])) for r in trivial)
        rep.add("identity-flat-cases", {"max_side": worst}, tolerance=1e-8,
                passed=worst <= 1e-8)
    return rep


def _pad_sphere_map(phi: sphere.SphereMap) -> sphere.SphereMap:
    if phi.dim % 4 == 0:
        return phi

    def value(points):
        vals = np.asarray(phi.value(points))
        out = np.zeros(vals.shape[:-1] + (4,))
        out[..., :3] = vals
        return out

    padded = sphere.SphereMap(value, dim=4, name=phi.name + "-padded")

    def deriv(points, direction):
        base = phi.directional_derivative(points, direction)
        out = np.zeros(np.asarray(base).shape[:-1] + (4,))
        out[..., :3] = base
        return out

    padded.directional_derivative = deriv
    return padded


# ---------------------------------------------------------------------------
# blowup-report
# ---------------------------------------------------------------------------

def run_blowup_report(args) -> Report:
    rep = Report(command="blowup-report")
    seq = manufactured.load_manifest(Path(args.manifest))
    cfg = manufactured.config_from_json(Path(args.blowup_config).read_text())
    battery = forms.battery_from_json(Path(args.battery).read_text(), seq.grid,
                                      order=args.order)

    detection = blowup.detect_blowup_set(seq, cfg)
    det_values = {"points": int(detection.cloud.shape[0]),
                  "patches": len(detection.patches)}
    if not detection.is_empty() and detection.patches:
        spans = [float(p.normal_distance(detection.cloud).max())
                 for p in detection.patches]
        det_values["max_cloud_patch_distance"] = max(spans)
    rep.add("detection", det_values, tolerance=np.inf, passed=True,
            inputs_digest=digest(cfg.eps0, cfg.radii))

    if detection.is_empty():
        frame = None
        dm = blowup.DefectMeasure(patches=(), densities=())
        v = blowup.defect_matrix(seq, battery, cfg=cfg, order=args.order)
        defect_scale = float(np.abs(v).max())
        rep.add("no-concentration", {"defect_scale": defect_scale},
                tolerance=cfg.defect_floor * 10,
                passed=defect_scale <= max(cfg.defect_floor * 10, args.formula_tol))
        rep.add("formula-degenerate", {
            "max_gap": 0.0, "note": "empty support; limit equals base"},
            tolerance=args.formula_tol, passed=defect_scale <= args.formula_tol)
        return rep

    dm = blowup.estimate_density(seq, detection.patches, cfg)
    theta_stats = {
        "per_patch_mean": [float(d.values.mean()) for d in dm.densities],
        "per_patch_variance": [d.variance() for d in dm.densities],
        "cauchy_gaps": [d.cauchy_gap for d in dm.densities],
    }
    floor = cfg.eps0 / np.pi - 0.5 * cfg.eps0 / np.pi
    theta_min = min(float(d.values.min()) for d in dm.densities)
    rep.add("density-estimation", {**theta_stats, "min": theta_min},
            tolerance=floor, passed=theta_min >= floor,
            inputs_digest=digest(cfg.eps0, cfg.slab_halfwidth))

    frame = blowup.estimate_frame_direction(seq, battery, cfg,
                                            patches=detection.patches,
                                            order=args.order)
    rep.add("frame-direction", {
        "direction": frame.direction.tolist(),
        "rank_one_residual": frame.rank_one_residual,
        "per_patch_disagreement": frame.max_patch_disagreement,
    }, tolerance=args.rank_one_tol,
        passed=frame.rank_one_residual <= args.rank_one_tol)

    formula = blowup.verify_blowup_formula(seq, battery, dm, frame, cfg,
                                           order=args.order)
    rep.tables["formula"] = formula.as_rows()
    rep.add("formula-line-a", {"max_rel": formula.max_relative("a"),
                               "scale": formula.scale},
            tolerance=args.formula_tol,
            passed=formula.max_relative("a") <= args.formula_tol)
    rep.add("formula-line-b", {"max_rel": formula.max_relative("b")},
            tolerance=args.formula_tol,
            passed=formula.max_relative("b") <= args.formula_tol)

    verdict = blowup.density_constancy_check(dm, battery,
                                             surface_tol=args.constancy_tol * formula.scale,
                                             variance_tol=args.variance_tol,
                                             order=args.order)
    rep.add("density-constancy", verdict.as_dict(), tolerance=args.constancy_tol,
            passed=True)  # informational verdict; FAIL is data-dependent
    rep.tables["density"] = [
        {"patch": i, "s1": float(s1), "s2": float(s2), "theta": float(v)}
        for i, d in enumerate(dm.densities)
        for (s1, s2, v) in zip(np.repeat(d.s1, len(d.s2)),
                               np.tile(d.s2, len(d.s1)),
                               d.values.ravel())
    ]
    return rep


# ---------------------------------------------------------------------------
# make-blowup-data
# ---------------------------------------------------------------------------

def run_make_blowup_data(args) -> Report:
    rep = Report(command="make-blowup-data")
    data = manufactured.build_manufactured(args.variant, res=args.res)
    out = Path(args.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = manufactured.save_manifest(out, data.seq)
    (out / "config.json").write_text(manufactured.config_to_json(data.cfg))
    (out / "battery.json").write_text(
        forms.battery_to_json(data.battery_entries, data.battery_margin))
    truth = {k: v for k, v in data.truth.items() if k != "theta_fn"}
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    rep.add("generated", {"variant": args.variant, "manifest": str(manifest_path),
                          "members": len(data.seq.members)},
            tolerance=np.inf, passed=True)
    return rep


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triquat",
        description="Numerical verification toolkit for quaternionic maps "
                    "between flat model spaces")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None, help="report output directory")
        p.add_argument("--config", default=None,
                       help="JSON config file; explicit flags win")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--order", type=int, choices=(2, 4), default=2,
                       help="finite-difference stencil order")

    p = sub.add_parser("algebra-verify", help="structure-matrix relation suite")
    common(p)
    p.add_argument("--triple", default=None, help="JSON triple file to verify")
    p.add_argument("--rotations", type=int, default=100)
    p.set_defaults(func=run_algebra_verify)

    p = sub.add_parser("map-check", help="residuals and closedness of a map file")
    common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--battery", default=None, help="JSON battery file")
    p.add_argument("--residual-tol", type=float, default=1e-10)
    p.add_argument("--defect-tol", type=float, default=1e-6)
    p.set_defaults(func=run_map_check)

    p = sub.add_parser("sphere-check", help="sphere-map diagnostics")
    common(p)
    p.add_argument("--phi", default="identity")
    p.add_argument("--sphere-level", type=int, default=8)
    p.set_defaults(func=run_sphere_check)

    p = sub.add_parser("prop-yn", help="two-sided radial-extension identity")
    common(p)
    p.add_argument("--phi", default="identity")
    p.add_argument("--support-radius", type=float, default=0.8)
    p.add_argument("--resolutions", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--rel-tol", type=float, default=1e-3)
    p.set_defaults(func=run_prop_yn)

    p = sub.add_parser("blowup-report", help="full concentration pipeline")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--blowup-config", required=True)
    p.add_argument("--battery", required=True)
    p.add_argument("--formula-tol", type=float, default=1e-2)
    p.add_argument("--rank-one-tol", type=float, default=0.2)
    p.add_argument("--constancy-tol", type=float, default=1e-2)
    p.add_argument("--variance-tol", type=float, default=5e-3)
    p.set_defaults(func=run_blowup_report, order=4)

    p = sub.add_parser("make-blowup-data", help="write a manufactured manifest")
    common(p)
    p.add_argument("--variant", choices=manufactured.VARIANTS, default="default")
    p.add_argument("--res", type=int, default=33)
    p.add_argument("--data-dir", required=True)
    p.set_defaults(func=run_make_blowup_data)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(parser, args, argv)
        report = args.func(args)
    except (ConfigError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TriquatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    stem = args.command.replace("-", "_")
    path = report.write(_out_dir(args), stem)
    report.print_summary()
    print(f"report: {path}  (kernel backend: {BACKEND})")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
