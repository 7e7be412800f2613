"""Command-line front end.

Commands
--------
beta         dyadic displacement profiles and the summability verdict
fit-plane    best k-plane of a weighted cloud with its moment spectrum
reconstruct  multiscale flattening; atlas JSON plus a summary
pack         discrete packing verifier on a ball family (coords + radius)
stratify     quantitative stratum of a catalog field, cover, Minkowski fit

Input point clouds are CSV: one row per atom, n coordinate columns and an
optional trailing weight column; a header row is detected by a non-numeric
first token.  Reports are deterministic JSON (schema 1, 17 significant
digits).  Exit codes: 0 ok, 2 parse error, 3 dimension mismatch,
4 hypothesis violated, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import fixtures  # noqa: F401  (fixture generators importable for users)
from .covering import (BallFamily, cover_report_doc, discrete_reifenberg_verify,
                       inductive_cover, iterate_cover, union_ball_volume)
from .errors import EmptySupportError, EnergyInfiniteError, PlaneFitError
from .geometry import AtomicMeasure, Ball, hausdorff_distance
from .harmonic import FIELD_CATALOG, quantitative_stratum
from .moments import (
    DisplacementConfig,
    dyadic_profile,
    second_moment_spectrum,
    summability_check,
)
from .reifenberg import measure_estimate, reconstruct
from .report import dump_json

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DIMENSION = 3
EXIT_HYPOTHESIS = 4
EXIT_NUMERICAL = 5


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _is_number(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def read_cloud_csv(path, dim, extra_columns=0):
    """Parse a point-cloud CSV; returns (coords, extras, weights).

    Rows carry dim coordinates, `extra_columns` mandatory trailing columns,
    and optionally one more weight column.
    """
    rows = []
    weights = []
    extras = []
    expected = None
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as err:
        raise CliError(EXIT_PARSE, f"cannot open input: {err}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if lineno == 1 and not _is_number(tokens[0]):
                continue  # header row
            if not all(_is_number(t) for t in tokens):
                raise CliError(EXIT_PARSE, f"parse error on line {lineno}: non-numeric value")
            vals = [float(t) for t in tokens]
            if expected is None:
                base = dim + extra_columns
                if len(vals) == base:
                    expected = (len(vals), False)
                elif len(vals) == base + 1:
                    expected = (len(vals), True)
                else:
                    raise CliError(
                        EXIT_DIMENSION,
                        f"dimension mismatch on line {lineno}: {len(vals)} columns "
                        f"for ambient dimension {dim}",
                    )
            if len(vals) != expected[0]:
                raise CliError(EXIT_PARSE, f"parse error on line {lineno}: ragged row")
            has_weight = expected[1]
            coord = vals[:dim]
            trail = vals[dim : dim + extra_columns]
            w = vals[-1] if has_weight else 1.0
            rows.append(coord)
            extras.append(trail)
            weights.append(w)
    if not rows:
        raise CliError(EXIT_PARSE, "parse error: no data rows")
    return np.array(rows), np.array(extras), np.array(weights)


def write_cloud_csv(path, mu):
    with open(path, "w", encoding="utf-8") as fh:
        for p, w in zip(mu.positions, mu.weights):
            fields = [f"{v:.17g}" for v in p] + [f"{w:.17g}"]
            fh.write(",".join(fields))
            fh.write("\n")


def _config(args, k):
    base = DisplacementConfig.default(k, delta=args.delta)
    return DisplacementConfig(
        eps_mass=args.eps_mass if args.eps_mass is not None else base.eps_mass,
        gamma_good=args.gamma_good if args.gamma_good is not None else base.gamma_good,
        rho=args.rho,
        delta=args.delta,
    )


def cmd_beta(args):
    coords, _, weights = read_cloud_csv(args.input, args.dim)
    mu = AtomicMeasure(coords, weights)
    cfg = _config(args, args.k)
    ball = mu.bounding_ball(margin=1e-9)
    holds, value = summability_check(mu, ball, args.k, cfg)

    cap = 256
    step = max(1, mu.count // cap)
    profile_rows = []
    worst = (-1.0, None, None)
    for j in range(0, mu.count, step):
        prof = dyadic_profile(mu, mu.positions[j], args.k,
                              args.alpha_min, args.alpha_max, cfg)
        for scale, disp, mass in prof.entries():
            if disp * weights[j] > worst[0]:
                worst = (disp * weights[j], mu.positions[j], scale)
        profile_rows.append({
            "center": list(mu.positions[j]),
            "scales": list(prof.scales),
            "displacements": list(prof.displacements),
            "masses": list(prof.masses),
        })
    doc = {
        "schema": 1,
        "command": "beta",
        "k": args.k,
        "delta": args.delta,
        "verdict": "holds" if holds else "fails",
        "value": value,
        "threshold": cfg.delta**2,
        "root": {"center": list(ball.center), "radius": ball.radius},
        "worst_ball": None if worst[1] is None else
            {"center": list(worst[1]), "scale": worst[2], "weighted_displacement": worst[0]},
        "profiles": profile_rows,
    }
    if args.output:
        dump_json(doc, args.output)
    return EXIT_OK if holds else EXIT_HYPOTHESIS, doc


def cmd_fit_plane(args):
    coords, _, weights = read_cloud_csv(args.input, args.dim)
    mu = AtomicMeasure(coords, weights)
    ball = mu.bounding_ball(margin=1e-9)
    spec = second_moment_spectrum(mu, ball)
    plane = spec.plane(args.k)
    doc = {
        "schema": 1,
        "command": "fit-plane",
        "k": args.k,
        "base": list(plane.base),
        "basis": [list(row) for row in plane.directions],
        "eigenvalues": list(spec.eigenvalues),
        "residual": spec.residual(args.k),
        "mass": spec.mass,
    }
    if args.output:
        dump_json(doc, args.output)
    return EXIT_OK, doc


def cmd_reconstruct(args):
    coords, _, weights = read_cloud_csv(args.input, args.dim)
    mu = AtomicMeasure(coords, weights)
    cfg = _config(args, args.k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        atlas = reconstruct(mu, args.k, cfg, max_scale_count=args.scales,
                            seed=args.seed)
    summary = {
        "schema": 1,
        "command": "reconstruct",
        "k": args.k,
        "summability_ok": bool(atlas.summability_ok),
        "scale_count": len(atlas.scales),
        "final_radius": atlas.final_scale.radius,
        "total_distortion": atlas.total_distortion_bound(),
        "max_atom_distance": float(atlas.atom_distances.max()),
        "covered_fraction": float(atlas.covered.mean()),
        "measure_root": measure_estimate(atlas, atlas.root_ball),
    }
    if args.truth:
        t_coords, _, _ = read_cloud_csv(args.truth, args.dim)
        summary["hausdorff_to_truth"] = hausdorff_distance(
            atlas.final_samples, t_coords
        )
    if args.output:
        atlas.export_json(args.output)
        dump_json(summary, args.output + ".summary.json")
    return (EXIT_OK if atlas.summability_ok else EXIT_HYPOTHESIS), summary


def cmd_pack(args):
    coords, extras, weights = read_cloud_csv(args.input, args.dim, extra_columns=1)
    radii = extras[:, 0]
    fam = BallFamily(coords, radii)
    cfg = _config(args, args.k)
    report = discrete_reifenberg_verify(fam, args.k, cfg,
                                        packing_bound=args.packing_bound)
    doc = {
        "schema": 1,
        "command": "pack",
        "k": args.k,
        "count": fam.count,
        "hypothesis_ok": report.hypothesis_ok,
        "packing_sum": report.packing_sum,
        "bound_exceeded": report.bound_exceeded,
        "failure_scale": report.failure_scale,
        "worst_ball": None if report.worst_ball is None else {
            "center": list(report.worst_ball[0]),
            "scale": report.worst_ball[1],
            "value": report.worst_ball[2],
        },
        "values_by_scale": {f"{r:.17g}": v for r, v in
                            sorted(report.values_by_scale.items(), reverse=True)},
    }
    if args.output:
        dump_json(doc, args.output)
    return (EXIT_OK if report.hypothesis_ok else EXIT_HYPOTHESIS), doc


def cmd_stratify(args):
    make = FIELD_CATALOG.get(args.fixture)
    if make is None:
        raise CliError(EXIT_PARSE,
                       f"unknown fixture {args.fixture!r}; "
                       f"choose from {sorted(FIELD_CATALOG)}")
    field = make(args.dim)
    r = args.r_min
    stratum = quantitative_stratum(field, args.k, args.epsilon, r,
                                   grid_step=args.grid_step, radius=1.0,
                                   plane_count=args.plane_count)
    root = Ball(np.zeros(args.dim), 1.0)
    cover = inductive_cover(field, root, args.k, args.epsilon, r, args.eta,
                            grid_step=args.grid_step, stratum=stratum)
    levels, _ = iterate_cover(field, root, args.k, args.epsilon, r, args.eta,
                              grid_step=args.grid_step)
    rhos = [2.0**-a for a in range(-1, 3)]
    vols = []
    for rho in rhos:
        if stratum.count:
            vols.append(union_ball_volume(stratum.positions, rho, cell=rho / 8.0))
        else:
            vols.append(0.0)
    slope = None
    if stratum.count and all(v > 0 for v in vols):
        slope = float(np.polyfit(np.log(rhos), np.log(vols), 1)[0])
    doc = {
        "schema": 1,
        "command": "stratify",
        "fixture": args.fixture,
        "k": args.k,
        "epsilon": args.epsilon,
        "r_min": r,
        "grid_step": args.grid_step,
        "stratum_count": stratum.count,
        "stratum_positions": [list(p) for p in stratum.positions],
        "energy_sup": cover.energy_sup,
        "u_r_count": len(cover.U_r),
        "u_plus_count": len(cover.U_plus),
        "packing_sum": cover.packing_sum,
        "content": cover.content,
        "minkowski_radii": rhos,
        "minkowski_volumes": vols,
        "minkowski_slope": slope,
        "cover_levels": cover_report_doc(levels)["levels"],
    }
    if args.output:
        dump_json(doc, args.output)
        write_cloud_csv(args.output + ".csv", stratum)
    return EXIT_OK, doc


def build_parser():
    p = argparse.ArgumentParser(prog="msgeom", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_input=True):
        if needs_input:
            sp.add_argument("--input", required=True, help="point-cloud CSV")
        sp.add_argument("--output", default=None, help="JSON report path")
        sp.add_argument("--dim", type=int, required=True, help="ambient dimension n")
        sp.add_argument("--k", type=int, default=1, help="intrinsic dimension k")
        sp.add_argument("--rho", type=float, default=0.5)
        sp.add_argument("--delta", type=float, default=0.1)
        sp.add_argument("--eps-mass", dest="eps_mass", type=float, default=None)
        sp.add_argument("--gamma-good", dest="gamma_good", type=float, default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads; results are identical for any count")

    sp = sub.add_parser("beta", help="dyadic displacement profiles + summability")
    common(sp)
    sp.add_argument("--alpha-min", dest="alpha_min", type=int, default=0)
    sp.add_argument("--alpha-max", dest="alpha_max", type=int, default=8)
    sp.set_defaults(fn=cmd_beta)

    sp = sub.add_parser("fit-plane", help="best k-plane and moment spectrum")
    common(sp)
    sp.set_defaults(fn=cmd_fit_plane)

    sp = sub.add_parser("reconstruct", help="multiscale flattening")
    common(sp)
    sp.add_argument("--scales", type=int, default=5, help="scale-ladder length")
    sp.add_argument("--truth", default=None, help="truth cloud CSV for Hausdorff")
    sp.set_defaults(fn=cmd_reconstruct)

    sp = sub.add_parser("pack", help="discrete packing verifier")
    common(sp)
    sp.add_argument("--packing-bound", dest="packing_bound", type=float, default=None)
    sp.set_defaults(fn=cmd_pack)

    sp = sub.add_parser("stratify", help="quantitative stratum of a catalog field")
    common(sp, needs_input=False)
    sp.add_argument("--fixture", required=True, help="catalog field tag")
    sp.add_argument("--epsilon", type=float, default=0.3)
    sp.add_argument("--r-min", dest="r_min", type=float, default=2.0**-6)
    sp.add_argument("--grid-step", dest="grid_step", type=float, default=2.0**-3)
    sp.add_argument("--eta", type=float, default=0.5)
    sp.add_argument("--plane-count", dest="plane_count", type=int, default=32)
    sp.set_defaults(fn=cmd_stratify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.dim > 16:
            raise CliError(EXIT_DIMENSION, f"ambient dimension {args.dim} exceeds 16")
        if getattr(args, "k", 0) >= args.dim:
            raise CliError(EXIT_DIMENSION,
                           f"intrinsic dimension {args.k} must be below {args.dim}")
        code, _ = args.fn(args)
        return code
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except (EnergyInfiniteError, PlaneFitError, EmptySupportError,
            np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
