"""Command-line entry point: solve, converge, and check.

Every command is a thin shell over library calls; identical inputs produce
identical output files (the summary timestamp line can be suppressed with
--no-timestamp).  Exit codes: 0 ok, 1 input or system error, 2 property or
tolerance failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from mdelast import expressions as ex
from mdelast.assembly import MaterialLaw, assemble_system, load_config
from mdelast.elements import FamilyChoice, build_spaces
from mdelast.geometry import GeometryError, load_geometry, validate
from mdelast.meshing import MeshError, build_mesh, refine
from mdelast.solver import SolveError, solve, weighted_norms, write_vtk
from mdelast.verify import (
    complex_check,
    condition_s2_residual,
    condition_s3a_residual,
    conservation_check,
    convergence_study,
    infsup_estimate,
    manufactured_case,
    weak_symmetry_check,
    write_rate_csv,
)

_DEFAULT_GEOMETRY = {
    "ambient_dim": 2,
    "bounding_polygon": [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    "segments": [
        {"a": [0.0, 0.5], "b": [1.0, 0.5], "epsilon": 1e-2, "gamma": 1e-4}
    ],
    "boundary": [],
}


@dataclass
class RunConfig:
    """Validated run parameters shared by the commands."""

    geometry_path: str | None
    config_path: str | None
    target_h: float
    family: str | None
    order: int
    out: str
    options: dict

    @classmethod
    def from_args(cls, args):
        cfg = cls(
            geometry_path=getattr(args, "geometry", None),
            config_path=getattr(args, "config", None),
            target_h=float(getattr(args, "h", 0.25)),
            family=getattr(args, "family", None),
            order=int(getattr(args, "order", 0) or 0),
            out=getattr(args, "out", "mdelast_out"),
            options={
                "levels": getattr(args, "levels", None),
                "case": getattr(args, "case", None),
                "eps": getattr(args, "eps", None),
                "eps_sweep": getattr(args, "eps_sweep", False),
                "no_timestamp": getattr(args, "no_timestamp", False),
            },
        )
        if cfg.target_h <= 0:
            raise ValueError("target_h must be positive")
        for path in (cfg.geometry_path, cfg.config_path):
            if path is not None and not os.path.exists(path):
                raise FileNotFoundError(
                    f"[Errno 2] No such file or directory: {path!r}"
                )
        return cfg


def _geometry_from_args(args):
    if getattr(args, "geometry", None):
        return load_geometry(args.geometry)
    from mdelast.geometry import decompose

    d = _DEFAULT_GEOMETRY
    return decompose(
        d["bounding_polygon"],
        [(s["a"], s["b"], s["epsilon"], s["gamma"]) for s in d["segments"]],
        d["boundary"],
    )


def _config_from_args(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return {
        "family": FamilyChoice(getattr(args, "family", "full") or "full",
                               getattr(args, "order", 0) or 0),
        "material": MaterialLaw(),
        "g_u": None,
        "f": None,
    }


def _family_from(args, cfg):
    if getattr(args, "family", None):
        return FamilyChoice(args.family, getattr(args, "order", 0) or 0)
    return cfg["family"]


def cmd_solve(args) -> int:
    try:
        RunConfig.from_args(args)
        geometry = _geometry_from_args(args)
        cfg = _config_from_args(args)
        report = validate(geometry)
        if not report.is_valid:
            for v in report.violations:
                print(f"error: {v}", file=sys.stderr)
            return 1
        family = _family_from(args, cfg)
        mesh = build_mesh(geometry, args.h)
        spaces = build_spaces(mesh, family)
        if cfg["g_u"] is not None:
            g_call = _vec_callable(cfg["g_u"])
        else:
            g_call = [_vec_callable(v) for v in geometry.boundary_values]
        f_call = _vec_callable(cfg["f"]) if cfg["f"] is not None else None
        system = assemble_system(mesh, spaces, cfg["material"], f=f_call, g_u=g_call)
        sol = solve(system)
        cons = conservation_check(sol, f_call, geometry, spaces)
        wsym = weak_symmetry_check(sol, spaces)
        ns, nu, nr = weighted_norms(sol)
        files = write_vtk(args.out, sol, spaces)
        lines = []
        if not args.no_timestamp:
            lines.append(f"timestamp = {time.strftime('%Y-%m-%dT%H:%M:%S')}")
        lines += [
            f"dofs = {spaces.total_dim}",
            f"h = {mesh.h!r}",
            f"norm_sigma = {ns!r}",
            f"norm_u = {nu!r}",
            f"norm_r = {nr!r}",
            f"conservation_residual = {cons!r}",
            f"weak_symmetry_residual = {wsym!r}",
            f"solver_residual = {sol.residual!r}",
        ]
        spath = f"{args.out}_summary.txt"
        with open(spath, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print("\n".join(lines))
        print(f"wrote {', '.join(files + [spath])}")
        return 0
    except (FileNotFoundError, GeometryError, MeshError, SolveError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _vec_callable(mat):
    fn = ex.lambdify(mat)
    return lambda x, y: np.asarray(fn(x, y), dtype=float).reshape(2)


_RATE_GATES = {
    # (theory, low slack, high slack) per error norm
    "reduced": {"sigma": (1.0, 0.15, 0.3), "u": (1.0, 0.15, 0.3), "r": (1.0, 0.15, 0.3)},
    "full": {"sigma": (1.0, 0.15, 0.3), "u": (1.0, 0.15, 0.3), "r": (1.0, 0.15, 0.3),
             "sigma_d1": (2.0, 0.2, 0.3)},
}


def cmd_converge(args) -> int:
    try:
        RunConfig.from_args(args)
        if args.levels < 3:
            print("error: a convergence rate needs at least 3 levels", file=sys.stderr)
            return 1
        cfg = _config_from_args(args)
        family = _family_from(args, cfg)
        case = manufactured_case(args.case, epsilon=args.eps, material=cfg["material"])
        study = convergence_study(case, family, levels=args.levels, h0=args.h)
        path = f"{args.out}.csv"
        write_rate_csv(study, path)
        print(f"wrote {path}")
        for row in study["rows"]:
            print(
                f"level {row['level']} h={row['h']:.5g} "
                f"err_sigma={row['err_sigma']:.6e} err_u={row['err_u']:.6e} "
                f"err_r={row['err_r']:.6e}"
            )
        print("rates:", {k: round(v, 3) for k, v in study["rates"].items()})
        if not case.has_exact:
            ok = all(
                study["rows"][k]["err_sigma"] < study["rows"][k - 1]["err_sigma"]
                and study["rows"][k]["err_u"] < study["rows"][k - 1]["err_u"]
                for k in (len(study["rows"]) - 2, len(study["rows"]) - 1)
            )
            if not ok:
                print("FAIL: errors do not decrease monotonically", file=sys.stderr)
                return 2
            return 0
        gates = _RATE_GATES[family.variant]
        bad = []
        for key, (theory, lo, hi) in gates.items():
            rate = study["rates"][key]
            if not np.isfinite(rate):
                # that error component vanishes identically (for example the
                # inclusion split on an inclusion-free geometry)
                continue
            if not (theory - lo <= rate <= theory + hi):
                bad.append(f"rate_{key} = {rate:.3f} outside [{theory - lo}, {theory + hi}]")
        if bad:
            for b in bad:
                print(f"FAIL: {b}", file=sys.stderr)
            return 2
        return 0
    except (FileNotFoundError, GeometryError, MeshError, SolveError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def run_property_checks(geometry, family, h, levels, eps_sweep, spaces_pair=None):
    """Library core of `check`: runs the space and stability property suites.

    ``spaces_pair`` may inject prebuilt spaces (used by tests to exercise
    deliberately broken families).
    """
    results = {}
    if spaces_pair is None:
        mesh = build_mesh(geometry, h)
        meshes = [mesh, refine(mesh)]
        spaces_pair = [build_spaces(m, family) for m in meshes]
    s2_worst = {"div_residual": 0.0, "trace_spans": True}
    s3_worst = 0.0
    cx_worst = 0.0
    for spaces in spaces_pair:
        s2 = condition_s2_residual(spaces)
        s2_worst["div_residual"] = max(s2_worst["div_residual"], s2["div_residual"])
        s2_worst["trace_spans"] = s2_worst["trace_spans"] and s2["trace_spans"]
        s3_worst = max(s3_worst, condition_s3a_residual(spaces))
        cx_worst = max(cx_worst, complex_check(spaces, trials=20))
    results["S2"] = {
        "div_residual": s2_worst["div_residual"],
        "trace_spans": s2_worst["trace_spans"],
        "pass": s2_worst["div_residual"] <= 1e-12 and s2_worst["trace_spans"],
    }
    results["S3a"] = {"residual": s3_worst, "pass": s3_worst <= 1e-12}
    results["complex"] = {"residual": cx_worst, "pass": cx_worst <= 1e-12}

    eps_list = [1.0, 1e-2, 1e-4] if eps_sweep else None
    rows = infsup_estimate(geometry, family, levels=levels, epsilons=eps_list, h0=h)
    by_eps = {}
    for row in rows:
        by_eps.setdefault(row["epsilon"], []).append(row["constant"])
    h_ok = all(max(v) / min(v) < 2.0 for v in by_eps.values())
    eps_ok = True
    if eps_sweep:
        by_lvl = {}
        for row in rows:
            by_lvl.setdefault(row["level"], []).append(row["constant"])
        eps_ok = all(max(v) / min(v) < 5.0 for v in by_lvl.values())
    results["infsup"] = {
        "rows": rows, "h_ratio_ok": h_ok, "eps_ratio_ok": eps_ok,
        "pass": h_ok and eps_ok,
    }
    return results


def cmd_check(args) -> int:
    try:
        RunConfig.from_args(args)
        geometry = _geometry_from_args(args)
        cfg = _config_from_args(args)
        family = _family_from(args, cfg)
        results = run_property_checks(
            geometry, family, args.h, args.levels, args.eps_sweep
        )
        report = {
            "family": family.variant,
            "checks": results,
        }
        if not args.no_timestamp:
            report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        path = f"{args.out}_check.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, default=float)
            fh.write("\n")
        failed = [name for name, res in results.items() if not res.get("pass", True)]
        for name, res in results.items():
            status = "pass" if res.get("pass", True) else "FAIL"
            print(f"{name}: {status}")
        print(f"wrote {path}")
        if failed:
            print("failed properties: " + ", ".join(failed), file=sys.stderr)
            return 2
        return 0
    except (FileNotFoundError, GeometryError, MeshError, SolveError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mdelast",
        description="Mixed-dimensional elasticity with thin inclusions",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve a problem and export fields")
    ps.add_argument("--geometry", help="geometry JSON file")
    ps.add_argument("--config", help="material/run TOML file")
    ps.add_argument("--h", type=float, default=0.25, help="target mesh size")
    ps.add_argument("--family", choices=["full", "reduced"])
    ps.add_argument("--order", type=int, default=0)
    ps.add_argument("--out", default="mdelast_out", help="output prefix")
    ps.add_argument("--no-timestamp", action="store_true")
    ps.set_defaults(func=cmd_solve)

    pc = sub.add_parser("converge", help="run a manufactured convergence study")
    pc.add_argument("--case", default="MMS-2", choices=["MMS-1", "MMS-2", "MMS-3"])
    pc.add_argument("--config", help="material/run TOML file")
    pc.add_argument("--family", choices=["full", "reduced"])
    pc.add_argument("--order", type=int, default=0)
    pc.add_argument("--levels", type=int, default=4)
    pc.add_argument("--h", type=float, default=0.25)
    pc.add_argument("--eps", type=float, default=1e-2, help="inclusion epsilon")
    pc.add_argument("--out", default="mdelast_rates")
    pc.add_argument("--no-timestamp", action="store_true")
    pc.set_defaults(func=cmd_converge)

    pk = sub.add_parser("check", help="run the property suites")
    pk.add_argument("--geometry", help="geometry JSON file (default: built-in)")
    pk.add_argument("--config", help="material/run TOML file")
    pk.add_argument("--family", choices=["full", "reduced"])
    pk.add_argument("--order", type=int, default=0)
    pk.add_argument("--h", type=float, default=0.5)
    pk.add_argument("--levels", type=int, default=2)
    pk.add_argument("--eps-sweep", action="store_true")
    pk.add_argument("--out", default="mdelast_report")
    pk.add_argument("--no-timestamp", action="store_true")
    pk.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
