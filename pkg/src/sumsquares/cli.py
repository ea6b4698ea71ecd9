"""Command-line front end.

Exit codes: 0 claim verified, 2 usage error, 3 claim not verified at the
configured tolerance, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .counterexample import (
    Box3, UsageError, comparison_fields, falsify_baire, pde_residual_study,
)
from .hermite_spectral import (
    ConvergenceError, adaptive_ground_state, derived_norms, fd_ground_state,
)
from .scaling_analysis import geometric_grid, report, rows_to_csv, sweep
from .symbolic_fields import counterexample_fields, hormander_rank, real_rank

EXIT_OK, EXIT_USAGE, EXIT_UNVERIFIED, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class RunConfig:
    subcommand: str
    k: int
    tol: float = 1e-10
    out_dir: str | None = None
    format: str = "both"
    threads: int = 1
    tau_grid: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    boxes: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def validate(self):
        if not isinstance(self.k, int) or self.k < 1:
            raise UsageError("--k must be a positive integer")
        if not self.tol > 0:
            raise UsageError("--tol must be positive")
        if self.format not in ("csv", "json", "both"):
            raise UsageError("--format must be csv, json or both")
        if self.threads < 1:
            raise UsageError("--threads must be >= 1")
        g = self.tau_grid
        if g:
            if g["points"] < 3:
                raise UsageError("a tau grid needs at least 3 points")
            if not (1 <= g["tau_min"] < g["tau_max"]):
                raise UsageError("need 1 <= tau-min < tau-max")

    def to_dict(self):
        # the destination directory does not affect results, so it stays out of outputs
        d = asdict(self)
        d.pop("out_dir")
        return d


def _taus(cfg: RunConfig) -> list[float]:
    g = cfg.tau_grid
    if g.get("geometric", True):
        return geometric_grid(g["tau_min"], g["tau_max"], g["points"])
    step = (g["tau_max"] - g["tau_min"]) / (g["points"] - 1)
    return [g["tau_min"] + i * step for i in range(g["points"])]


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(cfg: RunConfig, name: str, payload: dict, csv_text: str | None = None):
    """Write canonical outputs; the timestamp goes to a separate non-canonical sidecar."""
    doc = {"version": __version__, "config": cfg.to_dict(), **payload}
    if cfg.out_dir is None:
        sys.stdout.write(_dump(doc))
        return
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.format in ("json", "both"):
        (out / f"{name}.json").write_text(_dump(doc))
    if csv_text is not None and cfg.format in ("csv", "both"):
        header = f"# version={__version__} config={json.dumps(cfg.to_dict(), sort_keys=True)}\n"
        (out / f"{name}.csv").write_text(header + csv_text)
    meta = {"canonical": False, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    (out / f"{name}.meta.json").write_text(_dump(meta))
    print(f"wrote {name} outputs to {out}")


def _point(text: str):
    try:
        p = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point {text!r}") from None
    if len(p) != 3:
        raise argparse.ArgumentTypeError("point needs three comma-separated coordinates")
    return p


def run_brackets(cfg: RunConfig) -> int:
    p = tuple(cfg.options["point"])
    depth = cfg.options["depth"]
    if depth < 1:
        raise UsageError("--depth must be >= 1")
    gens = counterexample_fields(cfg.k)
    table = []
    rank = 0
    witnesses = []
    for d in range(1, depth + 1):
        rank, witnesses = hormander_rank(gens, p, d)
        table.append({"depth": d, "rank": rank, "real_rank": real_rank(gens, p, d)})
    for row in table:
        print(f"depth {row['depth']}: complex rank {row['rank']}, real rank {row['real_rank']}",
              file=sys.stderr)
    payload = {
        "point": list(p),
        "ranks": table,
        "rank": rank,
        "witnesses": [{"bracket": lbl, "field": str(f)} for lbl, f in witnesses],
        "full_rank": rank == 3,
    }
    csv_text = "depth,rank,real_rank\n" + "".join(
        f"{r['depth']},{r['rank']},{r['real_rank']}\n" for r in table)
    _emit(cfg, "brackets", payload, csv_text)
    return EXIT_OK if rank == 3 else EXIT_UNVERIFIED


def run_eigen(cfg: RunConfig) -> int:
    tau = cfg.options["tau"]
    if not tau >= 1:
        raise UsageError("--tau must be >= 1")
    o = cfg.options
    try:
        gs = adaptive_ground_state(cfg.k, tau, cfg.tol)
        fd = fd_ground_state(cfg.k, tau, R=o["fd_R"], M=o["fd_M"])
    except (ConvergenceError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rel = abs(fd.lam - gs.lam) / gs.lam
    agree = rel <= o["fd_tol"]
    payload = {
        "ground_state": gs.to_dict(),
        "norms": derived_norms(gs.coeffs).to_dict(),
        "lambda_tau_k": gs.lam * tau**cfg.k,
        "fd_oracle": {"lambda": fd.lam, "R": o["fd_R"], "M": o["fd_M"],
                      "relative_difference": rel, "tolerance": o["fd_tol"], "agree": agree},
    }
    _emit(cfg, "eigen", payload)
    print(f"lambda={gs.lam!r} fd={fd.lam!r} rel={rel:.3e}", file=sys.stderr)
    return EXIT_OK if agree else EXIT_UNVERIFIED


def run_scaling(cfg: RunConfig) -> int:
    rows = sweep(cfg.k, _taus(cfg), cfg.tol, cfg.threads)
    rep = report(rows, cfg.options["fit_tau_min"])
    _emit(cfg, "scaling", rep, rows_to_csv(rows))
    failed = [r.tau for r in rows if not r.ok]
    if failed:
        print(f"failed rows at tau = {failed}", file=sys.stderr)
        return EXIT_NUMERIC
    if "lambda_fit" not in rep:
        raise UsageError(f"fit impossible: {rep.get('fit_error')}")
    slope = rep["lambda_fit"]["slope"]
    print(f"lambda slope {slope:.4f} (target {-cfg.k})", file=sys.stderr)
    return EXIT_OK if abs(slope + cfg.k) <= cfg.options["slope_tol"] else EXIT_UNVERIFIED


def run_counterexample(cfg: RunConfig) -> int:
    b = cfg.boxes
    V, Vp = Box3.cube(b["V"]), Box3.cube(b["Vprime"])
    fields_ = comparison_fields() if cfg.options.get("comparison") else None
    try:
        rep = falsify_baire(cfg.k, _taus(cfg), V, Vp, fields=fields_,
                            check_pde=cfg.options.get("check_pde", False), threads=cfg.threads)
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    payload = rep.to_dict()
    if cfg.options.get("check_pde"):
        tau = cfg.options["pde_tau"]
        study = pde_residual_study(cfg.k, tau)
        payload["pde_check"] = {"tau": tau, **study.to_dict()}
        print(f"FD residual orders at tau={tau}: {study.orders}", file=sys.stderr)
    _emit(cfg, "counterexample", payload, rep.to_csv())
    print(f"growth slope {rep.growth_fit.slope:.4f}: {rep.status}", file=sys.stderr)
    return EXIT_OK if rep.falsifies else EXIT_UNVERIFIED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--k", type=int, default=1)
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--out-dir")
    common.add_argument("--format", choices=("csv", "json", "both"), default="both")
    common.add_argument("--threads", type=int, default=1)

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--tau-min", type=float)
    grid.add_argument("--tau-max", type=float)
    grid.add_argument("--points", type=int)
    grid.add_argument("--linear", action="store_true", help="uniform instead of geometric grid")

    parser = argparse.ArgumentParser(prog="sumsquares", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("brackets", parents=[common], help="bracket-condition rank table")
    p.add_argument("--point", type=_point, default=(0.0, 0.0, 0.0))
    p.add_argument("--depth", type=int, default=3)

    p = sub.add_parser("eigen", parents=[common], help="ground state with FD cross-check")
    p.add_argument("--tau", type=float, default=16.0)
    p.add_argument("--fd-R", type=float, default=12.0)
    p.add_argument("--fd-M", type=int, default=4096)
    p.add_argument("--fd-tol", type=float, default=1e-4)

    p = sub.add_parser("scaling", parents=[common, grid], help="tau sweep and power-law fits")
    p.set_defaults(tau_min=1.0, tau_max=2.0**14, points=15)
    p.add_argument("--slope-tol", type=float, default=0.05)
    p.add_argument("--fit-tau-min", type=float, default=2.0**6)

    p = sub.add_parser("counterexample", parents=[common, grid], help="ratio growth study")
    p.set_defaults(tau_min=16.0, tau_max=1024.0, points=7)
    p.add_argument("--V", type=float, default=0.5, help="half-width of the cube V")
    p.add_argument("--Vprime", type=float, default=1.0, help="half-width of the cube V'")
    p.add_argument("--check-pde", action="store_true")
    p.add_argument("--pde-tau", type=float, default=16.0)
    p.add_argument("--comparison", action="store_true",
                   help="use the non-degenerate fields (Lbar, L, d/ds)")
    return parser


def _config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(subcommand=ns.subcommand, k=ns.k, tol=ns.tol, out_dir=ns.out_dir,
                    format=ns.format, threads=ns.threads)
    if ns.subcommand == "brackets":
        cfg.options = {"point": list(ns.point), "depth": ns.depth}
    elif ns.subcommand == "eigen":
        cfg.options = {"tau": ns.tau, "fd_R": ns.fd_R, "fd_M": ns.fd_M, "fd_tol": ns.fd_tol}
    else:
        cfg.tau_grid = {"tau_min": ns.tau_min, "tau_max": ns.tau_max, "points": ns.points,
                        "geometric": not ns.linear}
        if ns.subcommand == "scaling":
            cfg.options = {"slope_tol": ns.slope_tol, "fit_tau_min": ns.fit_tau_min}
        else:
            cfg.boxes = {"V": ns.V, "Vprime": ns.Vprime}
            cfg.options = {"check_pde": ns.check_pde, "pde_tau": ns.pde_tau,
                           "comparison": ns.comparison}
            if ns.check_pde:
                cfg.grid = {"pde_levels": 3, "pde_base_spacing": [1 / 32, 1 / 64, 1 / 8]}
    return cfg


RUNNERS = {
    "brackets": run_brackets,
    "eigen": run_eigen,
    "scaling": run_scaling,
    "counterexample": run_counterexample,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    if ns.config:
        try:
            defaults = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"sumsquares: error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if not isinstance(defaults, dict):
            print("sumsquares: error: config must be a JSON object", file=sys.stderr)
            return EXIT_USAGE
        sub = parser._subparsers._group_actions[0].choices[ns.subcommand]
        sub.set_defaults(**{key.replace("-", "_"): v for key, v in defaults.items()})
        try:
            ns = parser.parse_args(argv)
        except SystemExit as exc:
            return exc.code
    try:
        cfg = _config_from_args(ns)
        cfg.validate()
        return RUNNERS[cfg.subcommand](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sumsquares: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
