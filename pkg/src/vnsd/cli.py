"""Command-line entry points (``vnsd <subcommand>``).

Exit codes: 0 success, 1 failed verification or runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cf
from . import grid_fields as gf

TIMESERIES_HELP = "timeseries.csv: t,kinetic,elastic,diss_u,diss_F,residual,div_u_max,divFt_l2"
CKN_HELP = "ckn.csv: x,y,z,t,r,A,B,C,D,E,Ebar,script_E"
SERRIN_HELP = "serrin.csv: s,s_prime,value"
RESCALE_HELP = "rescale.csv: x,y,z,t,r,lambda,Ebar_rescaled,lambda_Ebar,E_rescaled,lambda_E"
SCAN_HELP = "scan.csv: center,x,y,z,t,r,B,estimate,flag,eps; flagged.csv: t,x,y,z"
INEQ_HELP = ("<lemma_id>.csv: lemma_id,sample,r,rho,lhs,rhs_term_1..,ratio; "
             "inequalities_summary.csv: lemma_id,samples,c_fit,worst_sample,worst_r,worst_rho,seed,count,resolution")
COVER_HELP = "covering.csv: delta,premeasure,cylinders,points"
REPORT_HELP = "summary.csv: source,quantity,value; legend.txt: one line per quantity"


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------------

def _load_cfg(args) -> dict:
    return cf.load_config(args.config) if args.config else {}


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_radii(text: str) -> tuple:
    try:
        radii = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise UsageError(f"--radii: not a list of numbers: {text!r}") from exc
    if not radii:
        raise UsageError("--radii: empty list")
    return radii


def _parse_centers(text: str) -> list:
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            vals = cf.floats(chunk)
            if len(vals) != 4:
                raise UsageError(f"centre {chunk!r} needs four numbers x,y,z,t")
            out.append(vals)
    return out


def _window_from_run(run_dir: Path):
    from .diagnostics import SpaceTimeWindow
    from .persistence import read_checkpoint

    paths = sorted(run_dir.glob("ckpt_*.vnsd"))
    if not paths:
        raise FileNotFoundError(f"no checkpoints ckpt_*.vnsd in {run_dir}")
    return SpaceTimeWindow.from_states([read_checkpoint(p) for p in paths])


def _default_centers(win, per_axis: int) -> list:
    t0, t1 = win.span
    tm = 0.5 * (t0 + t1)
    g = win.grid
    axes = [[(k + 0.5) * L / per_axis for k in range(per_axis)] for L in g.periods]
    return [(x, y, z, tm) for x in axes[0] for y in axes[1] for z in axes[2]]


def _run_dir(cfg: dict, key: str, args) -> Path:
    run = cfg.get(key) or cfg.get("run.dir") or args.out
    if not run:
        raise UsageError(f"set {key} in the config or pass --out pointing at a run directory")
    return Path(run)


# -- subcommands -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .solver import run

    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg["solver.seed"] = str(args.seed)
    conf = cf.solver_config(cfg)
    out = _out_dir(args, "run")
    t = time.perf_counter()
    traj = run(conf, out)
    last = traj.budgets[-1] if traj.budgets else None
    print(f"simulate: {conf.steps} steps on {conf.points} to t={traj.final.time!r} in {time.perf_counter() - t:.2f}s")
    if last is not None:
        print(f"  kinetic={last.kinetic:.6g} elastic={last.elastic:.6g} residual={last.cumulative_residual:.3e}")
    print(f"  output: {out}")
    return 0


def cmd_diagnose(args) -> int:
    from . import diagnostics as dg

    cfg = _load_cfg(args)
    radii = _parse_radii(args.radii or cfg.get("diagnose.radii", "0.5"))
    win = _window_from_run(_run_dir(cfg, "diagnose.run", args))
    out = _out_dir(args, "diagnose")
    centers = (_parse_centers(cfg["diagnose.centers"]) if "diagnose.centers" in cfg
               else _default_centers(win, cf.get(cfg, "diagnose.centers_per_axis", 1, int)))
    qs = []
    for c in centers:
        for r in radii:
            qs.append(dg.ckn_quantities(win, dg.ParabolicCylinder(c[:3], c[3], r)))
    dg.write_ckn_csv(out / "ckn.csv", qs)
    s, sp = cf.floats(cfg.get("diagnose.serrin", "5,10"))
    with open(out / "serrin.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("s", "s_prime", "value"))
        w.writerow((repr(s), repr(sp), repr(dg.serrin_norm(win, s, sp))))
    lam = args.lam if args.lam is not None else cf.get(cfg, "diagnose.lambda", None, float)
    if lam is not None:
        with open(out / "rescale.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESCALE_HELP.split(": ", 1)[1].split(","))
            for c in centers:
                rw = dg.rescale(win, c[:3], c[3], lam)
                for r in radii:
                    big = dg.ParabolicCylinder((0, 0, 0), 0.0, r / lam)
                    orig = dg.ParabolicCylinder(c[:3], c[3], r)
                    w.writerow([*(repr(float(v)) for v in c), repr(r), repr(lam),
                                repr(dg.quantity_Ebar(rw, big)), repr(lam * dg.quantity_Ebar(win, orig)),
                                repr(dg.quantity_E(rw, big)), repr(lam * dg.quantity_E(win, orig))])
    print(f"diagnose: {len(qs)} cylinders written to {out / 'ckn.csv'}")
    return 0


def cmd_scan(args) -> int:
    from . import diagnostics as dg

    cfg = _load_cfg(args)
    radii = _parse_radii(args.radii or cfg.get("scan.radii", "0.5,0.25,0.125"))
    win = _window_from_run(_run_dir(cfg, "scan.run", args))
    out = _out_dir(args, "scan")
    eps = args.eps if args.eps is not None else cf.get(cfg, "scan.eps", 1e-2, float)
    centers = (_parse_centers(cfg["scan.centers"]) if "scan.centers" in cfg
               else _default_centers(win, cf.get(cfg, "scan.centers_per_axis", 2, int)))
    rep = dg.criterion_scan(win, centers, radii, eps, cf.get(cfg, "scan.m", 3, int))
    rep.to_csv(out / "scan.csv")
    with open(out / "flagged.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "x", "y", "z"))
        for row in rep.flagged_points():
            w.writerow([repr(float(v)) for v in row])
    print(f"scan: {len(centers)} centres, {rep.flag_count} flagged at eps={eps!r}")
    return 0


def cmd_inequalities(args) -> int:
    from . import inequality_lab as il

    cfg = _load_cfg(args)
    out = _out_dir(args, "inequalities")
    lemmas = [s.strip() for s in cfg.get("ineq.lemmas", "interpolation,cubic_bound").split(",") if s.strip()]
    pairs = il.DEFAULT_PAIRS
    if "ineq.pairs" in cfg:
        pairs = tuple(tuple(cf.floats(p.replace(":", ","))) for p in cfg["ineq.pairs"].split(";") if p.strip())
    points = cf.ints(cfg.get("ineq.points", "16,16,16"))
    ens = il.EnsembleSpec(
        generator=cfg.get("ineq.generator", "random_solenoidal"),
        count=cf.get(cfg, "ineq.count", 10, int),
        seed=args.seed if args.seed is not None else cf.get(cfg, "ineq.seed", 0, int),
        points=points * 3 if len(points) == 1 else points,
        pairs=pairs,
        slope=cf.get(cfg, "ineq.slope", -5.0 / 3.0, float),
        amplitude=cf.get(cfg, "ineq.amplitude", 1.0, float),
        kcut=cf.get(cfg, "ineq.kcut", None, float),
        dt=cf.get(cfg, "ineq.dt", 1e-3, float),
        warmup_steps=cf.get(cfg, "ineq.warmup_steps", 50, int),
    )
    reports = []
    if "interpolation" in lemmas:
        reports.append(il.interpolation_check(ens, cf.get(cfg, "ineq.exponent", 3.0, float)))
    rest = [k for k in lemmas if k != "interpolation"]
    if rest:
        reports += list(il.lemma_ratio_checks(rest, ens).values())
    with open(out / "inequalities_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(INEQ_HELP.split("inequalities_summary.csv: ", 1)[1].split(","))
        for rep in reports:
            rep.to_csv(out / f"{rep.lemma_id}.csv")
            worst = rep.worst()
            w.writerow([rep.lemma_id, len(rep.samples), repr(rep.c_fit),
                        worst.index if worst else "", repr(worst.r) if worst else "",
                        repr(worst.rho) if worst else "", rep.seed, rep.count, "x".join(map(str, rep.resolution))])
            print(f"inequalities: {rep.lemma_id} c_fit={rep.c_fit:.6g} over {len(rep.samples)} samples")
    return 0


def _read_points(path: Path) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return np.zeros((0, 4))
    head = [h.strip() for h in rows[0]]
    if head[:4] != ["t", "x", "y", "z"]:
        raise UsageError(f"{path}: expected header t,x,y,z")
    return np.array([[float(v) for v in r[:4]] for r in rows[1:] if r], dtype=float).reshape(-1, 4)


def cmd_hausdorff(args) -> int:
    from .covering import covering_ladder, write_covering_csv

    cfg = _load_cfg(args)
    out = _out_dir(args, "hausdorff")
    src = Path(cfg.get("hausdorff.points", out / "flagged.csv"))
    pts = _read_points(src)
    text = args.delta_ladder or cfg.get("hausdorff.deltas", "0.1,0.05,0.025")
    deltas = _parse_radii(text)
    ests = covering_ladder(pts, deltas)
    write_covering_csv(out / "covering.csv", ests)
    for e in ests:
        print(f"hausdorff: delta={e.delta!r} cylinders={e.count} premeasure={e.premeasure!r}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite()
    width = max(len(n) for n, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"verify: {len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _summarise(path: Path) -> list:
    rows = []
    with open(path) as fh:
        data = list(csv.DictReader(fh))
    name = path.name
    if not data:
        return rows
    if name == "timeseries.csv":
        last = data[-1]
        for k in ("t", "kinetic", "elastic", "residual", "div_u_max", "divFt_l2"):
            rows.append((name, f"final_{k}", last[k]))
    elif name == "scan.csv":
        flags = {}
        for d in data:
            flags[d["center"]] = d["flag"]
        rows.append((name, "centres", str(len(flags))))
        rows.append((name, "flagged", str(sum(int(v) for v in flags.values()))))
    elif name == "covering.csv":
        for d in data:
            rows.append((name, f"premeasure_delta_{d['delta']}", d["premeasure"]))
    elif name == "inequalities_summary.csv":
        for d in data:
            rows.append((name, f"c_fit_{d['lemma_id']}", d["c_fit"]))
    elif name == "ckn.csv":
        for k in ("A", "B", "C", "D", "E", "Ebar"):
            rows.append((name, f"max_{k}", repr(max(float(d[k]) for d in data))))
    return rows


REPORT_LEGEND = {
    "final_*": "last row of the energy time series",
    "centres / flagged": "criterion scan centre count and flagged count",
    "premeasure_delta_*": "covering premeasure sum r_i at each scale",
    "c_fit_*": "fitted inequality constant per lemma id",
    "max_*": "largest cylinder quantity over the diagnosed cylinders",
}


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, "report")
    inputs = [Path(p) for p in cfg.get("report.inputs", str(out)).split(",") if p.strip()]
    rows = []
    for base in inputs:
        files = sorted(base.rglob("*.csv")) if base.is_dir() else [base]
        for f in files:
            if f.name != "summary.csv":
                rows += _summarise(f)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("source", "quantity", "value"))
        w.writerows(rows)
    (out / "legend.txt").write_text("".join(f"{k}: {v}\n" for k, v in REPORT_LEGEND.items()))
    print(f"report: {len(rows)} summary rows written to {out / 'summary.csv'}")
    return 0


COMMANDS = {
    "simulate": (cmd_simulate, "run the solver from a config", TIMESERIES_HELP + "; checkpoints ckpt_NNNNNN.vnsd; manifest.txt"),
    "diagnose": (cmd_diagnose, "cylinder quantities from a run's checkpoints", "; ".join((CKN_HELP, SERRIN_HELP, RESCALE_HELP))),
    "scan": (cmd_scan, "criterion scan over dyadic radii", SCAN_HELP),
    "inequalities": (cmd_inequalities, "fit inequality constants over an ensemble", INEQ_HELP),
    "hausdorff": (cmd_hausdorff, "covering premeasure of flagged points", COVER_HELP + "; input points CSV header t,x,y,z"),
    "verify": (cmd_verify, "run the built-in invariant suite", "prints one PASS/FAIL line per check"),
    "report": (cmd_report, "aggregate CSVs into summary tables", REPORT_HELP),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vnsd", description="Damped viscoelastic Navier-Stokes solver and regularity diagnostics")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (_, desc, schema) in COMMANDS.items():
        p = sub.add_parser(name, help=desc, description=desc, epilog=f"CSV schema: {schema}")
        p.add_argument("--config", metavar="PATH", help="key=value config file")
        p.add_argument("--out", metavar="DIR", help="output directory (created if absent)")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--eps", type=float, metavar="X", help="scan threshold")
        p.add_argument("--radii", metavar="LIST", help="comma-separated dyadic radii, largest first")
        p.add_argument("--lambda", dest="lam", type=float, metavar="X", help="rescaling factor in (0, 1]")
        p.add_argument("--delta-ladder", metavar="LIST", help="comma-separated covering scales")
        p.add_argument("--threads", type=int, metavar="N", help="FFT worker threads (default VNSD_THREADS or 1)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads if args.threads is not None else int(os.environ.get("VNSD_THREADS", "1") or 1)
    try:
        gf.set_workers(threads)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        return COMMANDS[args.command][0](args)
    except (UsageError, cf.ConfigError) as exc:
        print(f"vnsd {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"vnsd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
