"""Command-line front end: ``shsvl {certify,tune,simulate,sweep,classify}``.

Every command writes its CSV output plus ``manifest.json`` (the full
resolved configuration) into ``--out``.  ``--config FILE`` reads flat
``key = value`` lines whose keys mirror the long flags; flags given on the
command line take precedence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .certify import CertifyError, NotCertifiable, certify_mode
from .dynamics import AssumptionError, ShSvlParams, SimulationError, simulate
from .experiments import DEFAULT_SIGMAS, classify_demo, sweep, sweep_grid
from .graph import (GraphError, build_complete, build_directed_cycle, build_ring_lattice, check_assumptions,
                    load_graph)
from .loss import LossModelError, parse_loss
from .objectives import (DatasetError, SectorBound, load_dataset, make_logistic, random_quadratic,
                         synth_dataset, centralized_reference)
from .tune import TuneConfig, TuneError, tune, warm_start

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NOT_CERTIFIABLE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def parse_params(text: str) -> ShSvlParams:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected alpha,delta,zeta,eta")
    try:
        return ShSvlParams(*(float(p) for p in parts))
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric parameters {text!r}") from None


def float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_graph(spec: str):
    """A graph file, or ``cycle:N:W``, ``lattice:N:O1,O2,..:W`` or ``complete:N[:W]``."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "cycle":
            n, w = rest.split(":")
            return build_directed_cycle(int(n), float(w))
        if kind == "lattice":
            n, offs, w = rest.split(":")
            return build_ring_lattice(int(n), tuple(int(o) for o in offs.split(",")), float(w))
        if kind == "complete":
            n, _, w = rest.partition(":")
            return build_complete(int(n), float(w)) if w else build_complete(int(n))
    except ValueError as exc:
        raise ConfigError(f"bad graph spec {spec!r}: {exc}") from None
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"graph file not found: {spec}")
    return load_graph(path)


def _sector_args(p):
    p.add_argument("--kappa", type=float, help="condition ratio; uses the unit-Lipschitz sector")
    p.add_argument("--mu", type=float, help="strong convexity (with --L)")
    p.add_argument("--L", dest="big_l", type=float, help="Lipschitz constant (with --mu)")


def _common(p):
    p.add_argument("--config", help="flat key = value file mirroring the flags")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shsvl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    modes = ("lossless", "kappa", "sync", "edgewise", "absorbed")

    c = sub.add_parser("certify", help="certify a worst-case rate for fixed parameters")
    _common(c)
    c.add_argument("--mode", choices=modes, default="lossless")
    _sector_args(c)
    c.add_argument("--sigma", type=float)
    c.add_argument("--ploss", type=float, default=0.0)
    c.add_argument("--graph")
    c.add_argument("--params", type=parse_params, required=False)
    c.add_argument("--bisect-tol", type=float, default=1e-4)
    c.add_argument("--lower", type=float, help="lower end of the bisection interval")

    t = sub.add_parser("tune", help="Nelder-Mead search for parameters minimizing the certified rate")
    _common(t)
    t.add_argument("--mode", choices=modes, default="lossless")
    _sector_args(t)
    t.add_argument("--sigma", type=float)
    t.add_argument("--ploss", type=float, default=0.0)
    t.add_argument("--graph")
    t.add_argument("--init", type=parse_params, help="starting alpha,delta,zeta,eta (default: grid warm start)")
    t.add_argument("--budget", type=int, default=400)
    t.add_argument("--restarts", type=int, default=2)

    s = sub.add_parser("simulate", help="run the distributed algorithm and record errors")
    _common(s)
    s.add_argument("--graph", default="cycle:3:0.9")
    s.add_argument("--params", type=parse_params)
    s.add_argument("--algorithm", choices=("shsvl", "alg1", "svl"), default="shsvl")
    s.add_argument("--loss", default="none", help="none | sync:P | edge:P | script:PATH")
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--init", choices=("uniform", "zero"), default="uniform")
    s.add_argument("--objective", choices=("quadratic", "logistic"), default="quadratic")
    s.add_argument("--dim", type=int, default=2)
    _sector_args(s)
    s.add_argument("--dataset", help="CSV d1,d2,label for the logistic objective (default: synthetic)")
    s.add_argument("--perturb", help="K:AMPLITUDE uniform state perturbation before step K")

    w = sub.add_parser("sweep", help="certify over a grid of sigma, loss probability and mode")
    _common(w)
    w.add_argument("--kappa", type=float, default=10.0)
    w.add_argument("--sigmas", type=float_list, default=list(DEFAULT_SIGMAS))
    w.add_argument("--plosses", type=float_list, default=[0.0])
    w.add_argument("--modes", default="lossless", help="comma-separated lossless,sync")
    w.add_argument("--params", type=parse_params, help="fixed parameters (default: tune per point)")
    w.add_argument("--tune-at", type=float, help="tune at this loss probability, certify at each grid value")
    w.add_argument("--budget", type=int, default=300)
    w.add_argument("--workers", type=int, default=1)

    k = sub.add_parser("classify", help="logistic classification demo on a 7-node ring lattice")
    _common(k)
    k.add_argument("--dataset", help="CSV d1,d2,label (default: synthetic)")
    k.add_argument("--count", type=int, default=118, help="synthetic dataset size")
    k.add_argument("--ploss", type=float, default=0.3)
    k.add_argument("--steps", type=int, default=3000)
    k.add_argument("--budget", type=int, default=300)
    k.add_argument("--params", type=parse_params, help="physical alpha,delta,zeta,eta (default: tune)")
    return ap


def read_config(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("_", "-")] = val.strip()
    return out


def _subparser(ap, name):
    for act in ap._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices[name]
    raise KeyError(name)


def config_to_argv(sub: argparse.ArgumentParser, cfg: dict) -> list[str]:
    flags = {}
    for act in sub._actions:
        for opt in act.option_strings:
            if opt.startswith("--"):
                flags[opt[2:]] = act
    argv = []
    for key, val in cfg.items():
        if key in ("config",) or key not in flags:
            raise ConfigError(f"unknown config key {key!r}")
        argv += [f"--{key}", val]
    return argv


def parse_args(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        sub = _subparser(ap, args.command)
        extra = config_to_argv(sub, read_config(args.config))
        # command-line flags come last so they override the file
        rest = argv[argv.index(args.command) + 1:]
        args = ap.parse_args([args.command] + extra + rest)
    return args


def _sector(args):
    if args.mu is not None or args.big_l is not None:
        if args.mu is None or args.big_l is None:
            raise ConfigError("--mu and --L must be given together")
        try:
            return SectorBound(args.mu, args.big_l)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if args.kappa is None:
        return None
    if args.kappa < 1:
        raise ConfigError("--kappa must be at least 1")
    return SectorBound.normalized(args.kappa)


def _write_manifest(out: Path, args, outputs: dict, extra: dict | None = None):
    cfg = {}
    for key, val in sorted(vars(args).items()):
        if isinstance(val, ShSvlParams):
            val = list(val.as_tuple())
        cfg[key] = val
    doc = {"program": "shsvl", "version": __version__, "command": args.command, "config": cfg,
           "outputs": outputs}
    if extra:
        doc["results"] = extra
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _check_graph(g):
    rep = check_assumptions(g)
    if not rep.ok:
        raise AssumptionError("; ".join(rep.problems()))


def cmd_certify(args, out: Path) -> int:
    if args.params is None:
        raise ConfigError("certify needs --params alpha,delta,zeta,eta")
    sector = _sector(args)
    if sector is None:
        raise ConfigError("certify needs --kappa or --mu/--L")
    graph = resolve_graph(args.graph) if args.graph else None
    if graph is not None:
        _check_graph(graph)
    interval = None
    if args.lower is not None:
        interval = (args.lower, 1.0)
    try:
        res = certify_mode(args.mode, args.params, sector=sector, sigma=args.sigma, p_loss=args.ploss,
                           graph=graph, interval=interval, bisect_tol=args.bisect_tol)
    except CertifyError as exc:
        raise ConfigError(str(exc)) from None
    if isinstance(res, NotCertifiable):
        print(f"not certifiable: {res.reason} at rho={res.rho_tested:.6g}")
        _write_manifest(out, args, {}, {"rho": None, "status": "not_certifiable"})
        return EXIT_NOT_CERTIFIABLE
    (out / "certificate.json").write_text(res.to_json() + "\n")
    print(f"rho = {res.rho:.6f}  (residual {res.residual:.3e}, min eig {res.min_pd:.3g})")
    _write_manifest(out, args, {"certificate": "certificate.json"}, {"rho": res.rho, "status": "ok"})
    return EXIT_OK


def cmd_tune(args, out: Path) -> int:
    sector = _sector(args)
    if sector is None:
        raise ConfigError("tune needs --kappa or --mu/--L")
    graph = resolve_graph(args.graph) if args.graph else None
    if graph is not None:
        _check_graph(graph)
    cfg = TuneConfig(args.init or ShSvlParams(0.5, 0.5, 0.2, 1.0), mode=args.mode, sector=sector,
                     sigma=args.sigma, graph=graph, p_loss=args.ploss, max_evals=args.budget,
                     restarts=args.restarts, seed=args.seed)
    try:
        if args.init is None:
            cfg = replace(cfg, init=warm_start(cfg)[0])
        res = tune(cfg)
    except (TuneError, CertifyError) as exc:
        raise ConfigError(str(exc)) from None
    (out / "tune_log.csv").write_text(res.log_csv())
    p = res.params
    print(f"rho = {res.rho:.6f}  params = {p.alpha!r},{p.delta!r},{p.zeta!r},{p.eta!r}")
    if res.budget_exhausted:
        print("warning: evaluation budget exhausted before the simplex converged")
    _write_manifest(out, args, {"log": "tune_log.csv"},
                    {"rho": res.rho, "params": list(p.as_tuple()), "budget_exhausted": res.budget_exhausted})
    return EXIT_OK


def _objective(args, n):
    rng = np.random.default_rng(args.seed)
    if args.objective == "quadratic":
        sector = _sector(args) or SectorBound.normalized(10.0)
        return random_quadratic(n, args.dim, sector.mu, sector.big_l, rng)
    try:
        data = load_dataset(args.dataset) if args.dataset else synth_dataset(args.seed, 118)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    obj = make_logistic(data, n)
    obj.x_opt = centralized_reference(obj)
    return obj


def cmd_simulate(args, out: Path) -> int:
    if args.params is None:
        raise ConfigError("simulate needs --params alpha,delta,zeta,eta")
    graph = resolve_graph(args.graph)
    try:
        loss = parse_loss(args.loss)
        loss.validate(graph)
    except (LossModelError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    perturb = None
    if args.perturb:
        try:
            k, a = args.perturb.split(":")
            perturb = {int(k): float(a)}
        except ValueError:
            raise ConfigError(f"bad --perturb {args.perturb!r}; expected K:AMPLITUDE") from None
    params = args.params
    if args.algorithm == "svl":
        from .dynamics import shsvl_to_svl
        params = shsvl_to_svl(params)
    obj = _objective(args, graph.n)
    tr = simulate(graph, obj, params, steps=args.steps, loss=loss, seed=args.seed, init=args.init,
                  algorithm=args.algorithm, perturb=perturb)
    tr.to_csv(out / "trajectory.csv")
    try:
        rate = tr.rate()
    except ValueError:
        rate = float("nan")
    print(f"final error {tr.errors[-1]:.3e}  fitted rate {rate:.6f}")
    _write_manifest(out, args, {"trajectory": "trajectory.csv"},
                    {"final_error": float(tr.errors[-1]), "rate": rate, "diagnostics": tr.diagnostics})
    return EXIT_OK


def cmd_sweep(args, out: Path) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in ("lossless", "sync", "kappa")]
    if bad:
        raise ConfigError(f"sweep supports parameterized-sigma modes only, got {bad}")
    pts = sweep_grid(args.kappa, args.sigmas, args.plosses, modes)
    res = sweep(pts, params=args.params, tune_at=args.tune_at, budget=args.budget, workers=args.workers)
    (out / "sweep.csv").write_text(res.to_csv())
    for row in res.rows:
        print(",".join(str(v) for v in row.as_tuple()))
    _write_manifest(out, args, {"sweep": "sweep.csv"})
    return EXIT_OK


def cmd_classify(args, out: Path) -> int:
    try:
        data = load_dataset(args.dataset) if args.dataset else None
    except (FileNotFoundError, DatasetError) as exc:
        raise ConfigError(str(exc)) from None
    res = classify_demo(data, seed=args.seed, count=args.count, p_loss=args.ploss, steps=args.steps,
                        budget=args.budget, params=args.params)
    (out / "classify.csv").write_text(res.to_csv())
    lines = ["run,rate"] + [f"{k},{float(v)!r}" for k, v in res.rates.items()]
    (out / "classify_rates.csv").write_text("\n".join(lines) + "\n")
    print(f"kappa = {res.sector.kappa:.4g}  sigma = {res.sigma:.4f}  certified rho = {res.certified_rho:.6f}")
    for k, v in res.rates.items():
        print(f"{k}: fitted rate {v:.4f}, final relative error {res.errors[k][-1]:.3e}")
    p = res.params
    _write_manifest(out, args, {"curves": "classify.csv", "rates": "classify_rates.csv"},
                    {"params": list(p.as_tuple()), "certified_rho": res.certified_rho,
                     "mu": res.sector.mu, "L": res.sector.big_l})
    return EXIT_OK


COMMANDS = {"certify": cmd_certify, "tune": cmd_tune, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "classify": cmd_classify}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"shsvl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:   # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"shsvl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphError, DatasetError, LossModelError) as exc:
        print(f"shsvl: input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"shsvl: graph assumption check failed: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except SimulationError as exc:
        print(f"shsvl: simulation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
