"""``nds`` command line: validate, analyze, reduce, simulate, reproduce.

Machine-readable output (JSON, CSV) goes to stdout or files; diagnostics go
to stderr. Exit codes: 0 success, 1 property fails, 2 usage or parse error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .casestudy import DEFAULT_RUNS, DEFAULT_SEED, FIGURES, HORIZON, reproduce_figure
from .contraction import NotContracting, certify, certify_partial
from .dynsys import Metric, compile_system
from .expr import DomainError, ExprError
from .parser import ParseError, SystemSpec, parse_expr, parse_system
from .sim import IntegrationError, IntegratorConfig, run_ensemble, write_csv
from .spreduce import HypothesisFailure, NoConvergence, reduce_system, to_standard_form

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _read_spec(path: str) -> tuple[SystemSpec, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise UsageError(f"{path} is not valid UTF-8") from None
    return parse_system(text), raw


def _intervals(items, spec: SystemSpec) -> dict[str, tuple[float, float]]:
    out = {}
    for item in items or ():
        try:
            name, rng = item.split("=", 1)
            lo, hi = (float(v) for v in rng.split(":"))
        except ValueError:
            raise UsageError(f"bad interval {item!r}; expected NAME=LO:HI") from None
        out[name.strip()] = (lo, hi)
    try:
        spec.with_domain(out)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return out


def _parse_metric(text: str | None, names, spec: SystemSpec) -> Metric | None:
    if text is None or text == "identity":
        return None
    try:
        rows = json.loads(text)
    except json.JSONDecodeError:
        raise UsageError("--metric takes 'identity' or a JSON matrix") from None
    if not rows or any(len(r) != len(rows) for r in rows):
        raise UsageError("metric must be a square matrix")
    if len(rows) != len(names):
        raise UsageError(f"metric must be {len(names)}x{len(names)} for the selected block")
    if all(isinstance(v, (int, float)) for r in rows for v in r):
        return Metric(constant=np.array(rows, dtype=float))
    exprs = [[parse_expr(str(v)) for v in r] for r in rows]
    return Metric(exprs=exprs, variables=spec.states, params=spec.params, funcs=spec.funcs)


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    spec, _ = _read_spec(args.file)
    _err(f"ok: system {spec.name!r}: {len(spec.fast)} fast, {len(spec.slow)} slow states, "
         f"perturbation {spec.epsilon} = {spec.eps:g}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    spec, _ = _read_spec(args.file)
    spec = spec.with_domain(_intervals(args.domain, spec))
    box = spec.box()
    block = args.block
    if block == "fast" and not spec.fast:
        raise UsageError("system has no fast states")
    try:
        if block == "fast":
            field = compile_system(spec, **{spec.epsilon: 0.0})
            idx = list(range(len(spec.fast)))
            metric = _parse_metric(args.metric, spec.fast, spec)
            cert = certify_partial(field, metric, box, idx, samples=args.samples, seed=args.seed)
        elif block == "slow" and spec.fast:
            ms = to_standard_form(spec)
            metric = _parse_metric(args.metric, spec.slow, spec)
            if metric is not None and not metric.is_constant:
                raise UsageError("the reduced slow field supports constant metrics only")
            cert = certify(ms.g_bar_field, metric, box[len(spec.fast):],
                           samples=args.samples, seed=args.seed)
        else:
            field = compile_system(spec)
            metric = _parse_metric(args.metric, spec.states, spec)
            cert = certify(field, metric, box, samples=args.samples, seed=args.seed)
    except NotContracting as exc:
        _dump({"schema_version": 1, "contracting": False, "block": block,
               "worst_point": exc.point, "worst_eigenvalue": exc.lam_max})
        _err(str(exc))
        return EXIT_FAIL
    d = cert.to_dict()
    d["block"] = block
    _dump(d)
    _err(f"contracting: beta = {cert.beta:.6g}, chi = {cert.chi:.6g}, "
         f"worst point {np.round(cert.worst_point, 4).tolist()}")
    return EXIT_OK


def _parse_ic(items, spec: SystemSpec):
    if not items:
        return None
    vals = {}
    for item in items:
        try:
            k, v = item.split("=", 1)
            vals[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"bad initial condition {item!r}; expected NAME=VALUE") from None
    missing = set(spec.states) - set(vals)
    if missing:
        raise UsageError(f"initial condition missing {sorted(missing)}")
    return np.array([vals[s] for s in spec.states])


def cmd_reduce(args) -> int:
    spec, _ = _read_spec(args.file)
    if not spec.fast or not spec.slow:
        raise UsageError("reduction needs both fast and slow states")
    overrides = {}
    if args.constants:
        try:
            overrides = json.loads(Path(args.constants).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read constants: {exc}") from None
    metric_x = _parse_metric(args.metric_fast, spec.fast, spec)
    metric_y = _parse_metric(args.metric_slow, spec.slow, spec)
    try:
        rep = reduce_system(spec, overrides, metric_x, metric_y, _parse_ic(args.ic, spec),
                            samples=args.samples, seed=args.seed)
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    _dump(rep.to_dict())
    if rep.valid:
        _err(f"eps = {rep.epsilon:g} < eps_c = {rep.epsilon_c:.6g}: bounds valid")
        return EXIT_OK
    _err(f"eps = {rep.epsilon:g} >= eps_c = {rep.epsilon_c:.6g}: bounds invalid")
    return EXIT_FAIL


def _write_manifest(out: Path, command: str, raw: bytes | None, seed, config: dict, outputs,
                    argv=()) -> None:
    manifest = {
        "schema_version": 1,
        "tool": "neardecomp",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "input_sha256": hashlib.sha256(raw).hexdigest() if raw is not None else None,
        "seed": seed,
        "config": config,
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cmd_simulate(args) -> int:
    spec, raw = _read_spec(args.file)
    boxes = _intervals(args.box, spec)
    ic_box = [boxes.get(s, b) for s, b in zip(spec.states, spec.box())]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = IntegratorConfig(T=args.T, n_out=args.points)
    ens = run_ensemble(compile_system(spec), ic_box, args.runs, args.seed, cfg)
    write_csv(out / "trajectories.csv", ens.trajectories, spec.states)
    summary = ens.summary()
    summary["schema_version"] = 1
    summary["states"] = list(spec.states)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    _write_manifest(out, "simulate", raw, args.seed,
                    {"runs": args.runs, "T": args.T, "points": args.points,
                     "ic_box": {s: list(b) for s, b in zip(spec.states, ic_box)},
                     "atol": cfg.atol, "rtol": cfg.rtol, "method": cfg.method},
                    ["trajectories.csv", "summary.json"], args.argv)
    _dump(summary)
    _err(f"{args.runs} runs, {ens.n_divergent} divergent, {ens.n_clusters} final clusters")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    figs = sorted(FIGURES) if args.figure == "all" else [args.figure]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs, summaries = [], {}
    for fig in figs:
        res = reproduce_figure(fig, runs=args.runs, seed=args.seed, horizon=args.T)
        write_csv(out / f"{fig}.csv", res.ensemble.trajectories, ("d1", "d2", "D"))
        s = res.summary()
        (out / f"{fig}_summary.json").write_text(json.dumps(s, indent=2, default=_json_default) + "\n")
        outputs += [f"{fig}.csv", f"{fig}_summary.json"]
        summaries[fig] = s
        _err(f"{fig}: eps/eps_c = {res.ratio:g}, regime {res.regime}, "
             f"{res.ensemble.n_clusters} clusters, {res.ensemble.n_divergent} divergent")
    from .dynsys import BuildingModel

    src = BuildingModel().barycentric_source("lumped", 10).encode()
    _write_manifest(out, f"reproduce {args.figure}", src, args.seed,
                    {"runs": args.runs, "T": args.T, "ic_box": [-5.0, 5.0]}, outputs, args.argv)
    _dump(summaries if len(figs) > 1 else summaries[figs[0]])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nds", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate a system file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("analyze", help="sampled contraction certificate")
    a.add_argument("file")
    a.add_argument("--block", choices=("full", "fast", "slow"), default="full",
                   help="fast: eps = 0 fast rows, slow states frozen; slow: reduced slow field")
    a.add_argument("--metric", default=None, help="'identity' or JSON matrix (numbers or expressions)")
    a.add_argument("--samples", type=int, default=4096)
    a.add_argument("--domain", action="append", metavar="NAME=LO:HI")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reduce", help="standard form, eps_c, error bounds")
    r.add_argument("file")
    r.add_argument("--constants", help="JSON file overriding estimated constants")
    r.add_argument("--ic", action="append", metavar="NAME=VALUE")
    r.add_argument("--metric-fast", default=None)
    r.add_argument("--metric-slow", default=None)
    r.add_argument("--samples", type=int, default=2048)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_reduce)

    s = sub.add_parser("simulate", help="seeded ensemble from the domain box")
    s.add_argument("file")
    s.add_argument("--runs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--T", type=float, default=50.0)
    s.add_argument("--points", type=int, default=201)
    s.add_argument("--box", action="append", metavar="NAME=LO:HI")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("reproduce", help="building experiments at eps/eps_c = 0.5, 2.5, 5")
    g.add_argument("figure", choices=(*sorted(FIGURES), "all"))
    g.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--T", type=float, default=HORIZON)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        args = parser.parse_args(argv)
        args.argv = argv
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if os.environ.get("NDS_THREADS"):
        try:
            int(os.environ["NDS_THREADS"])
        except ValueError:
            _err("warning: ignoring non-integer NDS_THREADS")
    try:
        return args.func(args)
    except ParseError as exc:
        _err(f"{args.file}: error: {exc}")
        return EXIT_USAGE
    except UsageError as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE
    except (DomainError, ExprError, NoConvergence, HypothesisFailure, IntegrationError,
            np.linalg.LinAlgError) as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
