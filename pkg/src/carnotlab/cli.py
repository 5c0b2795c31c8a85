"""``carnotlab`` command line: verify, pansu, nulldecomp and lp subcommands.

Exit codes: 0 success (or a reported, non-failing outcome), 1 a check failed,
2 usage or configuration error.  Every report carries ``meta`` with the config
hash, seed, tool version and wall time; apart from ``wall_time`` reruns with
the same configuration produce identical bytes regardless of ``--jobs``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .carnot_group import (
    CarnotGroup,
    verify_appendix_identities,
    verify_dilation_lemma,
    verify_group_axioms,
    verify_sigma_axioms,
)
from .descriptor import Descriptor
from .errors import CarnotLabError, ConfigError, UnsupportedError
from .homogeneous_metric import HomogeneousNorm, homothety_check, metric_axioms
from .lp_scalable import (
    LpSpace,
    box_map,
    check_box_map,
    filtration_table,
    geodesic_partition_error,
    lp_metric_axioms,
    one_parameter_curves,
)
from .negligibility_lab import GridSet, class_U_check, rasterize, theta_sensitivity
from .pansu import (
    DEFAULT_SCHEDULE,
    BoxSampler,
    ScalarFunction,
    coordinate_function,
    default_directions,
    distance_function,
    expression_function,
    linear_function,
    max_distance_function,
    norm_function,
    survey,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

# flags that never change report contents
_NEUTRAL = {"out", "format", "jobs", "config", "command"}

DEFAULTS = {
    "descriptor": None,
    "seed": 0,
    "trials": 100,
    "points": 100,
    "schedule": None,
    "tol_conv": 1e-4,
    "tol_hom": 1e-4,
    "theta": None,
    "out": None,
    "format": "json",
    "jobs": None,
    # pansu
    "function": "coordinate:1",
    "at": None,
    "box": "-2,2",
    "avoid_radius": 0.0,
    "oracle": False,
    # nulldecomp
    "shape": None,
    "resolution": None,
    "rounds": None,
    "generators": None,
    "input": None,
    # lp
    "radius": 2.0,
    "require_geodesic": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carnotlab", description="Carnot group experiments")
    parser.add_argument("--version", action="version", version=f"carnotlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        # defaults are None so that a config file can fill whatever is not given
        p.add_argument("--config", help="JSON file whose keys are flag names")
        p.add_argument("--descriptor", help="descriptor file or a group name (heisenberg, free(r,s), euclidean(k))")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="report path (stdout when omitted)")
        p.add_argument("--format", choices=("json", "csv"))
        p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
        p.add_argument("--tol-conv", dest="tol_conv", type=float)
        p.add_argument("--tol-hom", dest="tol_hom", type=float)

    p = sub.add_parser("verify", help="exact algebra and sampled metric suites")
    common(p)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("pansu", help="difference-quotient survey")
    common(p)
    p.add_argument("--function", help="coordinate:N | linear:[..] | norm | distance:[..] | max_distance:[[..],..] | expr:SOURCE")
    p.add_argument("--points", type=int)
    p.add_argument("--at", help="'identity' or a JSON list of points, instead of sampling")
    p.add_argument("--schedule", help="'geometric:BASE:N' (lambda_n = BASE^-n, n = 1..N) or comma-separated lambdas")
    p.add_argument("--box", help="sampling box 'LOW,HIGH'")
    p.add_argument("--avoid-radius", dest="avoid_radius", type=float,
                   help="skip samples this close to the function's singular point")
    p.add_argument("--oracle", action="store_const", const=True, help="compare with the horizontal-gradient oracle")

    p = sub.add_parser("nulldecomp", help="grid null decomposition")
    common(p)
    p.add_argument("--shape", help="empty | full | point | plane | line | sphere | circle | slab | dust")
    p.add_argument("--resolution", type=int)
    p.add_argument("--theta", type=float, help="line-measure threshold (default: 3 cell widths)")
    p.add_argument("--rounds", type=int, help="word repetitions m (default: topological dimension)")
    p.add_argument("--generators", help="comma-separated first-layer directions, from 1")
    p.add_argument("--input", help="grid set file (binary or JSON) instead of a shape")

    p = sub.add_parser("lp", help="lp-sum diagnostics")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--radius", type=float, help="box map target radius")
    p.add_argument("--require-geodesic", dest="require_geodesic", action="store_const", const=True,
                   help="fail with exit 2 when a component has no geodesic oracle")
    return parser


def _load_config(path: str, allowed: set[str]) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    out = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in allowed or name in ("config", "command"):
            raise ConfigError(f"unknown config key {key!r}")
        out[name] = value
    return out


def resolve(argv: list[str] | None) -> dict:
    args = build_parser().parse_args(argv)
    given = {k: v for k, v in vars(args).items() if v is not None}
    allowed = set(vars(args))
    cfg = {k: DEFAULTS[k] for k in allowed if k in DEFAULTS}
    if "config" in given:
        cfg.update(_load_config(given["config"], allowed))
    cfg.update(given)
    cfg["command"] = args.command
    if cfg.get("descriptor") is None and not (args.command == "nulldecomp" and cfg.get("input")):
        raise ConfigError("--descriptor is required")
    return cfg


def config_hash(cfg: dict) -> str:
    relevant = {k: v for k, v in sorted(cfg.items()) if k not in _NEUTRAL}
    relevant["command"] = cfg["command"]
    return hashlib.sha256(json.dumps(relevant, sort_keys=True, default=str).encode()).hexdigest()


def _jobs(cfg: dict) -> int:
    j = cfg.get("jobs")
    return max(1, int(j)) if j else (os.cpu_count() or 1)


def _emit(cfg: dict, report: dict, tables: dict[str, list[dict]], started: float) -> None:
    report["meta"] = {
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "version": __version__,
        "wall_time": round(time.perf_counter() - started, 6),
    }
    text = json.dumps(report, indent=2, sort_keys=True, default=str) + "\n"
    out = cfg.get("out")
    if cfg.get("format") == "csv":
        main_csv = _csv(next(iter(tables.values())) if tables else [], report["meta"])
        if out:
            Path(out).write_text(main_csv)
            for name, rows in list(tables.items())[1:]:
                Path(out).with_suffix(f".{name}.csv").write_text(_csv(rows, report["meta"]))
        else:
            sys.stdout.write(main_csv)
        return
    if out:
        Path(out).write_text(text)
        for name, rows in tables.items():
            Path(out).with_suffix(f".{name}.csv").write_text(_csv(rows, report["meta"]))
    else:
        sys.stdout.write(text)


def _csv(rows: list[dict], meta: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={meta['seed']} config_hash={meta['config_hash']} version={meta['version']}\n")
    if rows:
        cols = list(rows[0])
        w = csv.DictWriter(buf, cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# verify ----------------------------------------------------------------------


def _homothety_suite(group: CarnotGroup, n: HomogeneousNorm, trials: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 51])
    reports = []
    for _ in range(10):
        while True:
            coeffs = [int(c) for c in rng.integers(-5, 6, group.rank)]
            if any(coeffs):
                break
        v = group.horizontal(coeffs)
        pairs = [tuple(float(x) for x in rng.uniform(-10, 10, 2)) for _ in range(trials)]
        reports.append(homothety_check(n, v, pairs).to_dict())
    return {
        "suite": "homothety",
        "descriptor": group.label,
        "seed": seed,
        "ok": all(r["ok"] for r in reports),
        "checks": [{"name": f"direction_{i}", **r} for i, r in enumerate(reports)],
    }


def _metric_suite(group: CarnotGroup, n: HomogeneousNorm, trials: int, seed: int) -> dict:
    rep = metric_axioms(n, group, trials, seed)
    out = rep.to_dict()
    out.update({"suite": "metric_axioms", "seed": seed})
    return out


def _run_suite(task):
    name, group, n, trials, seed = task
    if name == "group_axioms":
        return verify_group_axioms(group, trials, seed).to_dict()
    if name == "appendix_identities":
        return verify_appendix_identities(group, trials, seed).to_dict()
    if name == "dilation_lemma":
        return verify_dilation_lemma(group, [2, 3, 5], trials, seed).to_dict()
    if name == "sigma_axioms":
        return verify_sigma_axioms(group, trials, seed).to_dict()
    if name == "homothety":
        return _homothety_suite(group, n, trials, seed)
    return _metric_suite(group, n, trials, seed)


def cmd_verify(cfg: dict, started: float) -> int:
    desc = Descriptor.load(cfg["descriptor"])
    group = desc.group()
    n = desc.norm(group)
    trials = int(cfg["trials"])
    if trials < 1:
        raise ConfigError("--trials must be >= 1")
    names = ["group_axioms", "appendix_identities", "sigma_axioms", "homothety", "metric_axioms"]
    skipped = []
    if group.step >= 2:
        names.insert(2, "dilation_lemma")
    else:
        skipped.append("dilation_lemma (needs step >= 2)")
    tasks = [(name, group, n, trials, cfg["seed"]) for name in names]
    jobs = _jobs(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            suites = list(pool.map(_run_suite, tasks))
    else:
        suites = [_run_suite(t) for t in tasks]
    failing = None
    for s in suites:
        if not s["ok"] and failing is None:
            bad = next((c["name"] for c in s.get("checks", []) if not c.get("ok", c.get("failures") == 0)), None)
            failing = f"{s['suite']}" + (f".{bad}" if bad else "")
    report = {
        "command": "verify",
        "descriptor": group.label,
        "norm": n.kind,
        "trials": trials,
        "ok": failing is None,
        "first_failure": failing,
        "skipped": skipped,
        "suites": suites,
    }
    rows = []
    for s in suites:
        for c in s.get("checks", []):
            rows.append({"suite": s["suite"], "check": c["name"], "ok": c.get("ok", c.get("failures") == 0),
                         "passed": c.get("passed", ""), "failures": c.get("failures", "")})
        if not s.get("checks"):
            rows.append({"suite": s["suite"], "check": "all", "ok": s["ok"], "passed": "", "failures": ""})
    _emit(cfg, report, {"checks": rows}, started)
    if failing:
        print(f"check failed: {failing}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# pansu -----------------------------------------------------------------------


def parse_schedule(spec) -> tuple[float, ...]:
    if spec is None:
        return DEFAULT_SCHEDULE
    if isinstance(spec, list):
        return tuple(float(x) for x in spec)
    spec = str(spec).strip()
    try:
        if spec.startswith("geometric:"):
            _, base, count = spec.split(":")
            return tuple(float(base) ** (-k) for k in range(1, int(count) + 1))
        return tuple(float(x) for x in spec.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse schedule {spec!r}") from None


def _json_arg(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError(f"{what} must be JSON, got {text!r}") from None


def _point(domain, raw):
    if isinstance(domain, LpSpace):
        if not isinstance(raw, dict):
            raise ConfigError("lp points are JSON objects {index: coordinates}")
        return domain.element({int(k): v for k, v in raw.items()})
    if not isinstance(raw, list):
        raise ConfigError("points are JSON coordinate lists")
    return domain.element([float(c) if isinstance(c, float) else c for c in raw])


def parse_function(spec: str, domain, n: HomogeneousNorm | None) -> tuple[ScalarFunction, object]:
    """Build a catalog function; also return its singular point (for ``--avoid-radius``)."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip()
    origin = domain.identity()
    if kind == "coordinate":
        try:
            idx = int(arg.split("@")[0]) - 1
            comp = int(arg.split("@")[1]) if "@" in arg else None
        except (ValueError, IndexError):
            raise ConfigError(f"coordinate needs an index from 1, got {arg!r}") from None
        if idx < 0:
            raise ConfigError("coordinate indices start at 1")
        if isinstance(domain, LpSpace) and comp is None:
            comp = 0
        return coordinate_function(idx, comp, f"coordinate:{arg}"), None
    if kind == "linear":
        return linear_function(_json_arg(arg, "linear weights")), None
    if kind == "norm":
        return norm_function(n), origin
    if kind == "distance":
        q = _point(domain, _json_arg(arg, "distance point"))
        return distance_function(q, n), q
    if kind == "max_distance":
        qs = [_point(domain, r) for r in _json_arg(arg, "max_distance points")]
        if not qs:
            raise ConfigError("max_distance needs at least one point")
        return max_distance_function(qs, n), None
    if kind == "expr":
        if isinstance(domain, LpSpace):
            raise UnsupportedError("expressions are only available on single groups")
        return expression_function(arg, domain, n), None
    raise ConfigError(f"unknown function kind {kind!r}")


def cmd_pansu(cfg: dict, started: float) -> int:
    desc = Descriptor.load(cfg["descriptor"])
    if desc.is_space:
        domain = desc.space()
        n = None
    else:
        domain = desc.group()
        n = desc.norm(domain)
    f, singular = parse_function(str(cfg["function"]), domain, n)
    schedule = parse_schedule(cfg.get("schedule"))
    points = None
    if cfg.get("at") is not None:
        at = cfg["at"]
        if at == "identity":
            points = [domain.identity()]
        else:
            raw = _json_arg(at, "--at") if isinstance(at, str) else at
            points = [_point(domain, r) for r in raw]
        if not points:
            raise ConfigError("--at lists no points")
    elif int(cfg["points"]) < 1:
        raise ConfigError("--points must be >= 1")
    try:
        lo, hi = (float(x) for x in str(cfg["box"]).split(","))
    except ValueError:
        raise ConfigError(f"--box must be 'LOW,HIGH', got {cfg['box']!r}") from None
    radius = float(cfg["avoid_radius"])
    sampler = BoxSampler(lo, hi, singular if radius > 0 else None, radius)
    oracle = bool(cfg.get("oracle"))
    if oracle and isinstance(domain, LpSpace):
        raise UnsupportedError("the horizontal-gradient oracle needs a single group")
    rep = survey(f, domain, sampler, int(cfg["points"]), schedule, float(cfg["tol_conv"]),
                 float(cfg["tol_hom"]), int(cfg["seed"]), default_directions(domain), points,
                 oracle, _jobs(cfg))
    report = {"command": "pansu", **rep.to_dict()}
    tables = {"points": rep.points}
    for idx, text in sorted(rep.failure_tables.items()):
        tables[f"quotients_{idx}"] = list(csv.DictReader(io.StringIO(text)))
    report["failure_tables"] = {str(k): v for k, v in sorted(rep.failure_tables.items())}
    _emit(cfg, report, tables, started)
    return EXIT_OK


# nulldecomp --------------------------------------------------------------------


def _load_grid(path: str) -> GridSet:
    data = Path(path).read_bytes()
    if data.lstrip().startswith(b"{"):
        return GridSet.from_json(data.decode())
    return GridSet.from_bytes(data)


def cmd_nulldecomp(cfg: dict, started: float) -> int:
    if cfg.get("input"):
        A = _load_grid(cfg["input"])
    else:
        desc = Descriptor.load(cfg["descriptor"])
        group = desc.group()
        shape = cfg.get("shape") or desc.get("shape")
        if not shape:
            raise ConfigError("nulldecomp needs --shape, a descriptor 'shape' key or --input")
        res = cfg.get("resolution") or desc.get("resolution", 64)
        if not isinstance(res, int) or res < 1:
            raise ConfigError("resolution must be a positive integer")
        A = rasterize(group, str(shape), res, desc.grid_bounds(group.dim), int(cfg["seed"]), **desc.shape_params())
    gens = None
    if cfg.get("generators"):
        raw = cfg["generators"]
        items = raw if isinstance(raw, list) else str(raw).split(",")
        try:
            gens = [int(g) - 1 for g in items]
        except ValueError:
            raise ConfigError(f"cannot parse generators {raw!r}") from None
    theta = cfg.get("theta")
    verdict = class_U_check(A, gens, theta, cfg.get("rounds"))
    dec = verdict.decomposition
    sens = theta_sensitivity(A, m_rounds=cfg.get("rounds"))
    exports = []
    out = cfg.get("out")
    if out:
        for i, piece in enumerate(dec.pieces, 1):
            path = Path(out).with_suffix(f".C{i}.grid")
            path.write_bytes(piece.to_bytes())
            exports.append(path.name)
        path = Path(out).with_suffix(".residual.grid")
        path.write_bytes(dec.residual.to_bytes())
        exports.append(path.name)
    report = {
        "command": "nulldecomp",
        "grid": A.header() | {"cells": A.count},
        "verdict": verdict.to_dict(),
        "residual_flag": "empty" if dec.residual_empty else "nonempty",
        "theta_sensitivity": sens,
        "exports": exports,
    }
    _emit(cfg, report, {"sensitivity": [{**r, "piece_counts": " ".join(map(str, r["piece_counts"]))} for r in sens],
                        "ladder": dec.to_dict()["ladder"]}, started)
    return EXIT_OK


# lp ---------------------------------------------------------------------------


def cmd_lp(cfg: dict, started: float) -> int:
    desc = Descriptor.load(cfg["descriptor"])
    space = desc.space()
    trials = int(cfg["trials"])
    if trials < 1:
        raise ConfigError("--trials must be >= 1")
    seed = int(cfg["seed"])
    axioms = lp_metric_axioms(space, trials, seed)

    rng = np.random.default_rng([seed, 61])
    elements = [space.random_element(rng, 0.5, 5) for _ in range(8)]
    elements += [space.single(k, space.component(k).group.generator(0)) for k in range(space.truncation)]
    table = filtration_table(space, elements)
    filtration_ok = all(r["member"] == r["expected"] for r in table)

    missing = [i for i in range(space.truncation) if space.component(i).geodesic is None]
    geodesic: dict
    if missing:
        if cfg.get("require_geodesic"):
            raise UnsupportedError(f"component {missing[0]} ({space.component(missing[0]).group.label}) has no geodesic oracle")
        geodesic = {"status": "skipped", "reason": f"component {missing[0]} has no geodesic oracle"}
    elif space.kind == "c0":
        geodesic = {"status": "skipped", "reason": "the sup-metric variant carries no geodesics"}
    else:
        worst = 0.0
        for _ in range(20):
            x = space.random_element(rng, 0.6, 5, exact=False, scale=3.0)
            y = space.random_element(rng, 0.6, 5, exact=False, scale=3.0)
            cuts = np.sort(rng.uniform(0, 1, 6))
            worst = max(worst, geodesic_partition_error(x, y, [0.0, *cuts, 1.0]))
        geodesic = {"status": "checked", "max_relative_error": worst, "ok": worst < 1e-9}

    dirs = [space.component(i).group.generator(0) for i in range(space.truncation)]
    bm = box_map(space, one_parameter_curves(space, dirs), float(cfg["radius"]), seed=seed)
    box = bm.to_dict()
    if bm.status != "inconclusive":
        box["check"] = check_box_map(bm, min(trials, 1000), seed).to_dict()
    box_ok = bm.status == "inconclusive" or box["check"]["ok"]

    ok = axioms.ok and filtration_ok and geodesic.get("ok", True) and box_ok
    report = {
        "command": "lp",
        "space": space.label,
        "p": space.p,
        "truncation": space.truncation,
        "ok": ok,
        "metric_axioms": axioms.to_dict(),
        "filtration": {"ok": filtration_ok, "rows": table},
        "geodesic": geodesic,
        "box_map": box,
    }
    _emit(cfg, report, {"filtration": table}, started)
    if not ok:
        print("check failed: lp diagnostics", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "pansu": cmd_pansu, "nulldecomp": cmd_nulldecomp, "lp": cmd_lp}


def main(argv: list[str] | None = None) -> int:
    started = time.perf_counter()
    try:
        cfg = resolve(argv)
        return COMMANDS[cfg["command"]](cfg, started)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CarnotLabError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
