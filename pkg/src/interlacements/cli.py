"""Command-line entry point.

Every subcommand takes its parameters from flags or from a JSON file given
with ``--config`` (flags win). Primary output goes to ``--out`` or stdout in
the chosen ``--format``; run metadata with the timestamp goes to a separate
``<out>.meta.json`` so that primary outputs are byte-identical across reruns.

Exit codes: 0 success, 1 validation error, 2 runtime or numerical error,
3 verification suite failure.
"""

import argparse
import csv
import datetime
import io
import json
import platform
import sys

import jsonschema
import numpy as np
import scipy

from . import __version__, functionals, rods, verification
from .errors import NumericalError, ValidationError
from .lattice_green import lattice_green, potential_kernel_model
from .potential_theory import SiteSet
from .sampler import SamplerConfig, default_workers, sample_fields, write_binary

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

_points = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
}
_numbers = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_levels = {"oneOf": [{"type": "number", "minimum": 0}, {"type": "array", "minItems": 1,
                                                         "items": {"type": "number", "minimum": 0}}]}
COMMON = {
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "replicas": {"type": "integer", "minimum": 1},
    "workers": {"type": "integer", "minimum": 1},
    "out": {"type": "string"},
    "format": {"enum": ["csv", "json", "binary"]},
}
SCHEMAS = {
    "green": {"points": _points, "d": {"type": "integer", "minimum": 3}},
    "akernel": {"points": _points},
    "capacity": {"sites": _points},
    "laplace": {"sites": _points, "V": _numbers, "u": _levels,
                "route": {"enum": ["subsets", "operator"]}, "discrete": {"type": "boolean"}},
    "coeffs": {"sites": _points, "V": _numbers, "u": {"type": "number", "minimum": 0},
               "n_max": {"type": "integer", "minimum": 1, "maximum": functionals.MAX_SERIES_TERMS}},
    "sample": {"sites": _points, "u": _levels, "mode": {"enum": ["exact", "truncation"]},
               "radius": {"type": "integer", "minimum": 1}},
    "rods": {"lambda": _points, "W": _numbers, "alpha": {"type": "number", "exclusiveMinimum": 0},
             "grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 2}},
             "n_max": {"type": "integer", "minimum": 1, "maximum": rods.MAX_COEFFS}},
    "verify": {"suite": {"enum": sorted(verification.SUITES)}},
}
JSON_FLAGS = {"points", "sites", "V", "u", "lambda", "W", "grid"}
DEFAULTS = {
    "seed": 0, "format": "json", "d": 3, "u": 1.0, "route": "subsets", "discrete": False,
    "n_max": 8, "mode": "exact", "radius": 16, "alpha": 1.0, "grid": [2**k for k in range(8, 17)],
}


def schema_for(command):
    props = dict(COMMON)
    props.update(SCHEMAS[command])
    return {"type": "object", "properties": props, "additionalProperties": False}


def validate(command, params):
    try:
        jsonschema.validate(params, schema_for(command))
    except jsonschema.ValidationError as exc:
        where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in exc.absolute_path)
        raise ValidationError(f"{where}: {exc.message}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser():
    p = _Parser(prog="interlacements", description="Occupation fields of random interlacements on Z^d.")
    p.add_argument("--version", action="version",
                   version=f"interlacements {__version__} (python {platform.python_version()}, "
                           f"numpy {np.__version__}, scipy {scipy.__version__})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--workers", type=int, help="default from $INTERLACEMENTS_WORKERS")
    common.add_argument("--out", help="output path (stdout if omitted)")
    common.add_argument("--format", choices=["csv", "json", "binary"])
    common.add_argument("--config", help="JSON file with parameters; flags override it")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, *flags):
        sp = sub.add_parser(name, help=help_, parents=[common])
        for flag, kw in flags:
            sp.add_argument(flag, **kw)
        return sp

    pts = ("--points", {"help": "JSON list of lattice points"})
    sites = ("--sites", {"help": "JSON list of sites of K"})
    V = ("--V", {"help": "JSON list of potential values on K"})
    add("green", "Green function g(x)", pts, ("--d", {"type": int}))
    add("akernel", "planar potential kernel a(y)", pts)
    add("capacity", "equilibrium measure and capacity of K", sites)
    add("laplace", "exact Laplace functional", sites, V, ("--u", {"help": "level or JSON list"}),
        ("--route", {"choices": ["subsets", "operator"]}),
        ("--discrete", {"action": "store_const", "const": True, "help": "visit counts instead of times"}))
    add("coeffs", "series coefficients of the log Laplace functional", sites, V,
        ("--u", {"type": float}), ("--n-max", {"type": int, "dest": "n_max"}))
    add("sample", "sample occupation fields", sites, ("--u", {"help": "level or JSON list"}),
        ("--mode", {"choices": ["exact", "truncation"]}), ("--radius", {"type": int}))
    add("rods", "rod coefficients over an N grid", ("--lambda", {"dest": "lambda", "help": "JSON planar sites"}),
        ("--W", {"help": "JSON weights on Lambda"}), ("--alpha", {"type": float}),
        ("--grid", {"help": "JSON list of rod lengths"}), ("--n-max", {"type": int, "dest": "n_max"}))
    add("verify", "run a verification suite", ("suite", {"nargs": "?", "choices": sorted(verification.SUITES)}))
    return p


def _json_arg(name, text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"$.{name}: malformed JSON ({exc.msg})") from None


def gather(args):
    """Merge config file and flags into one validated parameter dict."""
    params = {}
    if args.config:
        try:
            with open(args.config) as fh:
                params = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config}: malformed JSON ({exc.msg})") from None
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from None
        if not isinstance(params, dict):
            raise ValidationError("$: config must be a JSON object")
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        if key in JSON_FLAGS and isinstance(value, str):
            value = _json_arg(key, value)
        params[key] = value
    validate(args.command, params)
    allowed = set(COMMON) | set(SCHEMAS[args.command])
    out = {k: v for k, v in DEFAULTS.items() if k in allowed}
    out.update(params)
    if "workers" not in out:
        out["workers"] = default_workers()
    return out


def _need(params, *keys):
    for k in keys:
        if k not in params:
            raise ValidationError(f"missing parameter {k!r}")


def _site_set(params, d=3):
    sites = params["sites"]
    if any(len(s) != d for s in sites):
        raise ValidationError(f"$.sites: every site needs {d} coordinates")
    return SiteSet(lattice_green(d), [tuple(s) for s in sites])


def _potential(params, K):
    V = np.asarray(params["V"], dtype=float)
    if V.shape != (len(K),):
        raise ValidationError(f"$.V: expected {len(K)} values, got {V.size}")
    return V


def _levels(params):
    return [float(x) for x in np.atleast_1d(params["u"])]


def _coords(prefix, p):
    return {f"{prefix}{i}": int(c) for i, c in enumerate(p)}


def cmd_green(params):
    _need(params, "points")
    model = lattice_green(params["d"])
    pts = np.asarray(params["points"])
    if pts.ndim != 2 or pts.shape[1] != params["d"]:
        raise ValidationError(f"$.points: every point needs {params['d']} coordinates")
    vals = model.values(pts)
    rows = [dict(_coords("x", p), g=float(v)) for p, v in zip(pts, vals)]
    return {"g0": model.g0}, rows


def cmd_akernel(params):
    _need(params, "points")
    pts = np.asarray(params["points"])
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError("$.points: every point needs 2 coordinates")
    a = potential_kernel_model()
    return {}, [dict(_coords("y", p), a=float(a(tuple(p)))) for p in pts]


def cmd_capacity(params):
    _need(params, "sites")
    K = _site_set(params)
    rows = [dict(_coords("x", s), e=float(e)) for s, e in zip(K.sites, K.e)]
    return {"capacity": float(K.cap)}, rows


def cmd_laplace(params):
    _need(params, "sites", "V")
    K = _site_set(params)
    V = _potential(params, K)
    if (V < 0).any():
        raise ValidationError("$.V: potential must be nonnegative")
    rows = []
    for u in _levels(params):
        if params["discrete"]:
            value = functionals.discrete_laplace(K, V, u)
        elif params["route"] == "operator":
            value = functionals.laplace_exact_operator(K, V, u)
        else:
            value = functionals.laplace_exact_subsets(K, V, u)
        rows.append({"u": u, "laplace": float(value), "vacancy": float(np.exp(-u * K.cap))})
    return {"route": "discrete" if params["discrete"] else params["route"]}, rows


def cmd_coeffs(params):
    _need(params, "sites", "V")
    K = _site_set(params)
    V = _potential(params, K)
    u = float(np.atleast_1d(params["u"])[0])
    c = functionals.series_coefficients(K, V, u, params["n_max"])
    return {"u": u}, [{"n": n + 1, "coefficient": float(v)} for n, v in enumerate(c)]


def cmd_sample(params):
    _need(params, "sites")
    K = _site_set(params)
    cfg = SamplerConfig(seed=params["seed"], replicas=params.get("replicas", 1000), mode=params["mode"],
                        radius=params["radius"], workers=params["workers"])
    fs = sample_fields(K, _levels(params), cfg)
    if params["format"] == "binary":
        return {"binary": fs}, None
    rows = []
    for k, u in enumerate(fs.levels):
        for r in range(fs.L.shape[1]):
            row = {"u": float(u), "replica": r}
            row.update({f"L{j}": float(v) for j, v in enumerate(fs.L[k, r])})
            row.update({f"ell{j}": int(v) for j, v in enumerate(fs.ell[k, r])})
            rows.append(row)
    return {"sites": [list(s) for s in fs.sites]}, rows


def cmd_rods(params):
    _need(params, "lambda", "W")
    n_max = min(params["n_max"], rods.MAX_COEFFS)
    rep = rods.limit_characteristics(params["alpha"], params["lambda"], params["W"], k_max=(n_max + 1) // 2)
    rows = []
    for N in params["grid"]:
        spec = rods.RodSpec(params["lambda"], params["W"], N, params["alpha"])
        a = rods.coeff_a_N(spec, n_max)
        t = rods.coeff_tilde_a_N(N, params["alpha"], n_max)
        row = {"N": N, "tau_N": rods.tau_N(N)}
        row.update({f"a{n + 1}": float(v) for n, v in enumerate(a)})
        row.update({f"tilde_a{n + 1}": float(v) for n, v in enumerate(t)})
        rows.append(row)
    summary = {"energy": rep.energy, "a_limits": rep.a_limits[:n_max].tolist(),
               "tilde_limits": rep.tilde_limits[:n_max].tolist(), "tau_limit": rods.LIMIT_TAU}
    return summary, rows


def cmd_verify(params):
    _need(params, "suite")
    report = verification.run_suite(params["suite"], params["seed"], params.get("replicas"), params["workers"])
    d = report.as_dict()
    rows = [{"stat": v["stat"], "kind": v["kind"], "reference": v["reference"], "estimate": v["estimate"],
             "z": v["z"], "threshold": v["threshold"], "passed": v["passed"]} for v in d["verdicts"]]
    summary = {k: v for k, v in d.items() if k != "verdicts"}
    return summary, rows


COMMANDS = {
    "green": cmd_green, "akernel": cmd_akernel, "capacity": cmd_capacity, "laplace": cmd_laplace,
    "coeffs": cmd_coeffs, "sample": cmd_sample, "rods": cmd_rods, "verify": cmd_verify,
}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(command, params, summary, rows):
    fmt = params["format"]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = list(rows[0]) if rows else []
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
        return buf.getvalue()
    doc = {"command": command, "params": {k: v for k, v in params.items() if k not in ("out", "workers")}}
    doc.update(summary)
    doc["rows"] = rows
    return json.dumps(doc, indent=2) + "\n"


def _write_meta(path, command, argv):
    meta = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(f"{path}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def run(argv=None, stdout=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        params = gather(args)
        if params["format"] == "binary" and args.command != "sample":
            raise ValidationError("binary output is only available for 'sample'")
        if params["format"] == "binary" and "out" not in params:
            raise ValidationError("binary output needs --out")
        summary, rows = COMMANDS[args.command](params)
        if params["format"] == "binary":
            write_binary(params["out"], summary["binary"])
        else:
            text = render(args.command, params, summary, rows)
            if "out" in params:
                with open(params["out"], "w") as fh:
                    fh.write(text)
            else:
                stdout.write(text)
        if "out" in params:
            _write_meta(params["out"], args.command, argv)
        if args.command == "verify" and not summary["passed"]:
            print(f"suite {summary['suite']} failed: {summary['exceedances']} exceedances "
                  f"(allowed {summary['allowed_exceedances']}) or a failed exact check", file=sys.stderr)
            return EXIT_VERIFY
        return EXIT_OK
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())
