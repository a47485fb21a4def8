"""Command-line harness: ``oave {convergence,roundtrip,edit,noise,replay}``.

Every command writes a ``*.manifest.json`` next to its outputs holding the
fully resolved parameters; ``oave replay`` feeds them back through the same
code path. Exit codes: 0 success, 1 usage or configuration error, 2 numeric
failure.

CSV schemas (header always written):

- convergence: ``solver,n_steps,endpoint_error,ratio_to_previous``
- roundtrip:   ``k_iters,combine,seed,relative_l2`` (summary rows use
  ``seed`` = ``mean`` / ``median``)
- edit metrics: ``metric,value``
- edit steps:  ``step,t,t_mid,self_inject_start,cross_inject_start,
  self_inject_mid,cross_inject_mid,norm_r,norm_e``
- inversion log: ``step,t,norm``
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .attention import ToyDenoiserConfig
from .errors import ConfigError, NumericError, OaveError, UsageError
from .gridio import read_grid, write_grid
from .latent import Codec, Latent, codec_decode, codec_encode, gaussian_noise
from .oracles import AnalyticField, ZeroField, reference_integrate
from .pipeline import (
    EditConfig,
    config_to_dict,
    default_config,
    reconstruction_report,
    run_edit,
)
from .scheduler import (
    SOLVERS,
    InversionMode,
    invert_trajectory,
    make_time_grid,
    sample_trajectory,
)

log = logging.getLogger("oave")


def fmt(x) -> str:
    """Full-precision decimal rendering (round-trips through float())."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _workers() -> int:
    cap = os.environ.get("OAVE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError("OAVE_THREADS", f"not an integer: {cap!r}")
    return n


def _write_manifest(path: Path, command: str, params: dict, artifacts: dict, timings: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "params": params,
        "seeds": {k: v for k, v in params.items() if "seed" in k},
        "artifacts": artifacts,
        "timings": timings,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


# ------------------------------------------------------------ field specs

def parse_field(text_or_path) -> AnalyticField | ZeroField:
    if isinstance(text_or_path, dict):
        spec = text_or_path
    else:
        p = Path(text_or_path)
        raw = p.read_text() if p.suffix == ".json" and p.exists() else text_or_path
        try:
            spec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError("field", f"not valid JSON: {exc}")
    if not isinstance(spec, dict):
        raise ConfigError("field", "must be a JSON object")
    if spec.get("kind") == "zero":
        return ZeroField()
    try:
        return AnalyticField.from_dict(spec)
    except (KeyError, TypeError, ValueError, UsageError) as exc:
        raise ConfigError("field", str(exc))


def field_to_dict(f) -> dict:
    return f.to_dict()


def _sample_data(f, shape, seed: int) -> Latent:
    rng = np.random.Generator(np.random.PCG64(seed))
    if isinstance(f, ZeroField):
        return Latent._wrap(rng.standard_normal(shape))
    return Latent._wrap(np.array(f.sample_data(shape, rng), dtype=np.float64))


def _parse_shape(s) -> tuple[int, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(int(x) for x in s)
    try:
        return tuple(int(x) for x in s.split(","))
    except ValueError:
        raise ConfigError("shape", f"expected comma-separated integers, got {s!r}")


# ------------------------------------------------------------ convergence

def cmd_convergence(params: dict) -> list[dict]:
    steps = [int(n) for n in params["steps"]]
    if len(steps) < 2:
        raise UsageError("convergence needs at least two step counts")
    solvers = list(SOLVERS) if params["solver"] == "both" else [params["solver"]]
    field_ = parse_field(params["field"])
    z1 = gaussian_noise(_parse_shape(params["shape"]), params["seed"])
    ref = reference_integrate(z1, 1.0, 0.0, field_, params["substeps"])
    rows = []
    for solver in solvers:
        prev = None
        for n in steps:
            out = sample_trajectory(z1, make_time_grid(n), field_, None, solver)
            err = float(np.linalg.norm(out.values - ref.values))
            ratio = prev / err if prev is not None and err > 0 else float("nan")
            rows.append({"solver": solver, "n_steps": n, "endpoint_error": err, "ratio_to_previous": ratio})
            prev = err
    return rows


# ------------------------------------------------------------ roundtrip

def roundtrip_errors(field_, n_steps: int, k: int, combine: str, seeds, shape, solver: str) -> list[float]:
    grid = make_time_grid(n_steps)
    mode = InversionMode(k, combine)

    def one(seed):
        z0 = _sample_data(field_, shape, seed)
        z_n, _ = invert_trajectory(z0, grid, field_, None, mode)
        back = sample_trajectory(z_n, grid, field_, None, solver)
        ref = z0.norm()
        diff = float(np.linalg.norm(back.values - z0.values))
        return diff / ref if ref > 0 else diff

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        return list(pool.map(one, seeds))


def cmd_roundtrip(params: dict) -> list[dict]:
    if params["seeds"] < 2:
        raise UsageError("roundtrip needs at least two seeds")
    field_ = parse_field(params["field"])
    seeds = list(range(params["seed"], params["seed"] + params["seeds"]))
    shape = _parse_shape(params["shape"])
    rows = []
    for k in params["k_iters"]:
        errs = roundtrip_errors(field_, params["steps"], int(k), params["combine"], seeds, shape, params["solver"])
        rows += [{"k_iters": k, "combine": params["combine"], "seed": s, "relative_l2": e} for s, e in zip(seeds, errs)]
        rows.append({"k_iters": k, "combine": params["combine"], "seed": "mean", "relative_l2": float(np.mean(errs))})
        rows.append({"k_iters": k, "combine": params["combine"], "seed": "median", "relative_l2": float(np.median(errs))})
    return rows


# ------------------------------------------------------------ edit config

_CONFIG_KEYS = {f.name for f in fields(EditConfig)}


def load_edit_config(raw: dict, overrides: dict | None = None) -> EditConfig:
    """Build an EditConfig from JSON whose keys mirror EditConfig fields.

    Missing taus and step counts fall back to the task/modality defaults.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    raw = {**raw, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise ConfigError(key, "unknown config key")
    for key in ("task", "modality"):
        if key not in raw:
            raise ConfigError(key, "required")
    try:
        base = default_config(raw["task"], raw["modality"])
    except ValueError as exc:
        bad = "task" if raw["task"] not in ("addition", "replacement", "removal") else "modality"
        raise ConfigError(bad, str(exc))

    kw = {}
    numeric = {"tau_s": float, "tau_c": float, "n_steps": int, "k_iters": int, "seed": int}
    for key, value in raw.items():
        if key in numeric:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, f"expected a number, got {value!r}")
            if numeric[key] is int and value != int(value):
                raise ConfigError(key, f"expected an integer, got {value!r}")
            kw[key] = numeric[key](value)
        elif key == "renormalize":
            if not isinstance(value, bool):
                raise ConfigError(key, "expected true/false")
            kw[key] = value
        elif key == "backend":
            kw[key] = _parse_backend(value)
        elif key == "codec":
            kw[key] = _parse_codec(value)
        elif key not in ("task", "modality"):
            kw[key] = value
    checks = {
        "tau_s": lambda v: 0.0 <= v <= 1.0,
        "tau_c": lambda v: 0.0 <= v <= 1.0,
        "n_steps": lambda v: v >= 1,
        "k_iters": lambda v: v >= 1,
        "combine": lambda v: v in ("average", "last"),
        "tau_direction": lambda v: v in ("literal-eq13", "strength"),
    }
    for key, ok in checks.items():
        if key in kw and not ok(kw[key]):
            raise ConfigError(key, f"invalid value {kw[key]!r}")
    return EditConfig(**{**asdict_shallow(base), **kw})


def asdict_shallow(cfg: EditConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def _parse_backend(value):
    if not isinstance(value, dict) or "kind" not in value:
        raise ConfigError("backend", 'expected {"kind": "toy" | "analytic", ...}')
    kind = value["kind"]
    if kind == "toy":
        opts = {k: v for k, v in value.items() if k != "kind"}
        allowed = {f.name for f in fields(ToyDenoiserConfig)}
        for k in opts:
            if k not in allowed:
                raise ConfigError(f"backend.{k}", "unknown toy backend key")
        try:
            return ToyDenoiserConfig(**{k: int(v) for k, v in opts.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError("backend", str(exc))
    if kind == "analytic":
        for k in value:
            if k not in ("kind", "field"):
                raise ConfigError(f"backend.{k}", "unknown analytic backend key")
        if "field" not in value:
            raise ConfigError("backend.field", "required for the analytic backend")
        try:
            return parse_field(value["field"])
        except ConfigError as exc:
            raise ConfigError("backend.field", str(exc))
    raise ConfigError("backend.kind", f"unknown backend {kind!r}")


def _parse_codec(value):
    if not isinstance(value, dict):
        raise ConfigError("codec", "expected an object")
    for k in value:
        if k not in ("kind", "scales"):
            raise ConfigError(f"codec.{k}", "unknown codec key")
    try:
        return Codec(value.get("kind", "identity"), tuple(value.get("scales", ())))
    except (TypeError, ValueError) as exc:
        raise ConfigError("codec", str(exc))


def cmd_edit(params: dict, out_dir: Path) -> dict:
    cfg = load_edit_config(params["config"])
    trace = bool(params.get("dump_attention"))
    z0 = codec_encode(read_grid(params["input"]), cfg.codec)
    outcome = run_edit(z0, params["source"], params["target"], cfg, trace_attention=trace)
    out_dir.mkdir(parents=True, exist_ok=True)
    arts = {
        "reconstruction": out_dir / "reconstruction.oavg",
        "edited": out_dir / "edited.oavg",
        "inverted": out_dir / "inverted.oavg",
        "metrics": out_dir / "metrics.csv",
        "steps": out_dir / "steps.csv",
        "inversion": out_dir / "inversion.csv",
    }
    write_grid(arts["reconstruction"], codec_decode(outcome.reconstruction, cfg.codec))
    write_grid(arts["edited"], codec_decode(outcome.edited, cfg.codec))
    write_grid(arts["inverted"], outcome.inverted)
    report = reconstruction_report(z0, outcome)
    _write_csv(arts["metrics"], ["metric", "value"],
               [[k, report[k]] for k in ("abs_l2", "rel_l2", "max_abs")])
    _write_csv(arts["steps"], [f.name for f in fields(outcome.steps[0])] if outcome.steps else ["step"],
               [list(asdict(s).values()) for s in outcome.steps])
    grid = make_time_grid(cfg.n_steps)
    _write_csv(arts["inversion"], ["step", "t", "norm"],
               [[i, grid.t(i), n] for i, n in enumerate(outcome.inversion_norms)])
    if trace and outcome.attention_trace:
        arts["attention_dir"] = dump_attention(outcome.attention_trace, out_dir / "attention")
    return {"artifacts": {k: str(v) for k, v in arts.items()}, "config": config_to_dict(cfg), "report": report}


def dump_attention(trace: dict, root: Path) -> Path:
    """One grid per (step, evaluation point, branch, kind, layer, head)."""
    root.mkdir(parents=True, exist_ok=True)
    for (step, point), entry in trace.items():
        for layer, maps in enumerate(entry["source"]):
            for kind, arr in (("self", maps.self_maps), ("cross", maps.cross_maps)):
                _dump_heads(root, f"s{step:04d}_{point}_source_{kind}_L{layer}", arr)
        for (kind, layer), rec in entry["edits"].items():
            _dump_heads(root, f"s{step:04d}_{point}_edited_{kind}_L{layer}", rec["consumed"])
    return root


def _dump_heads(root: Path, stem: str, arr: np.ndarray):
    for h in range(arr.shape[0]):
        write_grid(root / f"{stem}_H{h}.oavg", Latent._wrap(np.array(arr[h][None], dtype=np.float64)))


# ------------------------------------------------------------ argparse

def _add_field(p, default='{"kind": "gaussian", "mean": 0.0, "spread": 1.0}'):
    p.add_argument("--field", default=default, help="field spec as inline JSON or a .json path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oave", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="solver order of convergence against RK4 truth")
    p.add_argument("--solver", choices=[*SOLVERS, "both"], default="both")
    _add_field(p)
    p.add_argument("--steps", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--shape", default="1,2,2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--substeps", type=int, default=10**5)
    p.add_argument("--out", type=Path, default=Path("convergence.csv"))

    p = sub.add_parser("roundtrip", help="inversion round-trip error per K")
    _add_field(p)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--k-iters", type=int, nargs="+", default=[1, 3])
    p.add_argument("--combine", choices=["average", "last"], default="last")
    p.add_argument("--solver", choices=SOLVERS, default="euler", help="regeneration solver")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--shape", default="8,16,16")
    p.add_argument("--out", type=Path, default=Path("roundtrip.csv"))

    p = sub.add_parser("edit", help="run the inversion-regeneration edit on a grid file")
    p.add_argument("--config", type=Path, help="EditConfig JSON")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--source", required=True, help="source prompt")
    p.add_argument("--target", required=True, help="target prompt")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--task", choices=["addition", "replacement", "removal"])
    p.add_argument("--modality", choices=["audio", "video"])
    p.add_argument("--tau-s", type=float)
    p.add_argument("--tau-c", type=float)
    p.add_argument("--tau-direction", choices=["literal-eq13", "strength"])
    p.add_argument("--steps", type=int)
    p.add_argument("--k-iters", type=int)
    p.add_argument("--combine", choices=["average", "last"])
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["analytic", "toy"])
    _add_field(p, default=None)
    p.add_argument("--dump-attention", action="store_true")

    p = sub.add_parser("noise", help="write a seeded Gaussian grid (handy edit input)")
    p.add_argument("--shape", default="1,16,16")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out-dir", type=Path, help="write outputs here instead of the recorded paths")
    return ap


def _edit_params(args) -> dict:
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON in {args.config}: {exc}")
    overrides = {
        "task": args.task, "modality": args.modality, "tau_s": args.tau_s, "tau_c": args.tau_c,
        "tau_direction": args.tau_direction, "n_steps": args.steps, "k_iters": args.k_iters,
        "combine": args.combine, "seed": args.seed,
    }
    if args.backend == "toy":
        overrides["backend"] = raw.get("backend") if (raw.get("backend") or {}).get("kind") == "toy" else {"kind": "toy"}
    elif args.backend == "analytic" or args.field is not None:
        if args.field is not None:
            fspec = field_to_dict(parse_field(args.field))
        else:
            fspec = (raw.get("backend") or {}).get("field")
        if fspec is None:
            raise ConfigError("backend.field", "--backend analytic needs --field or a config field")
        overrides["backend"] = {"kind": "analytic", "field": fspec}
    cfg = load_edit_config(raw, overrides)
    return {
        "config": config_to_dict(cfg),
        "input": str(args.input),
        "source": args.source,
        "target": args.target,
        "dump_attention": bool(args.dump_attention),
    }


def _run(command: str, params: dict, out_path: Path) -> None:
    start = time.perf_counter()
    if command == "convergence":
        rows = cmd_convergence(params)
        _write_csv(out_path, ["solver", "n_steps", "endpoint_error", "ratio_to_previous"],
                   [[r["solver"], r["n_steps"], r["endpoint_error"], r["ratio_to_previous"]] for r in rows])
        arts = {"csv": str(out_path)}
        manifest = out_path.with_suffix(".manifest.json")
    elif command == "roundtrip":
        rows = cmd_roundtrip(params)
        _write_csv(out_path, ["k_iters", "combine", "seed", "relative_l2"],
                   [[r["k_iters"], r["combine"], r["seed"], r["relative_l2"]] for r in rows])
        arts = {"csv": str(out_path)}
        manifest = out_path.with_suffix(".manifest.json")
    elif command == "edit":
        res = cmd_edit(params, out_path)
        arts = res["artifacts"]
        manifest = out_path / "manifest.json"
    elif command == "noise":
        write_grid(out_path, gaussian_noise(_parse_shape(params["shape"]), params["seed"]))
        arts = {"grid": str(out_path)}
        manifest = out_path.with_suffix(".manifest.json")
    else:
        raise UsageError(f"unknown command {command!r}")
    timings = {"wall_seconds": time.perf_counter() - start}
    _write_manifest(manifest, command, params, arts, timings)
    log.info("%s done in %.2fs -> %s", command, timings["wall_seconds"], manifest)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "replay":
            man = json.loads(args.manifest.read_text())
            command, params = man["command"], man["params"]
            if command == "edit":
                out = args.out_dir or Path(man["artifacts"]["reconstruction"]).parent
            else:
                recorded = Path(next(iter(man["artifacts"].values())))
                out = (args.out_dir / recorded.name) if args.out_dir else recorded
            _run(command, params, out)
            return 0
        if args.command == "convergence":
            params = {"solver": args.solver, "field": field_to_dict(parse_field(args.field)),
                      "steps": args.steps, "shape": list(_parse_shape(args.shape)), "seed": args.seed,
                      "substeps": args.substeps}
            _run("convergence", params, args.out)
        elif args.command == "roundtrip":
            params = {"field": field_to_dict(parse_field(args.field)), "steps": args.steps,
                      "k_iters": args.k_iters, "combine": args.combine, "solver": args.solver,
                      "seeds": args.seeds, "seed": args.seed, "shape": list(_parse_shape(args.shape))}
            _run("roundtrip", params, args.out)
        elif args.command == "edit":
            _run("edit", _edit_params(args), args.out_dir)
        elif args.command == "noise":
            _run("noise", {"shape": list(_parse_shape(args.shape)), "seed": args.seed}, args.out)
        return 0
    except NumericError as exc:
        print(f"oave: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (OaveError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"oave: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
