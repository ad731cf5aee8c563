"""Command line experiment driver.

Every command writes its artifacts plus ``manifest.json`` into ``--out``.
Randomized commands require ``--seed``; existing files are only replaced
with ``--force``. A ``--config`` TOML file supplies defaults (top-level keys
or a table named after the command) that command-line flags override.

Exit status: 0 on success, 2 for an invalid request, 1 when a computation
fails. Errors are printed to stdout as a JSON object.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import io
from .barrier import BarrierSpec, bent_barrier_density_mc, excess_ratio, straight_barrier_mc
from .errors import DGFFError
from .extremes import ArgmaxDensity, EmpiricalLaw, distance, max_ensemble, tail_fit
from .hierarchical import empirical_comparison_checks, sample_brw, sample_mbrw, verify_covariance_sandwich
from .lattice import BoxSpec, SubBoxPartition, centered_box_mask, is_power_of_two
from .limitlaw import (ALPHA_DEFAULT, G_OFFSET, LimitLawParams, calibrate, compare,
                       sample_limit_law)
from .sampler import decompose, decompose_array, sample_gff_spectral, verify_independence
from .seeds import default_workers, derive_seed, rep_seeds

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA = "dgff-manifest/1"
VERSION = "0.1.0"


class UsageError(Exception):
    pass


def load_law(path) -> EmpiricalLaw:
    """Law from a CSV file and its JSON sidecar."""
    return EmpiricalLaw.load(path)


def _argmax_path(law_path: Path) -> Path:
    return law_path.with_name(law_path.stem + ".argmax.dgfg")


def load_ensemble(path) -> tuple[EmpiricalLaw, ArgmaxDensity]:
    path = Path(path)
    pts, _ = io.read_dgfg(_argmax_path(path))
    return load_law(path), ArgmaxDensity(pts)


# ---------------------------------------------------------------------------
# commands


def _need_pow2(name, v):
    if not is_power_of_two(v):
        raise UsageError(f"--{name} must be a power of 2, got {v}")


def cmd_sample(a, out: Path) -> dict:
    _need_pow2("n", a.n)
    box = BoxSpec(a.n)
    fn = {"gff": sample_gff_spectral, "brw": sample_brw, "mbrw": sample_mbrw}[a.model]
    f = fn(box, derive_seed(a.seed, 0))
    paths = [f.save(out / "field.dgfg", force=a.force)]
    if a.csv:
        paths.append(f.to_csv(out / "field.csv", force=a.force))
    return {"artifacts": paths, "summary": {"max": float(f.values.max())}}


def cmd_ensemble(a, out: Path) -> dict:
    _need_pow2("n", a.n)
    if a.reps < 1:
        raise UsageError("--reps must be positive")
    region = centered_box_mask(a.n, a.region_delta) if a.region_delta else None
    law, arg = max_ensemble(a.model, a.n, a.reps, a.seed, region=region, workers=a.workers)
    p = out / "law.csv"
    law.save(p, force=a.force)
    ap = io.write_dgfg(_argmax_path(p), arg.points, {"role": "argmax v*/N", "master_seed": a.seed},
                       force=a.force)
    return {"artifacts": [p, io.sidecar_path(p), ap],
            "summary": {"mean": law.mean(), "iqr": law.iqr(), "reps": law.reps}}


def cmd_tail(a, out: Path) -> dict:
    law = load_law(a.law)
    fit = tail_fit(law, a.z_min, a.z_max, seed=a.seed)
    d = fit.to_dict()
    d["source"] = str(a.law)
    p = io.write_json(out / "tail.json", d, force=a.force)
    return {"artifacts": [p], "summary": {"slope": fit.slope, "alpha_star": fit.alpha_star}}


def cmd_decompose(a, out: Path) -> dict:
    _need_pow2("n", a.n)
    _need_pow2("k", a.k)
    part = SubBoxPartition(BoxSpec(a.n), a.k)
    f = sample_gff_spectral(BoxSpec(a.n), derive_seed(a.seed, 0))
    d = decompose(f, part)
    paths = [d.coarse.save(out / "coarse.dgfg", force=a.force),
             d.fine.save(out / "fine.dgfg", force=a.force)]
    summary = {"reconstruction_error": d.reconstruction_error(f)}
    if a.reps:
        from .hierarchical import sample_batch
        chunks = [sample_batch("gff", a.n, rep_seeds(a.seed, min(1000, a.reps - s), s))
                  for s in range(0, a.reps, 1000)]
        X = np.concatenate(chunks)
        c, fi = decompose_array(X, part)
        rep = verify_independence(c, fi, part)
        paths.append(io.write_json(out / "independence.json", rep, force=a.force))
        summary.update({k: v for k, v in rep.items() if k.endswith("_ok")})
    return {"artifacts": paths, "summary": summary}


def cmd_hierarchy(a, out: Path) -> dict:
    _need_pow2("n", a.n)
    rep = {"sandwich": verify_covariance_sandwich(a.n, delta=a.delta)}
    if a.reps:
        if a.seed is None:
            raise UsageError("--seed is required when --reps is given")
        rep["comparison"] = empirical_comparison_checks(a.n, a.reps, a.seed, a.delta, a.workers)
    p = io.write_json(out / "hierarchy.json", rep, force=a.force)
    return {"artifacts": [p], "summary": {"mbrw_max_deviation": rep["sandwich"]["mbrw_max_deviation"],
                                          "gff_max_deviation": rep["sandwich"]["gff_max_deviation"]}}


def cmd_barrier(a, out: Path) -> dict:
    try:
        spec = BarrierSpec(a.t, a.y, a.sigma2, a.bent, a.C)
    except DGFFError as e:
        raise UsageError(str(e)) from None
    if a.bent:
        edges = np.linspace(-5 * np.sqrt(a.t * a.sigma2), a.y + 3 * np.sqrt(a.t * a.sigma2), a.bins + 1)
        rep = bent_barrier_density_mc(spec, edges, a.paths, a.step, a.seed, a.workers)
        rep["excess_ratio"], rep["excess_ratio_se"] = excess_ratio(rep)
    else:
        rep = straight_barrier_mc(spec, a.paths, a.seed, workers=a.workers)
    p = io.write_json(out / "barrier.json", rep, force=a.force)
    return {"artifacts": [p], "summary": {k: rep[k] for k in ("estimate", "excess_ratio") if k in rep
                                          and not isinstance(rep[k], list)}}


def cmd_limitlaw(a, out: Path) -> dict:
    if a.params:
        params = LimitLawParams.load(a.params)
    else:
        if not a.calibrate_from:
            raise UsageError("give --params or --calibrate-from")
        _need_pow2("k", a.k)
        ens = [load_ensemble(p) for p in a.calibrate_from]
        params = calibrate(ens, a.k, a.delta, alpha=a.alpha, g_offset=a.g_offset,
                           min_reps=a.min_reps)
    law = sample_limit_law(params, a.draws, a.seed, a.mode, a.workers)
    pp = params.save(out / "params.json", force=a.force)
    lp = law.save(out / "limit.csv", force=a.force)
    return {"artifacts": [pp, lp, io.sidecar_path(lp)],
            "summary": {"mean": law.mean(), "gK": params.gK, "alpha_star": params.alpha_star}}


def cmd_compare(a, out: Path) -> dict:
    la, lb = load_law(a.law_a), load_law(a.law_b)
    if lb.meta.get("model") == "limit":
        rep = compare(la, lb, int(lb.meta["K"]), N=la.meta.get("N"), n_boot=a.boot, seed=a.seed,
                      min_reps=a.min_reps)
    else:
        rep = {"levy": distance(la, lb, "levy"), "ks": distance(la, lb, "ks")}
    rep.update({"law_a": str(a.law_a), "law_b": str(a.law_b)})
    p = io.write_json(out / "compare.json", rep, force=a.force)
    return {"artifacts": [p], "summary": {"levy": rep["levy"], "ks": rep["ks"]}}


COMMANDS = {
    "sample": (cmd_sample, True),
    "ensemble": (cmd_ensemble, True),
    "tail": (cmd_tail, False),
    "decompose": (cmd_decompose, True),
    "hierarchy-check": (cmd_hierarchy, False),
    "barrier": (cmd_barrier, True),
    "limitlaw": (cmd_limitlaw, True),
    "compare": (cmd_compare, False),
}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    common.add_argument("--workers", type=int, default=None, help="worker processes (default $DGFF_WORKERS or 1)")
    common.add_argument("--config", type=Path, default=None, help="TOML file with default options")

    p = argparse.ArgumentParser(prog="dgff", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, seed_required):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--seed", type=int, default=None, required=False,
                        help="master seed" + (" (required)" if seed_required else ""))
        return sp

    s = add("sample", "draw one field", True)
    s.add_argument("--model", choices=["gff", "brw", "mbrw"], default="gff")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--csv", action="store_true", help="also write x,y,value CSV")

    s = add("ensemble", "law of the recentered maximum", True)
    s.add_argument("--model", choices=["gff", "brw", "mbrw"], default="gff")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--region-delta", type=float, default=None, help="restrict to the centred box")

    s = add("tail", "tail exponent and plateau from a law file", False)
    s.add_argument("--law", type=Path, required=True)
    s.add_argument("--z-min", type=float, default=1.0)
    s.add_argument("--z-max", type=float, default=3.5)

    s = add("decompose", "coarse/fine decomposition of one field", True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--reps", type=int, default=0, help="ensemble size for the independence report")

    s = add("hierarchy-check", "covariance sandwich and comparison checks", False)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--delta", type=float, default=0.125)
    s.add_argument("--reps", type=int, default=0)

    s = add("barrier", "Brownian barrier Monte Carlo", True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--y", type=float, required=True)
    s.add_argument("--sigma2", type=float, default=1.0)
    s.add_argument("--bent", action="store_true")
    s.add_argument("--C", type=float, default=10.0)
    s.add_argument("--paths", type=int, default=100_000)
    s.add_argument("--step", type=float, default=None, help="time step (default 1e-3 t)")
    s.add_argument("--bins", type=int, default=60)

    s = add("limitlaw", "calibrate and sample the limit process", True)
    s.add_argument("--params", type=Path, default=None)
    s.add_argument("--calibrate-from", type=Path, nargs="+", default=None, help="ensemble law files")
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--delta", type=float, default=0.125)
    s.add_argument("--alpha", type=float, default=ALPHA_DEFAULT)
    s.add_argument("--g-offset", type=float, default=G_OFFSET)
    s.add_argument("--draws", type=int, default=10_000)
    s.add_argument("--mode", choices=["grid", "exact"], default="grid")
    s.add_argument("--min-reps", type=int, default=10_000)

    s = add("compare", "distances between two laws", False)
    s.add_argument("--law-a", type=Path, required=True)
    s.add_argument("--law-b", type=Path, required=True)
    s.add_argument("--boot", type=int, default=200)
    s.add_argument("--min-reps", type=int, default=10_000)
    return p


def _config_defaults(path: Path, command: str) -> dict:
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    flat.update(cfg.get(command, {}))
    return {k.replace("-", "_"): v for k, v in flat.items()}


def _prescan(argv) -> tuple[str | None, Path | None]:
    command = next((t for t in argv if t in COMMANDS), None)
    cfg = None
    for i, t in enumerate(argv):
        if t == "--config" and i + 1 < len(argv):
            cfg = Path(argv[i + 1])
        elif t.startswith("--config="):
            cfg = Path(t.split("=", 1)[1])
    return command, cfg


def parse(argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command, cfg = _prescan(argv)
    if command is not None and cfg is not None:
        try:
            defaults = _config_defaults(cfg, command)
        except (OSError, tomllib.TOMLDecodeError) as e:
            parser.error(f"cannot read config: {e}")
        sub = parser._subparsers._group_actions[0].choices[command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        for act in sub._actions:
            if act.dest in defaults:
                act.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=str))


def run(argv=None) -> int:
    try:
        a = parse(argv)
    except SystemExit as e:
        return int(e.code or 0)
    fn, randomized = COMMANDS[a.command]
    if a.workers is None:
        a.workers = default_workers()
    if a.command == "barrier" and a.step is None:
        a.step = 1e-3 * a.t
    if randomized and a.seed is None:
        _emit({"error": "usage", "message": f"{a.command} requires --seed"})
        return 2
    if a.command in ("tail", "compare") and a.seed is None:
        a.seed = 0  # bootstrap seed
    out = Path(a.out)
    man = out / "manifest.json"
    t0 = time.time()
    try:
        out.mkdir(parents=True, exist_ok=True)
        if man.exists() and not a.force:
            raise FileExistsError(f"{man} exists; pass --force to overwrite")
        res = fn(a, out)
    except UsageError as e:
        _emit({"error": "usage", "message": str(e)})
        return 2
    except DGFFError as e:
        _emit(e.to_dict())
        return 1
    except FileExistsError as e:
        _emit({"error": "exists", "message": str(e)})
        return 1
    spec = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(a).items()}
    spec["calibrate_from"] = [str(p) for p in spec.get("calibrate_from") or []] or None
    manifest = {
        "schema": SCHEMA,
        "command": a.command,
        "spec": spec,
        "master_seed": a.seed,
        "versions": {"dgff": VERSION, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "conventions": io.CONVENTIONS,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "wall_time_s": time.time() - t0,
        "artifacts": [str(p) for p in res["artifacts"]],
        "summary": res.get("summary", {}),
    }
    io.write_json(man, manifest, force=True)
    _emit({"status": "ok", "manifest": str(man), "summary": res.get("summary", {})})
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
