"""Command-line interface: ``wgeit <command> [--config FILE] [key=value ...]``.

Every run writes its CSV outputs and a ``manifest.json`` (resolved config,
library versions, timings) under ``--out``. Exit codes: 0 success, 1 usage
error, 2 numerical failure.
"""

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _accel
from .cem_forward import BUMP, SolverError, convergence_study, default_electrodes, forward_map
from .fista import BacktrackingError
from .mesh import MeshError, build_uniform_mesh
from .recon import (
    CATALOG,
    FD_STEPS,
    Experiment,
    add_noise,
    generate_data,
    gradient_check,
    reconstruct,
    sample_field,
    synth_currents,
)
from .tv_prox import DEFAULT_MAX_ITER, DEFAULT_TOL, fgp_denoise

log = logging.getLogger("wgeit")

ORDER_RANGE = (1.7, 2.3)


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- config


def _ints(s):
    return tuple(int(v) for v in str(s).replace(" ", "").split(",") if v)


def _floats(s):
    return tuple(float(v) for v in str(s).replace(" ", "").split(",") if v)


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _example(s):
    if s not in CATALOG:
        raise ValueError(f"unknown example {s!r}; choose from {', '.join(sorted(CATALOG))}")
    return s


REQUIRED = object()

# key -> (parser, default); REQUIRED marks mandatory keys
SCHEMAS = {
    "converge": {
        "n_list": (_ints, (8, 16, 32, 64, 128)),
        "L": (int, 16),
        "elec_len": (float, 0.125),
        "z": (float, 1.0),
    },
    "forward": {
        "n": (int, 32),
        "example": (_example, "homogeneous"),
        "K": (int, 10),
        "L": (int, 16),
        "z": (float, 1.0),
    },
    "synth": {
        "L": (int, 16),
        "K": (int, 10),
        "example": (str, ""),
        "n_data": (int, 128),
        "epsilon": (float, 0.0),
        "z": (float, 1.0),
    },
    "denoise": {
        "input": (str, REQUIRED),
        "beta": (float, REQUIRED),
        "lambda": (float, 0.25),
        "max_iter": (int, DEFAULT_MAX_ITER),
        "tol": (float, DEFAULT_TOL),
    },
    "reconstruct": {
        "example": (_example, REQUIRED),
        "alpha": (float, REQUIRED),
        "schedule": (_ints, (16, 32, 64)),
        "iters": (_ints, (200,)),
        "warm_start": (_bool, False),
        "n_data": (int, 128),
        "lambda": (float, 0.25),
        "epsilon": (float, 0.0),
        "K": (int, 10),
        "L": (int, 16),
        "z": (float, 1.0),
        "eta": (float, 0.5),
        "L0": (float, None),
        "delta": (float, 1e-8),
        "prox_iter": (int, DEFAULT_MAX_ITER),
        "prox_tol": (float, DEFAULT_TOL),
    },
    "grad-check": {
        "n": (int, 8),
        "K": (int, 3),
        "steps": (_floats, FD_STEPS),
    },
}


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def resolve(command, raw):
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema) - {"seed"})
    if unknown:
        raise UsageError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = parse(raw[key])
            except ValueError as exc:
                raise UsageError(f"bad value for {key!r}: {exc}") from None
        elif default is REQUIRED:
            raise UsageError(f"missing required key {key!r} for {command}")
        else:
            cfg[key] = default
    return cfg


# ------------------------------------------------------------------- output


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None or (isinstance(v, float) and np.isnan(v)) else _fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_grid_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise UsageError(f"{path}: expected a header row and at least one data row")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:] if r])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _versions():
    out = {"python": platform.python_version(), "platform": platform.platform()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    out["backend"] = _accel.default_backend()
    return out


# ----------------------------------------------------------------- commands


def run_converge(cfg, seed, out):
    def electrodes_for(mesh):
        return default_electrodes(mesh, L=cfg["L"], elec_len=cfg["elec_len"], z=cfg["z"])

    rows = convergence_study(BUMP, cfg["n_list"], electrodes_for=electrodes_for)
    write_csv(out / "converge.csv", ["h", "err_u", "order_u", "err_U", "order_U"], rows)
    for r in rows:
        print("h=%-10.6g err_u=%.4e order_u=%-8.4f err_U=%.4e order_U=%.4f" % r)
    if len(rows) < 2:
        return 0
    ou, oU = rows[-1][2], rows[-1][4]
    lo, hi = ORDER_RANGE
    for name, o in (("order_u", ou), ("order_U", oU)):
        if not lo <= o <= hi:
            print(f"{name} = {o:.4f} at the finest pair is outside [{lo}, {hi}]", file=sys.stderr)
            return 2
    return 0


def run_forward(cfg, seed, out):
    mesh = build_uniform_mesh(cfg["n"])
    el = default_electrodes(mesh, L=cfg["L"], z=cfg["z"])
    patterns = synth_currents(cfg["L"], cfg["K"])
    sigma = sample_field(CATALOG[cfg["example"]].sigma, mesh)
    U = forward_map(mesh, el, sigma, patterns)
    header = [f"U_{l + 1}" for l in range(cfg["L"])]
    write_csv(out / "voltages.csv", header, U.tolist())
    return 0


def run_synth(cfg, seed, out):
    P = synth_currents(cfg["L"], cfg["K"])
    write_csv(out / "currents.csv", [f"I_{l + 1}" for l in range(cfg["L"])], P.tolist())
    if cfg["example"]:
        ex = _example(cfg["example"])
        clean = generate_data(CATALOG[ex].sigma, cfg["n_data"], P, cfg["L"], cfg["z"])
        noisy = add_noise(clean, cfg["epsilon"], seed)
        write_csv(out / "data.csv", [f"U_{l + 1}" for l in range(cfg["L"])], noisy.voltages.tolist())
    return 0


def run_denoise(cfg, seed, out):
    d = read_grid_csv(cfg["input"])
    if d.shape[1] % 2:
        raise UsageError(f"grid must have an even number of columns, got {d.shape[1]}")
    x = fgp_denoise(d, cfg["beta"], cfg["lambda"], cfg["max_iter"], cfg["tol"])
    write_csv(out / "denoised.csv", [f"c{j}" for j in range(x.shape[1])], x.tolist())
    return 0


def experiment_from_config(cfg, seed=0):
    """Build an :class:`Experiment` from a resolved ``reconstruct`` config."""
    return Experiment(
        example=cfg["example"],
        alpha=cfg["alpha"],
        schedule=cfg["schedule"],
        iters=cfg["iters"],
        warm_start=cfg["warm_start"],
        n_data=cfg["n_data"],
        lam=cfg["lambda"],
        epsilon=cfg["epsilon"],
        seed=seed,
        K=cfg["K"],
        L=cfg["L"],
        z=cfg["z"],
        eta=cfg["eta"],
        L0=cfg["L0"],
        delta=cfg["delta"],
        prox_iter=cfg["prox_iter"],
        prox_tol=cfg["prox_tol"],
    )


def load_experiment(path, **overrides):
    """Read a reconstruct config file; ``overrides`` replace raw keys."""
    raw = read_config(path)
    raw.update({k: str(v) for k, v in overrides.items()})
    seed = int(raw.pop("seed", 0))
    return experiment_from_config(resolve("reconstruct", raw), seed)


def run_reconstruct(cfg, seed, out):
    exp = experiment_from_config(cfg, seed)
    res = reconstruct(exp)
    write_csv(out / "history.csv", ["level", "h", "iter", "F", "rel_l2_err"], res.history)
    for i, lv in enumerate(res.levels):
        write_csv(
            out / f"field_level{i}_n{lv.n_subdiv}.csv",
            ["tri_index", "value"],
            zip(range(len(lv.sigma)), lv.sigma.tolist()),
        )
        print(f"level {i}: h=1/{lv.n_subdiv} rel_l2_err={lv.rel_l2_err:.4f} best_k={lv.fista.best_k}")
    return 0


def run_grad_check(cfg, seed, out):
    chk = gradient_check(n=cfg["n"], K=cfg["K"], seed=seed, steps=cfg["steps"])
    write_csv(out / "gradcheck.csv", ["t", "fd_value", "analytic_value", "rel_err"], chk.rows)
    print(f"slope={chk.slope:.4f} (fit on {chk.n_fit} points) componentwise rel err={chk.componentwise_rel_err:.3e}")
    return 0


COMMANDS = {
    "converge": run_converge,
    "forward": run_forward,
    "synth": run_synth,
    "denoise": run_denoise,
    "reconstruct": run_reconstruct,
    "grad-check": run_grad_check,
}

HELP = {
    "converge": "manufactured-solution convergence table",
    "forward": "electrode voltages for a catalog conductivity",
    "synth": "current patterns, optionally with noisy synthetic data",
    "denoise": "box-constrained TV denoising of a grid CSV",
    "reconstruct": "TV-regularized reconstruction over a mesh schedule",
    "grad-check": "adjoint gradient against finite differences",
}


# --------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="flat key=value config file")
    shared.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    shared.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    shared.add_argument("--threads", type=int, default=None, help="bound on internal parallelism")
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    shared.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
    p = _Parser(prog="wgeit", description="Weak Galerkin EIT: forward solves and TV reconstructions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[shared], help=HELP[name])
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    t_start = time.perf_counter()
    try:
        raw = read_config(args.config) if args.config else {}
        for item in args.overrides:
            if "=" not in item:
                raise UsageError(f"override {item!r} is not of the form key=value")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
        cfg = resolve(args.command, raw)
        if args.threads is not None:
            _accel.set_threads(args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, seed, args.out)
    except (UsageError, MeshError, OSError, ValueError) as exc:
        print(f"wgeit {args.command}: {exc}", file=sys.stderr)
        return 1
    except (SolverError, BacktrackingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"wgeit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
        "seed": seed,
        "threads": args.threads,
        "versions": _versions(),
        "timings": {"wall_seconds": time.perf_counter() - t_start},
        "exit_code": code,
        "cwd": os.getcwd(),
    }
    with open(args.out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
