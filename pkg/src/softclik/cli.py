"""Command line: ``softclik generate | train | eval | run``.

Settings come from (highest precedence first) command-line flags, an INI file
passed with ``--config``, and built-in defaults. Every command writes the fully
resolved settings next to its output so a run can be repeated exactly.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import trainer as tr_mod
from .cc_model import CcModel
from .clik import ClikConfig, export_trajectory, run_clik
from .core import Box, GainMatrix
from .neuralop import OperatorNet
from .rod_model import FiberMap, RodParams
from .tasks import KINDS, TaskDimensionError, TaskSpec

DEFAULTS = {
    "rod": {
        "L": "0.18", "EI1": "1e-3", "EI2": "1e-3", "GJ": "8e-4", "EA": "50.0", "w": "0.25",
        "gravity": "0,0,-1", "c_b": "2.0", "c_e": "0.1", "c_h": "1.2", "tau_c": "0.5",
        "c_e_helix": "0.05", "turns": "1.5",
    },
    "dataset": {
        "n": "20000", "ns": "100", "seed": "0", "box": "-1.67,0", "workers": "1", "tol": "1e-10",
    },
    "train": {
        "epochs": "500", "batch": "32", "lr0": "1e-3", "lr_final": "1e-4", "seed": "0",
        "split": "0.64,0.16,0.20", "split_seed": "0", "branch": "3,64,64,64,192",
        "trunk": "1,64,64,64,192", "v": "64", "q_box": "-1.67,0",
    },
    "clik": {
        "K": "10", "dt": "1e-3", "tend": "1.0", "damping": "1e-6", "q0": "", "clamp": "true",
        "cc_length": "1.0",
    },
    "task": {"model": "cc", "kind": "dist_fixed", "target": "", "sbar": "1.0"},
}

# flag dest -> (section, key)
FLAG_KEYS = {
    "n": ("dataset", "n"), "ns": ("dataset", "ns"), "box": ("dataset", "box"),
    "workers": ("dataset", "workers"),
    "epochs": ("train", "epochs"), "batch": ("train", "batch"), "lr0": ("train", "lr0"),
    "lr_final": ("train", "lr_final"), "split": ("train", "split"),
    "split_seed": ("train", "split_seed"), "q_box": ("train", "q_box"),
    "K": ("clik", "K"), "dt": ("clik", "dt"), "tend": ("clik", "tend"),
    "damping": ("clik", "damping"), "q0": ("clik", "q0"),
    "model": ("task", "model"), "task": ("task", "kind"), "target": ("task", "target"),
    "sbar": ("task", "sbar"),
}
SEED_SECTION = {"generate": "dataset", "train": "train", "eval": "train", "run": "clik"}
SECTIONS = {
    "generate": ("rod", "dataset"),
    "train": ("train",),
    "eval": ("train",),
    "run": ("clik", "task"),
}


class UsageError(Exception):
    pass


def floats(text: str) -> list:
    text = text.strip()
    return [float(t) for t in text.split(",")] if text else []


def resolve(args) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str
    cfg.read_dict(DEFAULTS)
    cfg["clik"]["seed"] = "0"
    if args.config:
        user = configparser.ConfigParser(interpolation=None)
        user.optionxform = str
        if not user.read(args.config):
            raise FileNotFoundError(args.config)
        for section in user.sections():
            if section not in cfg:
                raise UsageError(f"unknown config section [{section}]")
            for key, value in user[section].items():
                if key not in cfg[section]:
                    raise UsageError(f"unknown config key {section}.{key}")
                cfg[section][key] = value
    for dest, (section, key) in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[section][key] = str(value)
    if getattr(args, "seed", None) is not None:
        cfg[SEED_SECTION[args.command]]["seed"] = str(args.seed)
    return cfg


def echo_config(cfg, command: str, path: Path) -> None:
    out = configparser.ConfigParser(interpolation=None)
    out.optionxform = str
    for section in SECTIONS[command] + (("rod",) if command == "generate" else ()):
        out[section] = dict(cfg[section])
    if command == "run":
        out["clik"]["seed"] = cfg["clik"]["seed"]
    with open(path, "w") as fh:
        out.write(fh)


def rod_params(cfg) -> RodParams:
    r = cfg["rod"]
    fibers = FiberMap(**{k: float(r[k]) for k in ("c_b", "c_e", "c_h", "tau_c", "c_e_helix", "turns")})
    return RodParams(
        **{k: float(r[k]) for k in ("L", "EI1", "EI2", "GJ", "EA", "w")},
        gravity=tuple(floats(r["gravity"])), fibers=fibers,
    )


def parse_box(text: str, m: int) -> Box:
    """``lo,hi`` for every coordinate, or ``lo1,hi1,lo2,hi2,...``."""
    v = floats(text)
    if len(v) == 2:
        return Box.uniform(v[0], v[1], m)
    if len(v) == 2 * m:
        return Box(v[0::2], v[1::2])
    raise UsageError(f"--box expects 2 or {2 * m} numbers, got {len(v)}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, cfg) -> int:
    d = cfg["dataset"]
    n, ns = int(d["n"]), int(d["ns"])
    if n < 1:
        raise UsageError("--n must be >= 1")
    if ns < 2:
        raise UsageError("--ns must be >= 2")
    p = rod_params(cfg)
    box = parse_box(d["box"], p.m)
    print(f"box={[[float(a), float(b)] for a, b in zip(box.lo, box.hi)]}")
    data = ds_mod.generate(p, box, N=n, n_s=ns, seed=int(d["seed"]), workers=int(d["workers"]),
                           tol=float(d["tol"]))
    out = Path(args.out)
    ds_mod.save(data, out)
    report = {"N": data.N, "failed_solves": data.failed, **data.meta}
    Path(str(out) + ".report.json").write_text(json.dumps(report, indent=2) + "\n")
    echo_config(cfg, "generate", Path(str(out) + ".config.ini"))
    print(f"samples={data.N}\nfailed_solves={data.failed}\nwall_time={data.meta['wall_time']:.3f}")
    return 0


def _splits(cfg, data):
    t = cfg["train"]
    return ds_mod.split(data, floats(t["split"]), seed=int(t["split_seed"]))


def cmd_train(args, cfg) -> int:
    t = cfg["train"]
    data = ds_mod.load(args.data)
    train_set, val_set, _ = _splits(cfg, data)
    tcfg = tr_mod.TrainConfig(epochs=int(t["epochs"]), batch_size=int(t["batch"]),
                              lr0=float(t["lr0"]), lr_final=float(t["lr_final"]), seed=int(t["seed"]))
    print(f"epochs={tcfg.epochs}\nbatch_size={tcfg.batch_size}")
    branch = [int(x) for x in floats(t["branch"])]
    trunk = [int(x) for x in floats(t["trunk"])]
    box = parse_box(t["q_box"], data.m)
    net = OperatorNet.create(branch, trunk, int(t["v"]), data.d, box, seed=tcfg.seed)

    def progress(epoch, lr, train_mse, val_mse):
        if args.verbose:
            print(f"epoch={epoch} lr={lr:.4e} train_mse={train_mse:.4e} val_mse={val_mse:.4e}",
                  flush=True)

    best, hist = tr_mod.train(net, train_set, val_set, tcfg, progress=progress)
    out = Path(args.out)
    tr_mod.save_checkpoint(best, out)
    hist.write_csv(str(out) + ".history.csv")
    echo_config(cfg, "train", Path(str(out) + ".config.ini"))
    print(f"best_epoch={hist.best_epoch}\nbest_val_mse={min(hist.val_mse)!r}")
    return 0


def cmd_eval(args, cfg) -> int:
    data = ds_mod.load(args.data)
    net = tr_mod.load_checkpoint(args.checkpoint)
    subset = data if args.all else _splits(cfg, data)[2]
    m = tr_mod.evaluate(net, subset)
    print(f"mse={m.mse:.17g}\nmse_physical={m.mse_physical:.17g}\nl2_relative={m.l2_relative:.17g}")
    return 0


def cmd_run(args, cfg) -> int:
    c, t = cfg["clik"], cfg["task"]
    if t["model"] == "cc":
        model = CcModel(float(c["cc_length"]))
        box = None
    elif t["model"] == "neural":
        if not args.checkpoint:
            raise UsageError("--model neural needs --checkpoint")
        model = tr_mod.load_checkpoint(args.checkpoint)
        box = model.q_box if c["clamp"].lower() in ("1", "true", "yes") else None
    else:
        raise UsageError(f"unknown model {t['model']!r}")
    if t["kind"] not in KINDS:
        raise UsageError(f"unknown task {t['kind']!r}")
    target = floats(t["target"])
    if not target:
        raise UsageError("--target is required")
    try:
        spec = TaskSpec(t["kind"], target, float(t["sbar"]) if t["kind"].endswith("fixed") else None)
        spec.check_model(model)
    except (TaskDimensionError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    k = floats(c["K"])
    if len(k) == 1:
        K = GainMatrix(k[0] * np.eye(spec.p))
    elif len(k) == spec.p:
        K = GainMatrix(np.diag(k))
    else:
        raise UsageError(f"--K needs 1 or {spec.p} values")
    q0 = floats(c["q0"]) or [0.1 if t["model"] == "cc" else 0.0] * model.m
    if len(q0) != model.m:
        raise UsageError(f"--q0 needs {model.m} values")
    ccfg = ClikConfig(K, dt=float(c["dt"]), t_end=float(c["tend"]), lam_dls=float(c["damping"]),
                      box=box)
    traj = run_clik(spec, model, q0, ccfg)
    out = Path(args.out)
    export_trajectory(traj, str(out) + ".csv", "csv")
    export_trajectory(traj, str(out) + ".svg", "svg")
    echo_config(cfg, "run", Path(str(out) + ".config.ini"))
    print(f"steps={len(traj) - 1}\ninitial_error={traj.err[0]:.17g}\nfinal_error={traj.err[-1]:.17g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="softclik", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file with [rod] [dataset] [train] [clik] [task]")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("generate", help="solve the rod for random activations")
    common(g)
    g.add_argument("--n", type=int)
    g.add_argument("--ns", type=int)
    g.add_argument("--box", help="lo,hi (all coordinates) or lo1,hi1,lo2,hi2,...")
    g.add_argument("--workers", type=int)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="fit the operator network")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--lr-final", dest="lr_final", type=float)
    t.add_argument("--split")
    t.add_argument("--split-seed", dest="split_seed", type=int)
    t.add_argument("--q-box", dest="q_box", help="actuation normalization box, same syntax as generate --box")

    e = sub.add_parser("eval", help="test-set metrics of a checkpoint")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split")
    e.add_argument("--split-seed", dest="split_seed", type=int)
    e.add_argument("--all", action="store_true", help="evaluate on the whole file")

    r = sub.add_parser("run", help="closed-loop inverse kinematics")
    common(r)
    r.add_argument("--model", choices=("cc", "neural"))
    r.add_argument("--task", choices=KINDS)
    r.add_argument("--target")
    r.add_argument("--sbar", type=float)
    r.add_argument("--K", help="scalar or comma-separated diagonal")
    r.add_argument("--dt", type=float)
    r.add_argument("--tend", type=float)
    r.add_argument("--q0")
    r.add_argument("--damping", type=float)
    r.add_argument("--checkpoint")
    r.add_argument("--out", required=True)
    return ap


LIST_FLAGS = ("--box", "--q-box", "--target", "--q0", "--K", "--split")
NUMBER_LIST = re.compile(r"^-[\d.]")


def _glue_negative_lists(argv: list) -> list:
    """``--box -1.67,0`` -> ``--box=-1.67,0`` so argparse does not read it as an option."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in LIST_FLAGS and i + 1 < len(argv) and NUMBER_LIST.match(argv[i + 1]):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "run": cmd_run}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_negative_lists(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](args, cfg)
        logging.getLogger(__name__).info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"softclik {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"softclik {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
