"""Command-line front end: ``rpahbf {gen-data,train,eval,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error.  The worker
count for classical solvers and dataset generation is read from the
``RPAHBF_WORKERS`` environment variable (default 1).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import GreedyConfig
from .channel import ConfigError
from .config import RunConfig, desk_config, dump_config, load_config
from .dataset import generate_dataset, generate_samples, read_dataset
from .precoding import dbm_to_watts
from .prhbfnet import SOLVERS, evaluate, load_model, train

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


@dataclasses.dataclass
class RunManifest:
    command: str
    config: str
    seeds: dict
    inputs: dict
    outputs: list
    started: str
    finished: str = ""

    def write(self, path) -> Path:
        self.finished = _now()
        path = Path(path)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _run_config(path) -> RunConfig:
    return desk_config() if path is None else load_config(path)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    run = _run_config(args.config)
    started = _now()
    cfg = run.system
    seed = cfg.rng_seed if args.seed is None else args.seed
    generate_dataset(cfg, args.count, seed, args.out, float_width=args.float_width)
    inputs = {args.config: _sha256(args.config)} if args.config else {}
    RunManifest("gen-data", dump_config(run), {"seed": seed}, inputs, [str(args.out)],
                started).write(f"{args.out}.manifest.json")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args.config)
    started = _now()
    net = run.network if args.epochs is None else run.network.replace(epochs=args.epochs)
    train_set = read_dataset(args.data)
    val_set = read_dataset(args.val) if args.val else None
    system = train_set.config
    pt = None if args.pt_dbm is None else float(dbm_to_watts(args.pt_dbm))
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    train(train_set, val_set, system, net, out_dir=args.out, pt=pt, log=log)
    out = Path(args.out)
    inputs = {p: _sha256(p) for p in (args.config, args.data, args.val) if p}
    RunManifest("train", dump_config(dataclasses.replace(run, system=system, network=net)),
                {"training": net.seed, "data": train_set.header.seed}, inputs,
                [str(out / n) for n in ("best.rpac", "last.rpac", "history.csv")],
                started).write(out / "manifest.json")
    return EXIT_OK


def _evaluate(data, solver, system, args, greedy: GreedyConfig, pt=None, model=None):
    return evaluate(data, solver, system, model, pt=pt, mode=args.mode, seed=args.random_seed,
                    greedy=greedy)


def cmd_eval(args) -> int:
    run = _run_config(args.config)
    started = _now()
    ds = read_dataset(args.data)
    system = ds.config
    model = None
    if args.solver == "prhbfnet":
        if not args.checkpoint:
            raise ConfigError("--solver prhbfnet requires --checkpoint")
        model = load_model(args.checkpoint, system)
    pt = None if args.pt_dbm is None else float(dbm_to_watts(args.pt_dbm))
    res = _evaluate(ds, args.solver, system, args, run.greedy, pt, model)
    rows = [["sample", i, args.solver, _fmt(se), "", " ".join(map(str, c))]
            for i, (se, c) in enumerate(zip(res.per_sample, res.patterns))]
    rows.append(["summary", res.n, args.solver, _fmt(res.mean), _fmt(res.std), ""])
    _write_csv(args.out, ["kind", "sample", "solver", "se", "std_se", "pattern"], rows)
    inputs = {p: _sha256(p) for p in (args.config, args.data, args.checkpoint) if p}
    RunManifest("eval", dump_config(dataclasses.replace(run, system=system)),
                {"random": args.random_seed}, inputs, [str(args.out)],
                started).write(f"{args.out}.manifest.json")
    return EXIT_OK


def _derived_seed(seed: int, value: int) -> int:
    return int(np.random.SeedSequence([seed, value]).generate_state(1, np.uint64)[0] >> 1)


def cmd_sweep(args) -> int:
    run = _run_config(args.config)
    started = _now()
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    for s in solvers:
        if s not in SOLVERS:
            raise ConfigError(f"unknown solver {s!r}")
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if args.data:
        ds = read_dataset(args.data)
        base, data = ds.config, ds.data
    else:
        base, data = run.system, None
    seed = base.rng_seed if args.seed is None else args.seed
    if "prhbfnet" in solvers and not args.checkpoint:
        raise ConfigError("solver 'prhbfnet' requires --checkpoint")

    rows = []
    for value in values:
        if args.axis == "pt_dbm":
            system = base.replace(transmit_power_dbm=value)
            points = data if data is not None else generate_samples(system, args.count, seed)
        else:
            k = int(value)
            if k != value:
                raise ConfigError(f"num_users values must be integers, got {value}")
            system = base.replace(num_users=k)     # ConfigError if K > N_RF
            points = generate_samples(system, args.count, _derived_seed(seed, k))
        for solver in solvers:
            net = load_model(args.checkpoint, system) if solver == "prhbfnet" else None
            res = _evaluate(points, solver, system, args, run.greedy, model=net)
            rows.append((value, solver, res.mean, res.std, res.n))
    rows.sort(key=lambda r: (r[0], r[1]))
    out_rows = [[args.axis, _fmt(v), s, _fmt(m), _fmt(sd), n] for v, s, m, sd, n in rows]
    _write_csv(args.out, ["axis", "value", "solver", "mean_se", "std_se", "n"], out_rows)
    inputs = {p: _sha256(p) for p in (args.config, args.data, args.checkpoint) if p}
    RunManifest("sweep", dump_config(dataclasses.replace(run, system=base)),
                {"data": seed, "random": args.random_seed}, inputs, [str(args.out)],
                started).write(f"{args.out}.manifest.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpahbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an RPAH dataset")
    p.add_argument("--config")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--float-width", type=int, choices=(4, 8), default=8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train PR-HBFNet")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--pt-dbm", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one solver on a dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--solver", choices=SOLVERS, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--mode", type=int, default=1)
    p.add_argument("--random-seed", type=int, default=0)
    p.add_argument("--pt-dbm", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="tidy CSV of mean SE versus Pt or K")
    p.add_argument("--config")
    p.add_argument("--axis", choices=("pt_dbm", "num_users"), required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--solvers", default="fixed,greedy")
    p.add_argument("--data")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--mode", type=int, default=1)
    p.add_argument("--random-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
