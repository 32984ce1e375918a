"""Command-line entry point: ``porenet <subcommand> ...``.

Environment overrides: ``PORENET_SEED`` replaces the default seed and
``PORENET_OUTPUT`` the default output directory.  Explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as E
from . import generate as G
from . import models as M
from . import training as Tr
from .config import load_config
from .dataset import (DatasetSplit, FlowField, compute_normalization, load_case, load_dataset,
                      save_dataset, split_dataset)
from .errors import PorenetError

DEFAULT_OUTPUT = "porenet_out"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


class _UsageError(Exception):
    pass


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PORENET_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise _UsageError(f"PORENET_SEED must be an integer, got {env!r}") from None
    return 0


def _out(args, default_name):
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get("PORENET_OUTPUT", DEFAULT_OUTPUT)) / default_name


def _say(msg):
    print(msg, flush=True)


# ------------------------------------------------------------ subcommands

def cmd_gen_mms(args):
    seed = _seed(args)
    cfg = load_config(args.config)
    cases = G.mms_cases(args.cases, seed, sampler=cfg.sampler_config())
    if args.unseen:
        cases.append(G.mms_case(G.composite_shape(G.MMS_DOMAIN), seed, case_id="mms_unseen",
                                sampler=cfg.sampler_config()))
    out = save_dataset(cases, _out(args, "mms"))
    _say(f"wrote {len(cases)} MMS cases to {out}")
    return 0


def cmd_gen_duct(args):
    seed = _seed(args)
    cfg = load_config(args.config)
    cases = G.duct_cases(args.cases, seed, speed_range=(args.speed_min, args.speed_max),
                         angle_range=(args.angle_min, args.angle_max),
                         D_range=(args.D_min, args.D_max), F_range=(args.F_min, args.F_max),
                         n_observations=args.observations, sampler=cfg.sampler_config())
    out = save_dataset(cases, _out(args, "duct"))
    _say(f"wrote {len(cases)} duct cases to {out}")
    return 0


def _split(cases, seed, path):
    if path is not None:
        split = DatasetSplit.from_dict(json.loads(Path(path).read_text()))
    elif len(cases) >= 5:
        split = split_dataset([c.case_id for c in cases], seed)
    else:
        split = DatasetSplit(tuple(c.case_id for c in cases), (), ())
    by_id = {c.case_id: c for c in cases}
    missing = [i for part in (split.train, split.validation, split.test) for i in part if i not in by_id]
    if missing:
        raise _UsageError(f"split names unknown cases: {missing}")
    return split, [by_id[i] for i in split.train], [by_id[i] for i in split.validation]


def cmd_train(args):
    seed = _seed(args)
    cfg = load_config(args.config)
    cases = load_dataset(args.data)
    split, train_cases, val_cases = _split(cases, seed, args.split)
    tc = cfg.train_config(seed=seed, epochs=args.epochs)
    out = _out(args, f"train_{args.model}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=2) + "\n")
    stats = compute_normalization(train_cases, split=split)
    mcfg = Tr.default_model_config(args.model, train_cases, dropout=tc.dropout,
                                   **cfg.model_overrides(args.model))
    every = max(1, tc.epochs // 10)

    def progress(row):
        if row["epoch"] % every == 0 or row["epoch"] == tc.epochs:
            _say(f"epoch {row['epoch']:5d}  lr {row['lr']:.3e}  total {row['total']:.6e}")

    res = Tr.train(args.model, train_cases, tc, model_config=mcfg, stats=stats, val_cases=val_cases,
                   checkpoint_dir=out, resume_from=args.resume, progress=None if args.quiet else progress)
    Tr.write_history(out / "history.csv", res.history)
    _say(f"final checkpoint: {out / 'final'}")
    return 0


def _eval_cases(cases, ids):
    if not ids:
        return cases
    by_id = {c.case_id: c for c in cases}
    unknown = [i for i in ids if i not in by_id]
    if unknown:
        raise _UsageError(f"unknown case ids: {unknown}")
    return [by_id[i] for i in ids]


def cmd_eval(args):
    cases = _eval_cases(load_dataset(args.data), args.cases)
    if (args.checkpoint is None) == (args.predictions is None):
        raise _UsageError("eval needs exactly one of --checkpoint or --predictions")
    tables = []
    if args.checkpoint is not None:
        params, manifest, _ = M.load_checkpoint(args.checkpoint)
        if manifest.get("stats") is None:
            raise _UsageError(f"{args.checkpoint}: checkpoint carries no normalization statistics")
        stats = Tr.NormalizationStats.from_dict(manifest["stats"])
        model = M.Model(params, branch_seed=manifest.get("extra", {}).get("train_config", {}).get("seed", 0))
        tables = [E.evaluate_case(params, c, stats, model) for c in cases]
    else:
        for c in cases:
            pred = load_case(Path(args.predictions) / c.case_id)
            if not pred.has_reference or pred.n_points != c.n_points:
                raise _UsageError(f"prediction for {c.case_id!r} lacks fields or point count differs")
            tables.append(E.mae_by_region(FlowField(pred.ref_u, pred.ref_p), FlowField(c.ref_u, c.ref_p),
                                          E.region_masks(c)))
    mean = E.average_tables(tables)
    out = _out(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    (out / "mae.csv").write_text(mean.to_csv())
    (out / "mae.txt").write_text(mean.to_text())
    with open(out / "mae_per_case.csv", "w") as fh:
        fh.write("case_id,D," + ",".join(f"{f}_{r}" for f in mean.fields for r in mean.regions) + "\n")
        for c, t in zip(cases, tables):
            vals = ["" if t.values.get((f, r)) is None else "%.17g" % t.values[(f, r)]
                    for f in mean.fields for r in mean.regions]
            fh.write(",".join([c.case_id, "%.17g" % c.meta.D] + vals) + "\n")
    if len({c.meta.D for c in cases}) > 1:
        grouped = E.group_errors_by_coefficient(tables, [c.meta.D for c in cases])
        (out / "mae_by_D.txt").write_text(E.grouped_table_text(grouped))
    _say(mean.to_text().rstrip())
    return 0


def cmd_bench(args):
    seed = _seed(args)
    if args.checkpoint is not None:
        params, manifest, _ = M.load_checkpoint(args.checkpoint)
        stats = Tr.NormalizationStats.from_dict(manifest["stats"])
    else:
        mcfg = M.PipnConfig() if args.model == "pipn" else M.PiganoConfig()
        params = M.init_parameters(mcfg, seed)
        stats = None
    if args.data is not None:
        cases = load_dataset(args.data)
    else:
        n_int = int(round(args.points * 5 / 6))
        cases = [G.duct_case(G.random_shape(np.random.default_rng(seed), G.DUCT_DOMAIN), seed,
                             counts={"interior": n_int, "boundary": args.points - n_int})]
    if stats is None:
        stats = compute_normalization(cases)
    report = E.benchmark_inference(params, cases, stats, repetitions=args.repetitions,
                                   solver_reference_s=args.solver_time)
    out = _out(args, "bench.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    for cid, n, m in zip(report.case_ids, report.n_points, report.per_case_mean):
        _say(f"{cid}: {n} points, mean forward pass {m * 1e3:.2f} ms")
    _say(f"overall mean {report.mean * 1e3:.2f} ms, std {report.std * 1e3:.2f} ms over "
         f"{report.repetitions} repetitions")
    return 0


def cmd_check(args):
    from .oracles import run_all

    results = run_all(seed=_seed(args))
    for r in results:
        _say(r.line())
    return 0 if all(r.passed for r in results) else 1


# ----------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="porenet", description="Physics-informed point-cloud models for porous flow.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int, default=None, help="master seed (env PORENET_SEED)")
        if out:
            sp.add_argument("--out", default=None, help="output location (env PORENET_OUTPUT)")

    g = sub.add_parser("gen-mms", help="manufactured-solution cases")
    g.add_argument("--cases", type=int, default=6)
    g.add_argument("--unseen", action="store_true", help="also emit the composite unseen geometry")
    g.add_argument("--config", default=None)
    common(g)
    g.set_defaults(func=cmd_gen_mms)

    g = sub.add_parser("gen-duct", help="parametric 2D porous-duct cases")
    g.add_argument("--cases", type=int, default=10)
    g.add_argument("--observations", type=int, default=0)
    for name, lo, hi in (("speed", 0.5, 1.5), ("angle", 0.0, 0.0), ("D", 100.0, 100.0), ("F", 10.0, 10.0)):
        g.add_argument(f"--{name}-min", type=float, default=lo, dest=f"{name}_min")
        g.add_argument(f"--{name}-max", type=float, default=hi, dest=f"{name}_max")
    g.add_argument("--config", default=None)
    common(g)
    g.set_defaults(func=cmd_gen_duct)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--model", choices=("pipn", "pigano"), default="pipn")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--epochs", type=int, default=None, help="overrides the config file")
    t.add_argument("--split", default=None, help="JSON file with train/validation/test ids")
    t.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    t.add_argument("--quiet", action="store_true")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="region-wise MAE against reference fields")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--predictions", default=None, help="dataset directory whose fields are predictions")
    e.add_argument("--cases", nargs="*", default=None)
    common(e)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="inference timing")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--model", choices=("pipn", "pigano"), default="pipn")
    b.add_argument("--data", default=None)
    b.add_argument("--points", type=int, default=1200)
    b.add_argument("--repetitions", type=int, default=20)
    b.add_argument("--solver-time", type=float, default=None, help="external solver seconds (annotation)")
    common(b)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("check", help="residual and gradient oracle suite")
    common(c, out=False)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PorenetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
