"""Command-line entry point: ``boxkg {train,eval,inspect,gradcheck,synth}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import shutil
import sys

import numpy as np

from . import evaluation
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_run_config
from .kgdata import KGFormatError, SamplingError, load_kg, split_kg, write_kg
from .onto_model import MissingFeatureError, TextFeatureTable
from .state import check_compatible, init_state
from .synth import SYNTH_TRAIN_CONFIG, make_synthetic_kg
from .trainer import TrainingError, check_gradients, fit

logger = logging.getLogger("boxkg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PATH_KEYS = ("inst_path", "onto_path", "links_path", "features_path")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config and data plumbing


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("lr", "seed", "max_epochs", "out_dir", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config, _overrides(args))
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()
    for key in PATH_KEYS:
        val = getattr(cfg, key)
        if val and not os.path.isabs(val):
            setattr(cfg, key, os.path.normpath(os.path.join(base, val)))
    cfg.validate()
    return cfg


def _load_data(cfg: RunConfig):
    missing = [k for k in PATH_KEYS[:3] if not getattr(cfg, k)]
    if missing:
        raise UsageError(f"config lacks data paths: {', '.join(missing)}")
    kg = load_kg(cfg.inst_path, cfg.onto_path, cfg.links_path)
    logger.info("loaded %s", kg.summary())
    data = split_kg(kg, cfg.ratios, cfg.split_seed, cfg.split_mode)
    features = None
    if cfg.onto_mode == "text":
        if not cfg.features_path:
            raise UsageError("onto_mode = text needs features_path")
        features = TextFeatureTable.load(cfg.features_path, kg)
    return kg, data, features


def _apply_threads(cfg: RunConfig):
    cap = os.environ.get("BOXKG_THREADS")
    threads = cfg.threads
    if cap:
        threads = min(threads, max(1, int(cap)))
    return threads


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance (unit insert/delete/substitute costs)."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _resolve(name: str, names, what: str) -> int:
    try:
        return names.index(name)
    except ValueError:
        hint = ""
        if names:
            best = min(names, key=lambda n: edit_distance(name, n))
            hint = f"; did you mean {best!r}?"
        raise KeyError(f"unknown {what} {name!r}{hint}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = _run_config(args)
    kg, data, features = _load_data(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    if args.resume:
        state = load_checkpoint(args.resume)
        check_compatible(state, kg)
        state.config.max_epochs = cfg.max_epochs
    else:
        state = init_state(cfg.train_config(), kg, features)
    best = os.path.join(cfg.out_dir, "best.ckpt")
    result = fit(state, data, features, metrics_path=os.path.join(cfg.out_dir, "metrics.csv"),
                 checkpoint_dir=cfg.out_dir)
    if not os.path.exists(best) or result.best_metric is None:
        # no validation signal: the final parameters are the best we have
        shutil.copyfile(os.path.join(cfg.out_dir, "final.ckpt"), best)
    last = result.history[-1] if result.history else None
    if last:
        print(f"epochs {state.epoch}  J_O {last['J_O']:.5f}  J_I {last['J_I']:.5f}  "
              f"J_Cross {last['J_Cross']:.5f}")
    if result.best_metric is not None:
        print(f"best validation metric {result.best_metric:.5f} at epoch {result.best_epoch}")
    print(f"outputs in {cfg.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    kg, data, features = _load_data(cfg)
    state = load_checkpoint(args.checkpoint)
    check_compatible(state, kg)
    threads = _apply_threads(cfg)
    task = args.task
    if task == "kgc-inst":
        reports = [evaluation.eval_kgc(state, data, "instance", args.partition, features,
                                       threads=threads)]
    elif task == "kgc-onto":
        reports = [evaluation.eval_kgc(state, data, "ontology", args.partition, features,
                                       args.intersection, threads=threads)]
    elif task == "link":
        reports = [evaluation.eval_linking(state, data, args.partition, threads),
                   dataclasses.replace(evaluation.eval_linking_frequency_baseline(data, args.partition),
                                       view="linking_frequency_baseline")]
    else:
        names = list(kg.onto_relations.names)
        rel = _resolve(args.relation, names, "relation") if args.relation else (
            names.index("use_ingredient") if "use_ingredient" in names else 0)
        concepts = list(kg.concepts.names)
        if args.recipes:
            recipes = [_resolve(n, concepts, "concept") for n in args.recipes.split(",")]
        else:
            onto = kg.onto_triples
            recipes = np.unique(onto[onto[:, 1] == rel][:, 0]).tolist()
        rep = evaluation.eval_diversity(state, data, recipes, args.types, args.items, rel,
                                        budget=args.budget, features=features,
                                        intersection=args.intersection)
        padded = {concepts[k]: v for k, v in rep.padded.items() if v}
        if padded:
            print(f"padded candidate lists: {padded}", file=sys.stderr)
        reports = [rep]
    out = args.report or os.path.join(cfg.out_dir, f"eval_{task}.csv")
    evaluation.write_reports(reports, out)
    print(evaluation.format_reports(reports))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    state = load_checkpoint(args.checkpoint)
    if not state.vocab:
        raise CheckpointError("checkpoint carries no vocabulary; cannot resolve names")
    concepts = state.vocab["concepts"]
    relations = state.vocab["onto_relations"]
    c = _resolve(args.concept, concepts, "concept")
    r = _resolve(args.relation, relations, "relation") if args.relation else 0
    features = None
    if state.config.onto_mode == "text":
        if not args.config:
            raise UsageError("text-mode checkpoints need --config for the feature table")
        cfg = _run_config(args)
        kg, _, features = _load_data(cfg)
    result = evaluation.inspect_concepts(state, c, r, args.top_k, features, args.intersection)
    sys.stdout.write(result.to_tsv(concepts))
    return EXIT_OK


def _corrupt_hook(view, grads):
    for g in grads.values():
        g *= 1.5
    return grads


def cmd_gradcheck(args) -> int:
    cfg = _run_config(args)
    if cfg.inst_path:
        kg, data, features = _load_data(cfg)
    else:
        kg = make_synthetic_kg(roots=2, branching=(2, 2), n_entities=40, n_inst_triples=200,
                               n_inst_relations=3, seed=cfg.seed).kg
        data, features = split_kg(kg, cfg.ratios, cfg.split_seed, "linking"), None
    state = init_state(cfg.train_config(), kg, features)
    report = check_gradients(state, data, n_points=args.points, tol=args.tol, features=features,
                             seed=cfg.seed, grad_hook=_corrupt_hook if args.corrupt_grad else None)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_synth(args) -> int:
    branching = tuple(int(x) for x in args.branching.split(","))
    n_leaves = args.roots * int(np.prod(branching))
    n_entities = args.entities_per_leaf * n_leaves if args.entities_per_leaf else args.entities
    s = make_synthetic_kg(args.roots, branching, n_entities, args.triples, args.relations,
                          args.noise, args.seed)
    write_kg(s.kg, args.out)
    with open(os.path.join(args.out, "hierarchy.tsv"), "w", encoding="utf-8") as fh:
        names = s.kg.concepts.names
        for sub, sup in s.gold_pairs():
            fh.write(f"{names[sub]}\t{names[sup]}\n")
    toy = dict(SYNTH_TRAIN_CONFIG, split_mode="linking", inst_path="inst.tsv", onto_path="onto.tsv", links_path="links.tsv",
               out_dir=os.path.join(args.out, "run"))
    with open(os.path.join(args.out, "toy.cfg"), "w", encoding="utf-8") as fh:
        fh.write("# synthetic two-view KG fixture\n")
        fh.writelines(f"{k} = {v}\n" for k, v in toy.items())
    print(s.kg.summary())
    print(f"wrote fixture to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _config_args(p, data=True):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    if data:
        p.add_argument("--out-dir", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxkg", description="Two-view KG embeddings with box concepts.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _config_args(p)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True, choices=["kgc-inst", "kgc-onto", "link", "diversity"])
    p.add_argument("--partition", default="test", choices=["valid", "test"])
    p.add_argument("--intersection", choices=["smooth", "hard"])
    p.add_argument("--report", help="CSV path (default: OUT_DIR/eval_TASK.csv)")
    p.add_argument("--types", type=int, default=12)
    p.add_argument("--items", type=int, default=10)
    p.add_argument("--budget", type=int, default=120)
    p.add_argument("--relation", help="ontology relation for diversity retrieval")
    p.add_argument("--recipes", help="comma-separated concept names (default: all heads)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="intersection ranking and volume table for a concept")
    _config_args(p, data=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--concept", required=True)
    p.add_argument("--relation")
    p.add_argument("--top-k", dest="top_k", type=int, default=3)
    p.add_argument("--intersection", choices=["smooth", "hard"])
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    _config_args(p, data=False)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--corrupt-grad", dest="corrupt_grad", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write the synthetic two-view KG fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--roots", type=int, default=2)
    p.add_argument("--branching", default="4,5", help="children per node, one entry per level")
    p.add_argument("--entities", type=int, default=500)
    p.add_argument("--entities-per-leaf", dest="entities_per_leaf", type=int)
    p.add_argument("--triples", type=int, default=5000)
    p.add_argument("--relations", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors exit EXIT_USAGE
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"boxkg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError) as exc:
        print(f"boxkg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KeyError as exc:
        print(f"boxkg: {exc.args[0]}", file=sys.stderr)
        return EXIT_DATA
    except (KGFormatError, CheckpointError, SamplingError, MissingFeatureError, OSError,
            ValueError, IndexError) as exc:
        print(f"boxkg: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
