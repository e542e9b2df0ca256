"""Command-line entry point: prepare, train, eval, ablate, export-embeddings."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from ..dataio import FORMATS, load_prepared, prepare_file
from ..errors import ConfigError, DataError, NumericalError, S4RecError
from ..evalkit import BUCKETS, evaluate
from ..objectives import ABLATION_MODES
from .checkpoint import load_checkpoint
from .config import from_dict, load_config
from .export import export_embeddings
from .trainer import Trainer, load_trained

log = logging.getLogger("s4rec")


def _ks(text):
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects comma-separated integers, got {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("--k values must be positive")
    return ks


def _modes(text):
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in ABLATION_MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"unknown ablation mode(s) {bad}; choose from {ABLATION_MODES}")
    return modes


def build_parser():
    p = argparse.ArgumentParser(prog="s4rec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("prepare", help="ingest, 5-core filter, label head/tail, write a prepared dataset")
    q.add_argument("--input", required=True)
    q.add_argument("--format", choices=FORMATS, default="triplet")
    q.add_argument("--output", required=True)
    q.add_argument("--min-count", type=int, default=5)
    q.add_argument("--head-ratio", type=float, default=0.2)
    q.add_argument("--max-len", type=int, default=50)

    q = sub.add_parser("train", help="train from a JSON config")
    q.add_argument("--config", required=True)
    q.add_argument("--resume")

    q = sub.add_parser("eval", help="full-ranking evaluation of a checkpoint")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--split", choices=("valid", "test"), default="test")
    q.add_argument("--bucket", choices=BUCKETS, default="all")
    q.add_argument("--k", type=_ks, default=[5, 20])
    q.add_argument("--output")
    q.add_argument("--data", help="prepared dataset dir (defaults to the one in the checkpoint config)")

    q = sub.add_parser("ablate", help="train each ablation mode and compare test metrics")
    q.add_argument("--config", required=True)
    q.add_argument("--modes", type=_modes, default=["sr", "sr_csd", "sr_csd_gr"])
    q.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated seeds (default: the config seed)")
    q.add_argument("--output", help="directory for runs and the comparison table")

    q = sub.add_parser("export-embeddings", help="write per-user representations and cluster ids")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--output", required=True)
    q.add_argument("--data")
    return p


def _dataset_for(config_data, override):
    path = override or config_data
    if not path:
        raise ConfigError("no prepared dataset: set data.prepared in the config or pass --data")
    return load_prepared(path)


def cmd_prepare(args):
    ds = prepare_file(args.input, args.format, args.output, args.min_count, args.head_ratio, args.max_len)
    print(f"prepared {ds.num_users} users, {ds.num_items} items -> {args.output}")


def cmd_train(args):
    config = load_config(args.config)
    trainer = Trainer(config, _dataset_for(config.data.prepared, None))
    best = trainer.fit(resume=args.resume)
    print(f"best valid ndcg@{trainer.select_k}={trainer.best_metric:.6f} "
          f"(epoch {trainer.best_epoch}) -> {best}")


def cmd_eval(args):
    manifest, _ = load_checkpoint(args.checkpoint)
    ds = _dataset_for(manifest["config"]["data"]["prepared"], args.data)
    trainer = load_trained(args.checkpoint, ds)
    report = evaluate(trainer.model, trainer.views, args.split, args.bucket, tuple(args.k),
                      trainer.config.eval.batch_size)
    out = {"split": args.split, "checkpoint": args.checkpoint, **report.to_dict()}
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def run_ablation(config, dataset, modes, seeds, out_dir):
    """Train every (mode, seed), evaluate the best checkpoint on test; returns rows."""
    rows = []
    ks = tuple(config.eval.ks)
    for mode in modes:
        for seed in seeds:
            raw = config.to_dict()
            raw["ablation"] = {"mode": mode}
            raw["seed"] = seed
            raw["output_dir"] = os.path.join(out_dir, f"{mode}_seed{seed}")
            cfg = from_dict(raw)
            trainer = Trainer(cfg, dataset)
            best = trainer.fit()
            trainer = load_trained(best, dataset)
            row = {"mode": mode, "seed": seed, "best_epoch": trainer.best_epoch}
            for bucket in BUCKETS:
                try:
                    rep = evaluate(trainer.model, trainer.views, "test", bucket, ks, cfg.eval.batch_size)
                except DataError:
                    continue
                for k in ks:
                    row[f"{bucket}.hr@{k}"] = rep.hr[k]
                    row[f"{bucket}.ndcg@{k}"] = rep.ndcg[k]
            rows.append(row)
    return rows


def format_table(rows):
    if not rows:
        return ""
    cols = ["mode", "seed"] + [c for c in rows[0] if "@" in c]
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(f"{r.get(c, float('nan')):.4f}" if "@" in c else str(r[c]) for c in cols))
    return "\n".join(lines)


def cmd_ablate(args):
    config = load_config(args.config)
    ds = _dataset_for(config.data.prepared, None)
    out_dir = args.output or os.path.join(config.output_dir, "ablation")
    os.makedirs(out_dir, exist_ok=True)
    rows = run_ablation(config, ds, args.modes, args.seeds or [config.seed], out_dir)
    with open(os.path.join(out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
    table = format_table(rows)
    with open(os.path.join(out_dir, "ablation.tsv"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)


def cmd_export(args):
    manifest, _ = load_checkpoint(args.checkpoint)
    ds = _dataset_for(manifest["config"]["data"]["prepared"], args.data)
    export_embeddings(args.checkpoint, ds, args.output)
    print(f"wrote {len(ds.sequences)} rows -> {args.output}")


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "export-embeddings": cmd_export}


def thread_limit():
    raw = os.environ.get("S4REC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"S4REC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("S4REC_THREADS must be >= 1")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=thread_limit()):
            COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return exc.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return exc.exit_code
    except S4RecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
