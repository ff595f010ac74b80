"""``btcnn`` command line: synth, train, eval, compare.

Exit status is 0 on success, 1 for dataset/config/runtime errors and 2 for
unparseable flags. Output files are written to a temporary sibling and
renamed into place only once every output of the command is complete.
"""
import argparse
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import PARTITIONS, load_manifest, load_record, stratified_split
from .errors import BtcnnError, EmptyMatrix, MetadataMismatch
from .evaluation import (
    ComparisonCell,
    aggregate_metrics,
    comparison_report,
    confusion_matrix,
    lenient_metrics_json,
    metrics_json,
    predict_batch,
)
from .model import build_architecture
from .preprocess import INPUT_SIZES, Variant, prepare_samples
from .synth import SynthSpec, generate, write_dataset
from .training import (
    TrainConfig,
    checkpoint_metadata,
    decode_checkpoint,
    encode_checkpoint,
    train,
)

log = logging.getLogger("btcnn")
SIZE_SET = "{" + ", ".join(str(s) for s in INPUT_SIZES) + "}"


class CliError(Exception):
    """Reported on stderr; exit status 1."""


@contextmanager
def staged_outputs(*paths):
    """Yield temp paths; rename all into place on success, delete on failure."""
    finals = [Path(p) for p in paths]
    temps = [p.with_name(f".{p.name}.part") for p in finals]
    for p in finals:
        p.parent.mkdir(parents=True, exist_ok=True)
    try:
        yield temps
        for t, f in zip(temps, finals):
            os.replace(t, f)
    except BaseException:
        for t in temps:
            t.unlink(missing_ok=True)
        raise


def _check_size(size):
    if size is not None and size not in INPUT_SIZES:
        raise CliError(f"--size must be one of {SIZE_SET}, got {size}")


def _load(data_dir):
    manifest = load_manifest(data_dir)
    records = {e.record_id: load_record(e) for e in manifest}
    return manifest, records


def _partition(manifest, records, split, name):
    return [records[rid] for rid in split.ids(name, manifest)]


# --------------------------------------------------------------------------


def cmd_synth(args):
    if args.per_class < 1:
        raise CliError("--per-class must be >= 1")
    if args.size < 16:
        raise CliError("--size must be >= 16")
    records = generate(SynthSpec(args.per_class, args.size, args.seed))
    write_dataset(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")


def _train_cell(manifest, records, split, variant, size, config):
    train_set = prepare_samples(_partition(manifest, records, split, "train"), variant, size)
    val_set = prepare_samples(_partition(manifest, records, split, "validation"), variant, size)
    return train(config, train_set, val_set)


def cmd_train(args):
    _check_size(args.size)
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        max_iterations=args.iters,
        seed=args.seed,
        variant=Variant(args.variant),
        input_size=args.size,
    )
    config.validate()
    print(
        f"train: variant={config.variant} size={config.input_size} batch={config.batch_size} "
        f"lr={config.learning_rate:g} iters={config.max_iterations} seed={config.seed}"
    )
    manifest, records = _load(args.data)
    split = stratified_split(manifest, seed=args.seed)
    t0 = time.perf_counter()
    params, history = _train_cell(manifest, records, split, config.variant, config.input_size, config)
    meta = checkpoint_metadata(build_architecture(config.input_size), config.variant, args.seed)
    with staged_outputs(args.out, args.history) as (ckpt_tmp, hist_tmp):
        ckpt_tmp.write_bytes(encode_checkpoint(params, meta))
        hist_tmp.write_text(history.to_csv(), encoding="utf-8")
    last = history.rows[-1]
    print(
        f"done in {time.perf_counter() - t0:.1f}s: train_acc={last[3]:.4f} "
        f"val_acc={last[5]:.4f} -> {args.out}"
    )


def cmd_eval(args):
    _check_size(args.size)
    try:
        ckpt = decode_checkpoint(Path(args.model).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}") from None
    meta = ckpt.metadata
    size = int(meta["input_size"])
    variant = Variant(meta["variant"])
    if args.size is not None and args.size != size:
        raise MetadataMismatch(f"checkpoint input size {size} conflicts with --size {args.size}")
    if args.variant is not None and Variant(args.variant) is not variant:
        raise MetadataMismatch(f"checkpoint variant {variant} conflicts with --variant {args.variant}")
    params = ckpt.params()
    manifest, records = _load(args.data)
    split = stratified_split(manifest, seed=int(meta.get("split_seed", 0)))
    data = prepare_samples(_partition(manifest, records, split, args.split), variant, size)
    if len(data) == 0:
        raise CliError(f"{args.split} partition is empty")
    cm = confusion_matrix(predict_batch(params, data.x), data.y)
    metrics = aggregate_metrics(cm)
    extra = {"split": args.split, "variant": str(variant), "input_size": size}
    with staged_outputs(args.report, args.cm) as (rep_tmp, cm_tmp):
        rep_tmp.write_text(metrics_json(metrics, extra), encoding="utf-8")
        cm_tmp.write_text(cm.to_csv(), encoding="utf-8")
    print(f"{args.split}: n={cm.total} accuracy={metrics.overall_accuracy:.4f}")


def cell_json_path(report, variant, size) -> Path:
    report = Path(report)
    return report.with_name(f"{report.stem}.{Variant(variant)}-{size}.json")


def cmd_compare(args):
    config = dict(max_iterations=args.iters, seed=args.seed)
    TrainConfig(**config).validate()
    manifest, records = _load(args.data)
    split = stratified_split(manifest, seed=args.seed)
    parts = {name: _partition(manifest, records, split, name) for name in PARTITIONS}
    cells, outputs = [], {}
    for variant in (Variant.CROPPED, Variant.UNCROPPED, Variant.SEGMENTED):
        for size in INPUT_SIZES:
            name = f"{variant}/{size}"
            t0 = time.perf_counter()
            try:
                cfg = TrainConfig(variant=variant, input_size=size, **config)
                sets = {p: prepare_samples(parts[p], variant, size) for p in PARTITIONS}
                params, _ = train(cfg, sets["train"], sets["validation"])
                test = sets["test"]
                cm = confusion_matrix(predict_batch(params, test.x), test.y)
                if cm.total == 0:
                    raise EmptyMatrix("test partition is empty")
            except BtcnnError as exc:
                raise CliError(f"cell {name} failed: {exc}") from exc
            acc = int(np.trace(cm.counts)) / cm.total
            cells.append(ComparisonCell(variant, size, acc))
            extra = {"split": "test", "variant": str(variant), "input_size": size}
            outputs[cell_json_path(args.out, variant, size)] = lenient_metrics_json(cm, extra)
            print(
                f"{name}: test_acc={acc:.4f} "
                f"({time.perf_counter() - t0:.1f}s)",
                flush=True,
            )
    outputs[Path(args.out)] = comparison_report(cells)
    with staged_outputs(*outputs) as temps:
        for tmp, text in zip(temps, outputs.values()):
            tmp.write_text(text, encoding="utf-8")
    print(f"report -> {args.out}")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    p = argparse.ArgumentParser(prog="btcnn", description="Brain tumor MRI CNN classifier")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--size", type=int, default=128, help="image side in pixels")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    variants = [v.value for v in Variant]
    t = sub.add_parser("train", help="train one (variant, size) model")
    t.add_argument("--data", required=True)
    t.add_argument("--variant", choices=variants, default=str(defaults.variant))
    t.add_argument("--size", type=int, default=defaults.input_size, help=f"one of {SIZE_SET}")
    t.add_argument("--iters", type=int, default=defaults.max_iterations)
    t.add_argument("--batch", type=int, default=defaults.batch_size)
    t.add_argument("--lr", type=float, default=defaults.learning_rate)
    t.add_argument("--seed", type=int, default=defaults.seed, help="split, init and schedule seed")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--history", required=True, help="history CSV path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one partition")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--split", choices=PARTITIONS, default="test")
    e.add_argument("--report", required=True, help="metrics JSON path")
    e.add_argument("--cm", required=True, help="confusion matrix CSV path")
    e.add_argument("--size", type=int, default=None, help="assert the checkpoint input size")
    e.add_argument("--variant", choices=variants, default=None, help="assert the checkpoint variant")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="train and test all 9 (variant, size) cells")
    c.add_argument("--data", required=True)
    c.add_argument("--seed", type=int, default=defaults.seed)
    c.add_argument("--iters", type=int, default=defaults.max_iterations)
    c.add_argument("--out", required=True, help="Markdown report path")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (BtcnnError, CliError, OSError, ValueError, KeyError) as exc:
        print(f"btcnn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
