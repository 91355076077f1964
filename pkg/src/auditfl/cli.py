"""Command-line harness: run experiments, audit ledgers, sweep adversary counts.

Verbs:
  run           train once, publish the ledger, write per-round metrics
  audit         fully audit a ledger file; exit 0 iff it verifies
  sweep         scheme vs FedAvg baseline across malicious-participant counts
  verify-chain  hash-chain integrity only
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from . import config as cfgmod
from .auditor import full_audit
from .config import ConfigError, DatasetConfig, RunConfig
from .ledger import Ledger, LedgerError
from .protocol import run_training
from .training import (
    AdversarySpec,
    Architecture,
    Dataset,
    evaluate,
    load_idx,
    make_synthetic_corpus,
)

SYNTH_CORPUS_SEED = 7  # corpus identity is part of the experiment definition

_IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def prepare_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Resolve the configured data source to (train, test) datasets."""
    ds = cfg.dataset
    root = Path(ds.data_dir)
    paths = {k: root / v for k, v in _IDX_NAMES.items()}
    if ds.kind == "synthetic":
        if not all(p.exists() for p in paths.values()):
            make_synthetic_corpus(
                root,
                SYNTH_CORPUS_SEED,
                n_train=ds.n_train,
                n_test=ds.n_test,
                side=ds.side,
                n_classes=ds.n_classes,
            )
    else:
        missing = [str(p) for p in paths.values() if not p.exists()]
        if missing:
            raise ConfigError(
                f"IDX dataset files not found: {missing}; point data_dir at "
                f"an MNIST-layout directory or use a synthetic dataset"
            )
    train = load_idx(paths["train_images"], paths["train_labels"], ds.n_classes)
    test = load_idx(paths["test_images"], paths["test_labels"], ds.n_classes)
    return train, test


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "train_loss", "test_accuracy", "benign_count"])
        for row in rows:
            w.writerow(
                [
                    row["round"],
                    f"{row['train_loss']:.9f}",
                    row["test_accuracy"],
                    row["benign_count"],
                ]
            )


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = cfgmod.from_file(args.config)
    else:
        cfg = RunConfig()
    overrides = {}
    for name in ("participants", "rounds", "eta", "batch_size", "scale",
                 "master_seed", "clip_factor", "metrics_every", "hidden"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "clipping", None):
        overrides["clipping"] = True
    if getattr(args, "malicious", None):
        overrides["malicious"] = cfgmod.parse_malicious(args.malicious)
    if getattr(args, "data_dir", None) or getattr(args, "dataset_kind", None):
        base = cfg.dataset
        overrides["dataset"] = DatasetConfig(
            kind=args.dataset_kind or base.kind,
            data_dir=args.data_dir or base.data_dir,
            n_train=base.n_train,
            n_test=base.n_test,
            side=base.side,
            n_classes=base.n_classes,
        )
    return cfgmod.with_overrides(cfg, **overrides)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--participants", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--eta", help="dyadic learning rate, e.g. 0.5 or 3/8")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--scale", type=int, help="fixed-point scale t")
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--hidden", type=int, help="hidden width (0 = logistic regression)")
    p.add_argument(
        "--malicious",
        action="append",
        help="id:kind[:factor], e.g. 5:label_flip or 7:scale_amplify:10; repeatable",
    )
    p.add_argument("--clip", dest="clipping", action="store_true",
                   help="enable inner-product clipping of amplified gradients")
    p.add_argument("--clip-factor", dest="clip_factor", type=int)
    p.add_argument("--metrics-every", dest="metrics_every", type=int,
                   help="evaluate test accuracy every N rounds (0 = final only)")
    p.add_argument("--dataset-kind", dest="dataset_kind", choices=["idx", "synthetic"])
    p.add_argument("--data-dir", dest="data_dir")


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = prepare_datasets(cfg)
    ledger_path = out / "ledger.bin"
    if ledger_path.exists():
        print(f"error: {ledger_path} already exists", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    result = run_training(cfg, train, test, ledger_path=ledger_path, publish=True)
    elapsed = time.perf_counter() - t0
    write_metrics_csv(out / "metrics.csv", result.metrics)

    arch = Architecture(train.n_features, train.n_classes, cfg.hidden)
    acc, loss = evaluate(arch, result.w_final, test)
    print(f"run complete in {elapsed:.1f}s: {cfg.rounds} rounds, "
          f"{cfg.participants} participants, dim {arch.param_count}")
    print(f"final test accuracy {acc:.4f}, test loss {loss:.4f}")
    print(f"ledger: {ledger_path}")
    print(f"metrics: {out / 'metrics.csv'}")
    r = cfg.rounds
    n = cfg.participants
    t = result.timing
    print("-- informational cost analogues (hardware dependent) --")
    print(f"  participant mask+sign per round:  {t['sign_mask_s'] / r / n * 1e3:.3f} ms")
    print(f"  server verify+aggregate per round: {t['server_verify_s'] / r * 1e3:.3f} ms")
    print(f"  one mask-vector generation:        {t['prvg_s'] * 1e3:.3f} ms")
    print(f"  preprocessing bytes (genesis):     {t['preprocess_bytes']}")
    print(f"  record bytes per round:            {t['record_bytes'] // max(r, 1)}")

    if args.with_baseline:
        base = run_training(cfg, train, test, detection=False, publish=False)
        write_metrics_csv(out / "baseline_metrics.csv", base.metrics)
        bacc, _ = evaluate(arch, base.w_final, test)
        print(f"FedAvg baseline final test accuracy {bacc:.4f}")
        print(f"baseline metrics: {out / 'baseline_metrics.csv'}")
    return 0


def cmd_audit(args) -> int:
    path = Path(args.ledger)
    if not path.exists():
        print(f"error: {path} does not exist", file=sys.stderr)
        return 2
    report = full_audit(path)
    report_path = path.with_suffix(path.suffix + ".audit.json")
    report_path.write_text(report.to_json())
    if report.ok:
        print(f"ACCEPT: ledger verifies ({report.n_records} training record(s), "
              f"{len(report.rounds)} audited rounds)")
        print(f"report: {report_path}")
        return 0
    print(f"REJECT at stage [{report.failure_stage}]: {report.failure}")
    print(f"report: {report_path}")
    return 1


def cmd_verify_chain(args) -> int:
    try:
        chain = Ledger.open(args.ledger)
    except LedgerError as e:
        print(f"REJECT: {e}")
        return 1
    ok, bad = chain.verify_chain()
    if ok:
        print(f"ACCEPT: chain of {len(chain)} blocks verifies")
        return 0
    print(f"REJECT: first bad height {bad}")
    return 1


def _sweep_one(cfg_dict: dict, count: int, publish: bool, out_dir: str):
    """One sweep entry: scheme and baseline accuracy at `count` flippers."""
    cfg = cfgmod.from_dict(cfg_dict)
    cfg = cfgmod.with_overrides(
        cfg,
        malicious={i: AdversarySpec("label_flip") for i in range(1, count + 1)},
    )
    train, test = prepare_datasets(cfg)
    arch = Architecture(train.n_features, train.n_classes, cfg.hidden)
    ledger_path = None
    if publish:
        ledger_path = Path(out_dir) / f"ledger_m{count}.bin"
        if ledger_path.exists():
            ledger_path.unlink()
    scheme = run_training(cfg, train, test, ledger_path=ledger_path, publish=publish)
    scheme_acc, _ = evaluate(arch, scheme.w_final, test)
    base = run_training(cfg, train, test, detection=False, publish=False)
    base_acc, _ = evaluate(arch, base.w_final, test)
    return count, scheme_acc, base_acc


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    counts = list(range(args.min_malicious, args.max_malicious + 1))
    if not counts:
        print("error: empty sweep range", file=sys.stderr)
        return 2
    if max(counts) > cfg.participants:
        print("error: malicious count exceeds participant count", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfgmod.to_dict(cfg)
    rows = []
    entries = [(cfg_dict, m, args.publish, str(out)) for m in counts]
    if args.parallel and len(entries) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [pool.submit(_sweep_one, *e) for e in entries]
            for m, fut in zip(counts, futures):
                try:
                    rows.append(fut.result())
                except Exception as e:
                    print(f"sweep entry {m} failed: {e}", file=sys.stderr)
                    rows.append((m, "error", "error"))
    else:
        for entry in entries:
            m = entry[1]
            try:
                rows.append(_sweep_one(*entry))
            except Exception as e:
                print(f"sweep entry {m} failed: {e}", file=sys.stderr)
                rows.append((m, "error", "error"))
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["malicious_count", "scheme_accuracy", "fedavg_accuracy"])
        for m, a, b in rows:
            fa = a if isinstance(a, str) else f"{a:.6f}"
            fb = b if isinstance(b, str) else f"{b:.6f}"
            w.writerow([m, fa, fb])
    print(f"sweep complete: {csv_path}")
    for m, a, b in rows:
        fa = a if isinstance(a, str) else f"{a:.4f}"
        fb = b if isinstance(b, str) else f"{b:.4f}"
        print(f"  {m:2d} malicious: scheme {fa}  fedavg {fb}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auditfl",
        description="Publicly auditable, robust federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train, publish, and write metrics")
    _add_config_flags(p_run)
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--with-baseline", action="store_true",
                       help="also run the FedAvg baseline for comparison")
    p_run.set_defaults(func=cmd_run)

    p_audit = sub.add_parser("audit", help="audit a ledger file")
    p_audit.add_argument("ledger")
    p_audit.set_defaults(func=cmd_audit)

    p_vc = sub.add_parser("verify-chain", help="check ledger hash-chain integrity")
    p_vc.add_argument("ledger")
    p_vc.set_defaults(func=cmd_verify_chain)

    p_sweep = sub.add_parser(
        "sweep", help="scheme vs FedAvg across malicious-participant counts"
    )
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--min-malicious", type=int, default=0)
    p_sweep.add_argument("--max-malicious", type=int, default=9)
    p_sweep.add_argument("--out", default="sweep_out")
    p_sweep.add_argument("--publish", action="store_true",
                         help="also publish a ledger per sweep entry")
    p_sweep.add_argument("--parallel", type=int, default=0,
                         help="run up to N sweep entries concurrently")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LedgerError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
