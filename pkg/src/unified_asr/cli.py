"""Command-line entry point: ``uasr <verb> ...``.

Exit status: 0 success, 1 unexpected library error, 2 bad configuration,
3 bad input data or checkpoint, 4 numerical failure, 5 file I/O failure.
``UASR_VERBOSITY`` (debug/info/warning/error) overrides the log level; it
is the only environment setting that is read.
"""

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import corpus
from .config import RunConfig, describe
from .errors import DataIOError, UasrError

log = logging.getLogger("unified_asr")


def _setup_logging(args):
    level = logging.WARNING - 10 * args.verbose + 10 * args.quiet
    env = os.environ.get("UASR_VERBOSITY")
    if env:
        level = getattr(logging, env.upper(), None)
        if not isinstance(level, int):
            level = int(env) if env.isdigit() else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load_config(args):
    cfg = RunConfig.load(getattr(args, "config", None), getattr(args, "set", None) or [])
    if getattr(args, "workers", None):
        cfg.set("run.workers", args.workers)
    return cfg


def _write(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def cmd_gen_data(args):
    cfg = _load_config(args)
    out = Path(args.out_dir)
    cfg.echo(out)
    try:
        paths = corpus.generate_dataset(cfg.sim_config(), out)
    except OSError as exc:
        raise DataIOError(f"cannot write dataset under {out}: {exc}") from exc
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return 0


def _manifest(data_dir, name, required=True):
    p = Path(data_dir) / f"{name}.tsv"
    if not p.exists():
        if required:
            raise DataIOError(f"manifest not found: {p}")
        return []
    return list(corpus.read_manifest(p))


def cmd_train(args):
    from .features import compute_gmv_stats
    from .signal_sim import strip_auxiliary
    from .trainer import train

    cfg = _load_config(args)
    for key, attr in (("model.mode", "mode"), ("training.learning_rate", "lr"), ("training.epochs", "epochs"),
                      ("training.seed", "seed")):
        if getattr(args, attr) is not None:
            cfg.set(key, getattr(args, attr))
    cfg.validate()
    mcfg = cfg.model_config()
    tcfg = cfg.training_config()
    sc = _manifest(args.data_dir, "train_sc", required=False)
    mc = _manifest(args.data_dir, "train_mc", required=False)
    stats = compute_gmv_stats(sc + mc)
    if mcfg.mode == "sc_only":
        sc, mc = sc + [strip_auxiliary(u) for u in mc], []
    elif mcfg.mode == "mc_only":
        sc = []
    if mcfg.mode in ("sc_only", "mc_only"):
        tcfg.derive_sc_from_mc = False
    out = Path(args.out_dir)
    cfg.echo(out)
    t0 = time.perf_counter()
    model, _ = train(mcfg, tcfg, sc, mc, out_dir=out, stats=stats,
                     progress=lambda e, l: log.info("epoch %d loss %.4f", e, l))
    print(f"checkpoint\t{out / 'model.ckpt'}")
    print(f"partitions\t{','.join(sorted(model.params.present_partitions()))}")
    log.info("trained in %.1f s", time.perf_counter() - t0)
    return 0


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .evaluation import MetricsTable, evaluate, normalize_to_baseline

    model = load_checkpoint(args.checkpoint)
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise DataIOError(f"manifest not found: {manifest}")
    rows = evaluate(model, corpus.read_manifest(manifest), args.path, experiment_id=args.experiment_id)
    table = MetricsTable(rows)
    if args.baseline_table:
        try:
            base = MetricsTable.from_tsv(Path(args.baseline_table).read_text())
        except OSError as exc:
            raise DataIOError(f"cannot read baseline table {args.baseline_table}: {exc}") from exc
        bid = args.baseline_id or base.baseline_id or base.experiments()[0]
        base_rows = [r for r in base.rows if r.experiment_id == bid]
        table = normalize_to_baseline(MetricsTable(base_rows + [r for r in rows if r.experiment_id != bid]), bid)
    out = Path(args.out_dir)
    if args.config or args.set:
        _load_config(args).echo(out)
    else:
        _write(out / "resolved_config.txt",
               f"# eval\ncheckpoint = {args.checkpoint}\nmanifest = {args.manifest}\npath = {args.path}\n")
    _write(out / "metrics.tsv", table.to_tsv())
    _write(out / "metrics.json", json.dumps(table.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
    sys.stdout.write(table.to_tsv())
    return 0


def cmd_gradcheck(args):
    from .gradcheck import format_report, run_gradcheck

    t0 = time.perf_counter()
    results = run_gradcheck(args.ops or None, num_coords=args.coords, seed=args.seed)
    print(format_report(results))
    print(f"runtime {time.perf_counter() - t0:.1f} s")
    return 0 if all(r.passed for r in results) else 1


def cmd_suite(args):
    from .evaluation import run_experiment_suite

    cfg = _load_config(args)
    out = Path(args.out_dir)
    cfg.echo(out)
    t0 = time.perf_counter()
    summary = run_experiment_suite(cfg.suite_config(), out, data_dir=args.data_dir,
                                   progress=lambda j: log.info("finished %s seed %d", *j))
    print(json.dumps(summary["comparisons"], indent=2, sort_keys=True, default=str))
    print(f"suite finished in {time.perf_counter() - t0:.0f} s; report in {out}")
    return 0


def cmd_inspect(args):
    from .model import PARTITIONS, ModelConfig, param_count

    if args.checkpoint:
        from .checkpoint import load_checkpoint

        model = load_checkpoint(args.checkpoint)
        config = model.config
        counts = {p: sum(model.params[n].size for n in model.params.names(p)) for p in PARTITIONS}
    else:
        config = ModelConfig.full_scale(mode="unified") if args.full_scale else _load_config(args).model_config()
        counts = param_count(config)
    print(f"mode\t{config.mode}")
    for p in PARTITIONS:
        print(f"{p}\t{counts.get(p, 0)}")
    print(f"total\t{sum(counts.values())}")
    print(f"sc_flstm_output\t{config.sc_flstm.output_len}")
    print(f"mc_flstm_output\t{config.mc_flstm.output_len}")
    if args.list_keys:
        print(describe())
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="uasr", description="Unified SC/MC acoustic model toolkit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="count", default=0)
    p.add_argument("--workers", type=int, default=None, help="bound on worker processes")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="run config file (section.key = value)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    g = sub.add_parser("gen-data", help="synthesise train/test corpora")
    with_config(g)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    with_config(t)
    t.add_argument("--data-dir", required=True, help="directory with train_sc.tsv / train_mc.tsv")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--mode", choices=["unified", "sc_only", "mc_only", "zero_pad"])
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="SNR-binned frame error rates")
    with_config(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--path", choices=["sc", "mc", "auto"], default="auto")
    e.add_argument("--experiment-id", default="eval")
    e.add_argument("--baseline-table", help="metrics.tsv to normalise against")
    e.add_argument("--baseline-id", help="experiment id of the baseline rows")
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every trainable op")
    gc.add_argument("--ops", nargs="*")
    gc.add_argument("--coords", type=int, default=200)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("suite", help="train and evaluate the E1-E6 experiment set")
    with_config(s)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--data-dir", help="existing dataset (default: generate under out-dir/data)")
    s.set_defaults(func=cmd_suite)

    i = sub.add_parser("inspect", help="parameter counts per partition")
    with_config(i)
    i.add_argument("--checkpoint")
    i.add_argument("--full-scale", action="store_true")
    i.add_argument("--list-keys", action="store_true", help="also list every config key")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        return args.func(args)
    except UasrError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
