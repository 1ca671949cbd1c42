"""Command-line interface: ``atdl <command> [options]``.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 numeric failure (divergence, singular covariance).
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, modelio
from .config import load_config
from .data import load_cifar10, load_csv, load_idx, preprocess, save_container
from .errors import ArgumentError, AtdlError, ConfigError
from .experiments import (MethodContext, aligned_table, composition_subgroups, fit_method, load_dataset,
                          make_splits, predict, provenance_lines, records_tsv, run_method, summary_text,
                          summary_tsv)
from .metrics import METRIC_NAMES, confusion, format_metric, report
from .numerics import derive_seed
from .sda import build_source_model
from .transfer import ScreenEntry, rank_entries, screen_sources

log = logging.getLogger("atdl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# -- helpers -------------------------------------------------------------------------------------------


def _config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = Path(args.out)
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    changes = {}
    if getattr(args, "epsilon", None) is not None:
        changes["epsilon"] = args.epsilon
    if getattr(args, "literal_sigma", False):
        changes["literal_sigma"] = True
    if changes:
        cfg.transfer = dataclasses.replace(cfg.transfer, **changes)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _require(ref, section):
    if ref is None:
        raise ConfigError(f"config has no [{section}] section")
    return ref


def _write(path, text):
    Path(path).write_text(text)
    log.info("wrote %s", path)


def _target_splits(cfg):
    target = load_dataset(_require(cfg.target, "target"), cfg.seed)
    test = load_dataset(cfg.test, cfg.seed) if cfg.test is not None else None
    return make_splits(target, cfg.split, test)


def _load_source(path):
    if path is None:
        return None
    return modelio.unpack_source(modelio.load(path))


def _trace_tsv(model, cfg):
    lines = provenance_lines(cfg) + ["stage\tlayer\tepoch\tloss"]
    for i, trace in enumerate(model.traces.get("pretrain", [])):
        lines += [f"pretrain\t{i}\t{e}\t{v!r}" for e, v in enumerate(trace, start=1)]
    lines += [f"finetune\t\t{e}\t{v!r}" for e, v in enumerate(model.traces.get("finetune", []), start=1)]
    return "\n".join(lines) + "\n"


# -- commands -------------------------------------------------------------------------------------------


def cmd_pretrain(args):
    cfg = _config(args)
    src = load_dataset(_require(cfg.source, "source"), cfg.seed)
    x, n = src.features(), src.n_labels
    pre = cfg.pretrain.train_config(derive_seed(cfg.seed, 1))
    fin = cfg.source_finetune.train_config(derive_seed(cfg.seed, 2))
    sg = cfg.subgroups
    if sg.count > 0:
        cand_dir = cfg.output_dir / "candidates"
        cand_dir.mkdir(exist_ok=True)
        groups = composition_subgroups(src.labels, n, sg.count, sg.size, sg.concentration,
                                       cfg.seed if sg.seed is None else sg.seed)
        width = len(str(sg.count - 1))
        for a, idx in enumerate(groups):
            sid = f"sub_{a:0{width}d}"
            model = build_source_model(x[idx], src.labels[idx], n, cfg.hidden_dims, cfg.corruption,
                                       pre.with_(seed=derive_seed(pre.seed, a)),
                                       fin.with_(seed=derive_seed(fin.seed, a)), "linear", src.label_names, sid)
            modelio.save_model(model, cand_dir / f"{sid}{modelio.SUFFIX}", cfg.float32_models)
            log.info("candidate %s: final source loss %.6g", sid, model.traces["finetune"][-1]
                     if model.traces["finetune"] else float("nan"))
        print(f"wrote {sg.count} candidate models to {cand_dir}")
        return EXIT_OK
    model = build_source_model(x, src.labels, n, cfg.hidden_dims, cfg.corruption, pre, fin, "linear",
                               src.label_names, cfg.name)
    path = cfg.output_dir / f"source{modelio.SUFFIX}"
    modelio.save_model(model, path, cfg.float32_models)
    _write(cfg.output_dir / "pretrain_log.tsv", _trace_tsv(model, cfg))
    print(f"source model: {path} layers {model.net.dims}")
    return EXIT_OK


def _run_methods(cfg, methods, source_path, prefix):
    splits = _target_splits(cfg)
    target = splits.target
    source = _load_source(source_path)
    source_x = None
    if "ssl" in methods:
        source_x = load_dataset(_require(cfg.source, "source"), cfg.seed).features()
    ctx = MethodContext(cfg, target.n_labels, list(target.label_names), source, source_x)
    results = []
    for method in methods:
        log.info("running %s (split hash %s)", method, splits.fingerprint())
        try:
            res = run_method(method, ctx, splits, cfg.threads)
        except AtdlError as exc:
            if len(methods) == 1:
                raise
            from .experiments import MethodResult

            res = MethodResult(method, [], None, None, None, error=f"{type(exc).__name__}: {exc}")
        results.append(res)
        if res.model is not None:
            meta = {"selected": None if res.best is None else dataclasses.asdict(res.best),
                    "config_hash": cfg.config_hash, "seed": cfg.seed}
            modelio.save_model(res.model, cfg.output_dir / f"{method}{modelio.SUFFIX}", cfg.float32_models, meta)
    _write(cfg.output_dir / f"{prefix}_results.tsv", records_tsv(results, cfg, splits))
    _write(cfg.output_dir / f"{prefix}_summary.tsv", summary_tsv(results, cfg, splits))
    text = summary_text(results, cfg, splits)
    _write(cfg.output_dir / f"{prefix}_summary.txt", text)
    print(text, end="")
    return results


def cmd_transfer(args):
    cfg = _config(args)
    if not args.source:
        raise ArgumentError("transfer needs --source MODEL")
    results = _run_methods(cfg, ["atdl"], args.source, "transfer")
    res = results[0]
    if res.confusion is None:
        if res.exception is not None:
            raise res.exception
        raise ArgumentError(f"transfer failed: {res.error}")
    return EXIT_OK


def cmd_baselines(args):
    cfg = _config(args)
    methods = [m for m in cfg.methods if m != "atdl"]
    if args.methods:
        methods = args.methods.split(",")
    if not methods:
        raise ConfigError("no baseline methods requested")
    _run_methods(cfg, methods, args.source, "baselines")
    return EXIT_OK


def _read_candidates(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ArgumentError(f"candidate directory not found: {directory}")
    paths = sorted(directory.glob(f"*{modelio.SUFFIX}"))
    if not paths:
        raise ArgumentError(f"no {modelio.SUFFIX} candidate models in {directory}")
    models, failures = [], []
    for p in paths:
        try:
            m = modelio.unpack_source(modelio.load(p))
            m.provenance["id"] = p.stem
            models.append(m)
        except (AtdlError, OSError) as exc:
            failures.append(ScreenEntry(p.stem, None, error=f"{type(exc).__name__}: {exc}"))
    return models, failures


def cmd_screen(args):
    cfg = _config(args)
    if not args.candidates:
        raise ArgumentError("screen needs --candidates DIR")
    models, failures = _read_candidates(args.candidates)
    splits = _target_splits(cfg)
    train, test = splits.fold(0)
    x, y = train.features(), train.labels
    eps = cfg.transfer.epsilon
    performances = None
    if args.with_performance:
        settings = cfg.screen_settings()
        ctx = MethodContext(cfg, train.n_labels, list(train.label_names))
        performances = {}
        for m in models:
            ctx.source = m
            try:
                model = fit_method("atdl", ctx, x, y, settings.train_config(derive_seed(cfg.seed, 101, 0)))
                performances[m.source_id] = float(np.mean(predict(model, test.features()) == test.labels))
            except AtdlError as exc:
                log.warning("candidate %s failed to fine-tune: %s", m.source_id, exc)
    rep = screen_sources(models, x, y, eps, None, train.n_labels, cfg.threads) if models else None
    entries = (rep.entries if rep else []) + failures
    rep = rank_entries(entries, performances)
    _write(cfg.output_dir / "screen.jsonl", rep.to_jsonl())
    rows = [[str(e.rank or ""), e.source_id, "" if e.separation is None else f"{e.separation:.6g}",
             format_metric(e.performance), e.error or ""] for e in rep.entries]
    text = "\n".join(provenance_lines(cfg, splits)) + "\n" + aligned_table(
        ["rank", "source", "d_m", "t", "error"], rows)
    if rep.correlation is not None:
        text += f"R = {rep.correlation:.4f}  p = {rep.p_value:.4g}\n"
    _write(cfg.output_dir / "screen.txt", text)
    print(text, end="")
    return EXIT_OK


def _parse_size(raw):
    try:
        h, w = raw.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ArgumentError(f"size must look like HxW, got {raw!r}") from None


def cmd_convert(args):
    kind, inputs = args.kind, args.inputs
    if kind == "idx":
        if len(inputs) != 2:
            raise ArgumentError("idx conversion needs IMAGES LABELS")
        d = load_idx(*inputs)
    elif kind == "cifar10":
        d = load_cifar10(inputs)
    elif kind == "csv":
        if len(inputs) != 1:
            raise ArgumentError("csv conversion takes one file")
        col = args.label_column
        if args.no_header:
            col = int(col) if col.lstrip("-").isdigit() else -1
        d = load_csv(inputs[0], col, args.height, args.width, args.channels, has_header=not args.no_header)
    else:
        raise ArgumentError(f"unsupported conversion kind {kind!r}")
    d = preprocess(d, args.grayscale, _parse_size(args.resize) if args.resize else None)
    if not args.out:
        raise ArgumentError("convert needs --out FILE")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_container(d, out)
    print(f"wrote {len(d)} rows x {d.n_features} features ({d.channels}x{d.height}x{d.width}) to {out}")
    return EXIT_OK


def cmd_eval(args):
    if not args.model:
        raise ArgumentError("eval needs --model PATH")
    model = modelio.load_model(args.model)
    if args.data:
        from .data import load_container

        test = load_container(args.data)
        cfg = None
    else:
        cfg = _config(args)
        _, test = _target_splits(cfg).fold(0)
    if not hasattr(model, "relation_set") and not hasattr(model, "pca_dims"):
        raise ArgumentError("eval needs a target or baseline model, not a source model")
    pred = predict(model, test.features())
    n_labels = max(int(test.labels.max()) + 1 if len(test) else 0, int(pred.max()) + 1 if pred.size else 0)
    positive = args.positive_label
    if positive is None and n_labels <= 2:
        positive = 1
    vals = report(confusion(pred, test.labels, positive, None if positive is not None else n_labels))
    text = aligned_table(list(METRIC_NAMES), [[format_metric(vals[k]) for k in METRIC_NAMES]])
    if cfg is not None:
        text = "\n".join(provenance_lines(cfg)) + "\n" + text
        _write(cfg.output_dir / "eval.txt", text)
    print(text, end="")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="atdl", description="Relation-vector transfer learning experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, epsilon=False):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--seed", type=int, help="override the experiment seed")
        sp.add_argument("--out", help="output directory (overrides config and ATDL_OUT)")
        sp.add_argument("--threads", type=int, help="worker threads for grid points / candidates")
        if epsilon:
            sp.add_argument("--epsilon", type=float, help="fixed covariance ridge (default: relative)")
            sp.add_argument("--literal-sigma", action="store_true",
                            help="multiply by the covariance instead of its inverse when classifying")

    sp = sub.add_parser("pretrain", help="train a source model (or a set of subgroup candidates)")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("transfer", help="relation-vector transfer with grid search")
    common(sp, epsilon=True)
    sp.add_argument("--source", help="source model file")
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("baselines", help="run comparison methods on the same splits")
    common(sp)
    sp.add_argument("--source", help="source model file (needed by agrawal and oquab)")
    sp.add_argument("--methods", help="comma-separated subset of methods to run")
    sp.set_defaults(func=cmd_baselines)

    sp = sub.add_parser("screen", help="rank candidate source models by relation-vector separation")
    common(sp, epsilon=True)
    sp.add_argument("--candidates", help="directory of candidate source model files")
    sp.add_argument("--with-performance", action="store_true",
                    help="also fine-tune each candidate and correlate separation with test accuracy")
    sp.set_defaults(func=cmd_screen)

    sp = sub.add_parser("convert", help="convert a dataset into the binary container")
    sp.add_argument("kind", help="idx, cifar10 or csv")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", help="output container file")
    sp.add_argument("--grayscale", action="store_true")
    sp.add_argument("--resize", help="HxW")
    sp.add_argument("--label-column", default="label", help="csv label column name (or index with --no-header)")
    sp.add_argument("--no-header", action="store_true", help="csv has no header row")
    sp.add_argument("--height", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--channels", type=int, default=1)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("eval", help="evaluate a saved target or baseline model")
    common(sp, epsilon=False)
    sp.add_argument("--model", help="model file")
    sp.add_argument("--data", help="container file to evaluate on (instead of the config's test split)")
    sp.add_argument("--positive-label", type=int)
    sp.set_defaults(func=cmd_eval)
    return p


def _exit_code(exc):
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return EXIT_DATA
    return getattr(exc, "exit_code", 1)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2 already
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (AtdlError, OSError) as exc:
        print(f"atdl {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
