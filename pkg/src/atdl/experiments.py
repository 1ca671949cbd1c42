"""Experiment harness: dataset resolution, grid search, method runners and result tables.

Every method sees the same splits (derived from the config's split seed)
and every grid point trains with the same per-fold seed, so the methods and
the grid points differ only in what is being compared.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines
from .data import (Dataset, SplitPlan, load_cifar10, load_container, load_csv, load_idx, preprocess,
                   select_classes, split_indices, subsample)
from .errors import ArgumentError, AtdlError
from .metrics import METRIC_NAMES, Confusion, confusion, format_metric, report
from .numerics import Rng, derive_seed
from .transfer import compute_relations, finetune_target

SOURCE_METHODS = ("atdl", "agrawal", "oquab")


# -- datasets ---------------------------------------------------------------------------------------


def load_dataset(ref, seed=0):
    """Load and preprocess the dataset a config reference points at."""
    for p in ref.paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    if ref.format == "idx":
        d = load_idx(*ref.paths)
    elif ref.format == "cifar10":
        d = load_cifar10(ref.paths)
    elif ref.format == "container":
        if len(ref.paths) != 1:
            raise ArgumentError("container datasets take exactly one path")
        d = load_container(ref.paths[0])
    else:
        d = load_csv(ref.paths[0], ref.label_column, ref.height, ref.width, ref.channels)
    if ref.classes is not None:
        d = select_classes(d, ref.classes)
    if ref.subsample is not None:
        d = subsample(d, ref.subsample, derive_seed(seed, 77))
    return preprocess(d, ref.grayscale, ref.resize)


def composition_subgroups(labels, n_classes, count, size, concentration=None, seed=0):
    """Index sets for ``count`` source subgroups of ``size`` rows each.

    With ``concentration=None`` rows are drawn uniformly with replacement.
    Otherwise each subgroup first draws class proportions from a symmetric
    Dirichlet with that concentration, then draws its rows class by class
    (with replacement). Small concentrations give strongly skewed groups.
    """
    labels = np.asarray(labels, dtype=np.int64)
    pools = [np.flatnonzero(labels == c) for c in range(n_classes)]
    groups = []
    for a in range(count):
        rng = Rng(derive_seed(seed, a))
        if concentration is None:
            idx = np.minimum((rng.uniform(size) * labels.size).astype(np.int64), labels.size - 1)
        else:
            weights = rng.dirichlet(concentration, n_classes)
            weights[[len(p) == 0 for p in pools]] = 0.0
            weights /= weights.sum()
            cls = np.minimum(np.searchsorted(np.cumsum(weights), rng.uniform(size), side="right"), n_classes - 1)
            picks = rng.uniform(size)
            idx = np.empty(size, dtype=np.int64)
            for c in range(n_classes):
                sel = cls == c
                if np.any(sel):
                    pool = pools[c]
                    idx[sel] = pool[np.minimum((picks[sel] * pool.size).astype(np.int64), pool.size - 1)]
        groups.append(np.sort(idx))
    return groups


# -- grid --------------------------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class GridPoint:
    learning_rate: float
    minibatch: int
    momentum: float

    def label(self):
        return f"lr={self.learning_rate:g} mu={self.momentum:g} batch={self.minibatch}"


def grid_points(grid):
    """All combinations, ordered by (learning rate, minibatch, momentum)."""
    return sorted(GridPoint(lr, mb, mu) for lr in grid.learning_rates for mu in grid.momenta
                  for mb in grid.minibatches)


def select_best(scores):
    """Highest mean score; ties go to the smaller learning rate, then the smaller minibatch."""
    if not scores:
        raise ArgumentError("no grid point produced a score")
    return min(scores, key=lambda p: (-scores[p], p.learning_rate, p.minibatch, p.momentum))


def train_config(grid, point, seed):
    from .network import TrainConfig

    return TrainConfig(lambda0=point.learning_rate, mu_final=point.momentum, minibatch=point.minibatch,
                       epochs=grid.epochs, seed=seed, lr_decay=grid.lr_decay)


# -- method runners ----------------------------------------------------------------------------------


@dataclass
class MethodContext:
    """Everything a method needs besides the training split itself."""

    cfg: object
    n_labels: int
    label_names: list
    source: object = None  # SourceModel for transfer-based methods
    source_x: np.ndarray | None = None  # unlabelled source inputs for ssl
    _stacks: dict | None = None

    def stack_for(self, method, key, x):
        """Pretrained stacks depend only on the training rows; cache them per fold."""
        if self._stacks is None:
            self._stacks = {}
        k = (method, key)
        if k not in self._stacks:
            c = self.cfg
            pcfg = c.pretrain.train_config(derive_seed(c.seed, 11))
            if method == "non_transfer":
                self._stacks[k] = baselines.pretrain_target_stack(x, c.hidden_dims, c.corruption, pcfg)
            else:
                xs = self.source_x if self.source_x is not None else np.zeros((0, x.shape[1]))
                self._stacks[k] = baselines.pretrain_mixed_stack(xs, x, c.hidden_dims, c.corruption, pcfg)
        return self._stacks[k]


def fit_method(method, ctx, x, y, tcfg, stack_key=None):
    """Train ``method`` on ``(x, y)`` with fine-tuning settings ``tcfg``; return a predictor model."""
    c = ctx.cfg
    if method in SOURCE_METHODS and ctx.source is None:
        raise ArgumentError(f"method {method} needs a source model")
    if method == "atdl":
        t = c.transfer
        rel = compute_relations(ctx.source, x, y, t.epsilon, ctx.n_labels, t.diagonal, ctx.label_names)
        model = finetune_target(ctx.source, rel, x, y, tcfg, t.recompute_relations_after, t.covariance_stage)
        model.literal_sigma = t.literal_sigma
        return model
    kw = dict(cfg=tcfg, n_labels=ctx.n_labels, label_names=ctx.label_names)
    if method == "non_transfer":
        stack = ctx.stack_for(method, stack_key, x) if stack_key is not None else None
        return baselines.non_transfer(x, y, c.hidden_dims, c.corruption, pretrain_cfg=c.pretrain.train_config(
            derive_seed(c.seed, 11)), stack=stack, **kw)
    if method == "ssl":
        stack = ctx.stack_for(method, stack_key, x) if stack_key is not None else None
        xs = ctx.source_x if ctx.source_x is not None else np.zeros((0, x.shape[1]))
        return baselines.ssl(xs, x, y, c.hidden_dims, c.corruption, pretrain_cfg=c.pretrain.train_config(
            derive_seed(c.seed, 11)), stack=stack, **kw)
    if method == "agrawal":
        return baselines.agrawal(ctx.source, x, y, **kw)
    if method == "oquab":
        return baselines.oquab(ctx.source, x, y, c.oquab_adapt_dim, **kw)
    if method == "pca_logistic":
        return baselines.pca_logistic(x, y, c.pca_energy, **kw)
    raise ArgumentError(f"unknown method {method!r}")


def predict(model, x):
    """Predicted labels for the rows of ``x`` (target or baseline model)."""
    return model.predict(x)


# -- records and tables ------------------------------------------------------------------------------


@dataclass
class FoldRecord:
    method: str
    point: GridPoint | None
    fold: int
    confusion: Confusion | None
    error: str | None = None
    exception: Exception | None = None

    @property
    def accuracy(self):
        return None if self.confusion is None else report(self.confusion)["acc"]


@dataclass
class MethodResult:
    method: str
    records: list
    best: GridPoint | None
    confusion: Confusion | None  # pooled over evaluation folds at the selected point
    selection_score: float | None
    model: object = None
    error: str | None = None
    exception: Exception | None = None


def _evaluate(model, x, y, positive_label, n_labels):
    return confusion(predict(model, x), y, positive_label, None if positive_label is not None else n_labels)


def pool_confusions(items):
    items = [c for c in items if c is not None]
    if not items:
        return None
    if items[0].binary:
        return Confusion(tp=sum(c.tp for c in items), fp=sum(c.fp for c in items),
                         fn=sum(c.fn for c in items), tn=sum(c.tn for c in items))
    return Confusion(matrix=sum(c.matrix for c in items))


@dataclass
class Splits:
    """Train/test folds over one target dataset (plus an optional separate test set)."""

    target: Dataset
    folds: list  # list of (train_idx, test_idx)
    test: Dataset | None = None

    def fold(self, k):
        tr, te = self.folds[k]
        train = self.target.subset(tr)
        test = self.test if self.test is not None else self.target.subset(te)
        return train, test

    def fingerprint(self):
        from .sda import config_hash

        return config_hash([[tr.tolist(), te.tolist()] for tr, te in self.folds])


def make_splits(target, plan, test=None):
    return Splits(target, split_indices(target.labels, target.n_labels, plan), test)


def _validation_split(labels, n_labels, fraction, seed):
    return split_indices(labels, n_labels, SplitPlan("holdout", test_fraction=fraction, seed=seed))[0]


def run_method(method, ctx, splits, threads=1):
    """Grid search for one method and the pooled report at its selected grid point.

    ``cv`` selection scores each grid point by its mean accuracy over the
    evaluation folds. ``holdout`` selection scores grid points on a
    stratified validation slice of the (single) training fold, then refits
    the chosen point on the whole training fold and tests once.
    """
    c = ctx.cfg
    points = grid_points(c.grid)
    positive = c.positive_label
    if positive is None and ctx.n_labels == 2:
        positive = 1

    def job(args):
        point, k, x_tr, y_tr, x_te, y_te, key = args
        try:
            tcfg = train_config(c.grid, point, derive_seed(c.seed, 101, k))
            model = fit_method(method, ctx, x_tr, y_tr, tcfg, key)
            return FoldRecord(method, point, k, _evaluate(model, x_te, y_te, positive, ctx.n_labels)), model
        except AtdlError as exc:
            return FoldRecord(method, point, k, None, f"{type(exc).__name__}: {exc}", exc), None

    jobs = []
    if c.grid.selection == "cv":
        for k in range(len(splits.folds)):
            train, test = splits.fold(k)
            xtr, xte = train.features(), test.features()
            for p in points:
                jobs.append((p, k, xtr, train.labels, xte, test.labels, ("fold", k)))
    else:
        train, _ = splits.fold(0)
        vtr, vte = _validation_split(train.labels, ctx.n_labels, c.grid.validation_fraction,
                                     derive_seed(c.split.seed, 55))
        xall = train.features()
        for p in points:
            jobs.append((p, -1, xall[vtr], train.labels[vtr], xall[vte], train.labels[vte], ("validation", 0)))
    if method in ("non_transfer", "ssl"):
        for key in sorted({j[-1] for j in jobs}):  # pretrain each distinct stack once, before fanning out
            j = next(j for j in jobs if j[-1] == key)
            ctx.stack_for(method, key, j[2])
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(job, jobs))
    else:
        outcomes = [job(j) for j in jobs]
    records = [r for r, _ in outcomes]
    models = {(r.point, r.fold): m for r, m in outcomes}

    scores = {}
    for p in points:
        accs = [r.accuracy for r in records if r.point == p]
        if accs and all(a is not None for a in accs):
            scores[p] = float(np.mean(accs))
    if not scores:
        errs = sorted({r.error for r in records if r.error})
        res = MethodResult(method, records, None, None, None, error="; ".join(errs) or "no result")
        res.exception = next((r.exception for r in records if r.exception is not None), None)
        return res
    best = select_best(scores)

    if c.grid.selection == "cv":
        pooled = pool_confusions([r.confusion for r in records if r.point == best])
        return MethodResult(method, records, best, pooled, scores[best], models.get((best, 0)))
    train, test = splits.fold(0)
    point_record, model = job((best, 0, train.features(), train.labels, test.features(), test.labels,
                               ("fold", 0)))
    records.append(point_record)
    return MethodResult(method, records, best, point_record.confusion, scores[best], model, point_record.error)


def provenance_lines(cfg, splits=None):
    lines = [f"# config_hash={cfg.config_hash}", f"# seed={cfg.seed}", f"# version={__version__}"]
    if splits is not None:
        lines.append(f"# split_hash={splits.fingerprint()}")
    return lines


def _metric_cells(conf):
    vals = report(conf) if conf is not None else dict.fromkeys(METRIC_NAMES)
    return [format_metric(vals[k]) for k in METRIC_NAMES]


def records_tsv(results, cfg, splits=None):
    header = ["method", "learning_rate", "momentum", "minibatch", "fold", "n"] + list(METRIC_NAMES) + ["error"]
    rows = []
    for res in results:
        for r in sorted(res.records, key=lambda r: (r.point, r.fold)):
            n = "" if r.confusion is None else str(r.confusion.total)
            rows.append([res.method, f"{r.point.learning_rate:g}", f"{r.point.momentum:g}", str(r.point.minibatch),
                         "validation" if r.fold < 0 else str(r.fold), n] + _metric_cells(r.confusion)
                        + [r.error or ""])
    return "\n".join(provenance_lines(cfg, splits) + ["\t".join(header)] + ["\t".join(r) for r in rows]) + "\n"


def summary_rows(results):
    rows = []
    for res in results:
        b = res.best
        sel = "" if res.selection_score is None else format_metric(res.selection_score)
        rows.append([res.method, "" if b is None else f"{b.learning_rate:g}", "" if b is None else f"{b.momentum:g}",
                     "" if b is None else str(b.minibatch), sel] + _metric_cells(res.confusion) + [res.error or ""])
    return rows


SUMMARY_HEADER = ["method", "learning_rate", "momentum", "minibatch", "selection_acc"] + list(METRIC_NAMES) + [
    "error"]


def summary_tsv(results, cfg, splits=None):
    rows = summary_rows(results)
    return "\n".join(provenance_lines(cfg, splits) + ["\t".join(SUMMARY_HEADER)] + ["\t".join(r) for r in rows]) + "\n"


def aligned_table(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in rows]) + "\n"


def summary_text(results, cfg, splits=None):
    return "\n".join(provenance_lines(cfg, splits)) + "\n" + aligned_table(SUMMARY_HEADER, summary_rows(results))


def mean_or_nan(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else math.nan
