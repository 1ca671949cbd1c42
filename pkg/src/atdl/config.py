"""Experiment configuration files.

Grammar: INI-style sections of ``key = value`` lines (``#`` or ``;`` start a
comment). Lists are comma separated; image sizes are written ``HxW``.
Relative paths resolve against the config file's directory. The only
environment override is ``ATDL_OUT``, which replaces ``experiment.output_dir``.

Sections and keys (defaults in brackets)::

    [experiment]  name [experiment], seed [0], methods [atdl], output_dir [runs],
                  threads [1], positive_label [1 for binary targets, else none],
                  float32_models [false]
    [source]      dataset reference (see below)
    [target]      dataset reference
    [test]        optional dataset reference replacing every fold's test part
    [network]     hidden_dims [100], corruption [masking], corruption_rate [0.3],
                  tied [false]
    [pretrain]    learning_rate [0.01], momentum [0.99], minibatch [10], epochs [10],
                  lr_decay [exponential]
    [source_finetune]  same keys as [pretrain]
    [split]       kind [kfold], folds [2], per_class_counts, seed [0], test_fraction [0.1]
    [grid]        learning_rates [0.001,0.005,0.01,0.05], momenta [0.7,0.99],
                  minibatches [10,100], epochs [10], lr_decay [exponential],
                  selection [cv | holdout], validation_fraction [0.1]
    [transfer]    epsilon [auto], literal_sigma [false], diagonal [false],
                  covariance_stage [after], recompute_relations_after [false]
    [baselines]   oquab_adapt_dim [last hidden width], pca_energy [0.995]
    [subgroups]   count [0], size [5000], concentration [none], seed [experiment seed]
    [screen]      learning_rate, momentum, minibatch, epochs [first grid values]

Dataset reference keys: ``format`` (idx | cifar10 | container | csv),
``paths`` (idx: images, labels), ``classes`` (keep and relabel these),
``subsample`` (row count), ``grayscale``, ``resize`` (HxW), ``label_column``
(csv), ``height``/``width``/``channels`` (csv).
"""
import configparser
import hashlib
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import SplitPlan
from .errors import ConfigError
from .network import TrainConfig
from .sda import CorruptionSpec

METHODS = ("atdl", "non_transfer", "ssl", "agrawal", "oquab", "pca_logistic")
DATA_FORMATS = ("idx", "cifar10", "container", "csv")
OUTPUT_ENV = "ATDL_OUT"


@dataclass(frozen=True)
class DataRef:
    format: str
    paths: tuple
    classes: tuple | None = None
    subsample: int | None = None
    grayscale: bool = False
    resize: tuple | None = None
    label_column: str = "label"
    height: int | None = None
    width: int | None = None
    channels: int = 1


@dataclass(frozen=True)
class OptimizerSettings:
    learning_rate: float = 0.01
    momentum: float = 0.99
    minibatch: int = 10
    epochs: int = 10
    lr_decay: str = "exponential"

    def train_config(self, seed):
        return TrainConfig(lambda0=self.learning_rate, mu_final=self.momentum, minibatch=self.minibatch,
                           epochs=self.epochs, seed=seed, lr_decay=self.lr_decay)


@dataclass(frozen=True)
class GridSettings:
    learning_rates: tuple = (1e-3, 5e-3, 1e-2, 5e-2)
    momenta: tuple = (0.7, 0.99)
    minibatches: tuple = (10, 100)
    epochs: int = 10
    lr_decay: str = "exponential"
    selection: str = "cv"
    validation_fraction: float = 0.1


@dataclass(frozen=True)
class TransferSettings:
    epsilon: float | None = None
    literal_sigma: bool = False
    diagonal: bool = False
    covariance_stage: str = "after"
    recompute_relations_after: bool = False


@dataclass(frozen=True)
class SubgroupSettings:
    count: int = 0
    size: int = 5000
    concentration: float | None = None
    seed: int | None = None


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    methods: tuple = ("atdl",)
    output_dir: Path = Path("runs")
    threads: int = 1
    positive_label: int | None = None
    float32_models: bool = False
    source: DataRef | None = None
    target: DataRef | None = None
    test: DataRef | None = None
    hidden_dims: tuple = (100,)
    corruption: CorruptionSpec = CorruptionSpec()
    tied: bool = False
    pretrain: OptimizerSettings = OptimizerSettings()
    source_finetune: OptimizerSettings = OptimizerSettings()
    split: SplitPlan = field(default_factory=SplitPlan)
    grid: GridSettings = GridSettings()
    transfer: TransferSettings = TransferSettings()
    oquab_adapt_dim: int | None = None
    pca_energy: float = 0.995
    subgroups: SubgroupSettings = SubgroupSettings()
    screen: OptimizerSettings | None = None
    text: str = ""  # the raw file contents, hashed for provenance

    @property
    def config_hash(self):
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    def screen_settings(self):
        if self.screen is not None:
            return self.screen
        g = self.grid
        return OptimizerSettings(g.learning_rates[0], g.momenta[0], g.minibatches[0], g.epochs, g.lr_decay)

    def summary(self):
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(self).items() if k != "text"}


# -- value parsing -------------------------------------------------------------------------------


def _fail(section, key, msg):
    raise ConfigError(f"[{section}] {key}: {msg}")


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        _fail(section, key, f"cannot parse {raw!r} ({exc})")


def _bool(raw):
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _list(conv):
    return lambda raw: tuple(conv(p.strip()) for p in raw.split(",") if p.strip())


def _size(raw):
    h, _, w = raw.lower().partition("x")
    return int(h), int(w)


def _optional_float(raw):
    return None if raw.lower() in ("auto", "none", "") else float(raw)


def _positive(section, key, values):
    for v in values if isinstance(values, tuple) else (values,):
        if v <= 0:
            _fail(section, key, f"must be positive, got {v}")
    return values


def _data_ref(cp, section, base):
    if not cp.has_section(section):
        return None
    fmt = _get(cp, section, "format", str, None)
    if fmt not in DATA_FORMATS:
        _fail(section, "format", f"must be one of {', '.join(DATA_FORMATS)}")
    paths = _get(cp, section, "paths", _list(str), ())
    if not paths:
        _fail(section, "paths", "at least one path is required")
    paths = tuple(str(p if Path(p).is_absolute() else (base / p)) for p in paths)
    if fmt == "idx" and len(paths) != 2:
        _fail(section, "paths", "idx needs an images path and a labels path")
    return DataRef(fmt, paths,
                   classes=_get(cp, section, "classes", _list(int), None),
                   subsample=_get(cp, section, "subsample", int, None),
                   grayscale=_get(cp, section, "grayscale", _bool, False),
                   resize=_get(cp, section, "resize", _size, None),
                   label_column=_get(cp, section, "label_column", str, "label"),
                   height=_get(cp, section, "height", int, None),
                   width=_get(cp, section, "width", int, None),
                   channels=_get(cp, section, "channels", int, 1))


def _optimizer(cp, section, default):
    if not cp.has_section(section):
        return default
    s = OptimizerSettings(
        learning_rate=_get(cp, section, "learning_rate", float, default.learning_rate),
        momentum=_get(cp, section, "momentum", float, default.momentum),
        minibatch=_get(cp, section, "minibatch", int, default.minibatch),
        epochs=_get(cp, section, "epochs", int, default.epochs),
        lr_decay=_get(cp, section, "lr_decay", str, default.lr_decay))
    _positive(section, "learning_rate", s.learning_rate)
    _positive(section, "minibatch", s.minibatch)
    if not 0 <= s.momentum < 1:
        _fail(section, "momentum", "must lie in [0, 1)")
    if s.epochs < 0:
        _fail(section, "epochs", "must be >= 0")
    return s


def parse_config(text, base_dir=".", env=None):
    """Parse config text; ``env`` (default ``os.environ``) supplies ``ATDL_OUT``."""
    env = os.environ if env is None else env
    base = Path(base_dir)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = {"experiment", "source", "target", "test", "network", "pretrain", "source_finetune", "split",
             "grid", "transfer", "baselines", "subgroups", "screen"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    e = "experiment"
    cfg = ExperimentConfig(text=text)
    cfg.name = _get(cp, e, "name", str, cfg.name)
    cfg.seed = _get(cp, e, "seed", int, 0)
    cfg.methods = _get(cp, e, "methods", _list(str), cfg.methods)
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        _fail(e, "methods", f"unknown method(s) {', '.join(bad)}")
    out = _get(cp, e, "output_dir", str, "runs")
    out = env.get(OUTPUT_ENV) or out
    cfg.output_dir = Path(out) if Path(out).is_absolute() else base / out
    cfg.threads = _positive(e, "threads", _get(cp, e, "threads", int, 1))
    cfg.positive_label = _get(cp, e, "positive_label", lambda r: None if r.lower() == "none" else int(r), None)
    cfg.float32_models = _get(cp, e, "float32_models", _bool, False)

    cfg.source = _data_ref(cp, "source", base)
    cfg.target = _data_ref(cp, "target", base)
    cfg.test = _data_ref(cp, "test", base)

    n = "network"
    cfg.hidden_dims = _positive(n, "hidden_dims", _get(cp, n, "hidden_dims", _list(int), cfg.hidden_dims))
    try:
        cfg.corruption = CorruptionSpec(_get(cp, n, "corruption", str, "masking"),
                                        _get(cp, n, "corruption_rate", float, 0.3))
    except ValueError as exc:
        _fail(n, "corruption", str(exc))
    cfg.tied = _get(cp, n, "tied", _bool, False)

    cfg.pretrain = _optimizer(cp, "pretrain", cfg.pretrain)
    cfg.source_finetune = _optimizer(cp, "source_finetune", cfg.source_finetune)

    s = "split"
    try:
        cfg.split = SplitPlan(kind=_get(cp, s, "kind", str, "kfold"), folds=_get(cp, s, "folds", int, 2),
                              per_class_counts=_get(cp, s, "per_class_counts", _list(int), None),
                              seed=_get(cp, s, "seed", int, cfg.seed),
                              test_fraction=_get(cp, s, "test_fraction", float, 0.1))
    except ValueError as exc:
        _fail(s, "kind", str(exc))

    g = "grid"
    grid = GridSettings(
        learning_rates=_positive(g, "learning_rates", _get(cp, g, "learning_rates", _list(float),
                                                           GridSettings.learning_rates)),
        momenta=_get(cp, g, "momenta", _list(float), GridSettings.momenta),
        minibatches=_positive(g, "minibatches", _get(cp, g, "minibatches", _list(int), GridSettings.minibatches)),
        epochs=_get(cp, g, "epochs", int, GridSettings.epochs),
        lr_decay=_get(cp, g, "lr_decay", str, "exponential"),
        selection=_get(cp, g, "selection", str, "cv"),
        validation_fraction=_get(cp, g, "validation_fraction", float, 0.1))
    if not grid.learning_rates or not grid.momenta or not grid.minibatches:
        _fail(g, "learning_rates", "grid axes must be nonempty")
    if any(not 0 < m < 1 for m in grid.momenta):
        _fail(g, "momenta", "values must lie in (0, 1)")
    if grid.selection not in ("cv", "holdout"):
        _fail(g, "selection", "must be cv or holdout")
    if grid.selection == "cv" and cfg.split.kind != "kfold":
        _fail(g, "selection", "cv selection needs a kfold split; use holdout")
    if not 0 < grid.validation_fraction < 1:
        _fail(g, "validation_fraction", "must lie in (0, 1)")
    cfg.grid = grid

    t = "transfer"
    cfg.transfer = TransferSettings(
        epsilon=_get(cp, t, "epsilon", _optional_float, None),
        literal_sigma=_get(cp, t, "literal_sigma", _bool, False),
        diagonal=_get(cp, t, "diagonal", _bool, False),
        covariance_stage=_get(cp, t, "covariance_stage", str, "after"),
        recompute_relations_after=_get(cp, t, "recompute_relations_after", _bool, False))
    if cfg.transfer.epsilon is not None and cfg.transfer.epsilon < 0:
        _fail(t, "epsilon", "must be >= 0")
    if cfg.transfer.covariance_stage not in ("before", "after"):
        _fail(t, "covariance_stage", "must be before or after")

    b = "baselines"
    cfg.oquab_adapt_dim = _get(cp, b, "oquab_adapt_dim", int, None)
    if cfg.oquab_adapt_dim is not None and cfg.oquab_adapt_dim < 1:
        _fail(b, "oquab_adapt_dim", "must be >= 1")
    cfg.pca_energy = _get(cp, b, "pca_energy", float, 0.995)
    if not 0 < cfg.pca_energy <= 1:
        _fail(b, "pca_energy", "must lie in (0, 1]")

    sg = "subgroups"
    cfg.subgroups = SubgroupSettings(count=_get(cp, sg, "count", int, 0), size=_get(cp, sg, "size", int, 5000),
                                     concentration=_get(cp, sg, "concentration", _optional_float, None),
                                     seed=_get(cp, sg, "seed", int, None))
    if cfg.subgroups.concentration is not None and cfg.subgroups.concentration <= 0:
        _fail(sg, "concentration", "must be positive")

    if cp.has_section("screen"):
        cfg.screen = _optimizer(cp, "screen", cfg.screen_settings())
    return cfg


def load_config(path, env=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent, env)
