"""All-layer transfer through relation vectors.

A source network's output layer is kept. Each target label is represented
by the mean source-output response of its samples (its relation vector),
every layer is fine-tuned to pull samples onto their label's relation
vector, and new inputs are assigned to the label at the smallest
Mahalanobis distance.
"""
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingClassError, ShapeError, SingularCovarianceError
from .network import LossKind, Network, TrainConfig, train
from .numerics import as_matrix, covariance, pearson, pearson_pvalue

RELATIVE_EPSILON = 1e-3


def _net_of(model):
    return model if isinstance(model, Network) else model.net


@dataclass
class RelationSet:
    relations: np.ndarray  # (n_labels, source_dim)
    covariances: np.ndarray  # (n_labels, source_dim, source_dim), unregularized
    counts: np.ndarray
    epsilons: np.ndarray  # per-label ridge added before inversion
    label_names: list = field(default_factory=list)
    diagonal: bool = False
    epsilon_rule: float | None = None  # None: relative default; float: fixed value

    def __post_init__(self):
        self.relations = np.atleast_2d(np.asarray(self.relations, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.epsilons = np.broadcast_to(np.asarray(self.epsilons, dtype=np.float64),
                                        (self.relations.shape[0],)).copy()
        n, d = self.relations.shape
        if self.covariances.shape != (n, d, d):
            raise ShapeError(f"covariances shape {self.covariances.shape} != {(n, d, d)}")
        if self.counts.shape != (n,):
            raise ShapeError("one count per label required")
        if not self.label_names:
            self.label_names = [str(i) for i in range(n)]

    @property
    def n_labels(self):
        return self.relations.shape[0]

    @property
    def dim(self):
        return self.relations.shape[1]

    def regularized(self, label):
        cov = self.covariances[label]
        if self.diagonal:
            cov = np.diag(np.diag(cov))
        return cov + self.epsilons[label] * np.eye(self.dim)

    def pooled_covariance(self):
        w = self.counts / self.counts.sum()
        return np.tensordot(w, self.covariances, axes=1)

    def pooled_epsilon(self):
        return float(np.dot(self.counts, self.epsilons) / self.counts.sum())


@dataclass
class TargetModel:
    net: Network
    relation_set: RelationSet
    source_provenance: str = ""
    trace: list = field(default_factory=list)
    literal_sigma: bool = False

    def distances(self, x):
        return mahalanobis_distances(self.relation_set, self.net.predict(as_matrix(x, "x")), self.literal_sigma)

    def predict(self, x):
        return np.argmin(self.distances(x), axis=1)


def default_epsilon(cov):
    return RELATIVE_EPSILON * float(np.mean(np.diag(cov)))


def compute_relations(source, x_target, labels, epsilon=None, n_labels=None, diagonal=False, label_names=None):
    """Relation vectors and class covariances of the source outputs.

    ``epsilon=None`` regularizes each label with ``1e-3`` times the mean
    diagonal of its own covariance.
    """
    net = _net_of(source)
    x = as_matrix(x_target, "x_target")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ShapeError("one label per target row required")
    if n_labels is None:
        n_labels = int(labels.max()) + 1 if labels.size else 0
    outputs = net.predict(x)
    d = outputs.shape[1]
    rel = np.zeros((n_labels, d))
    covs = np.zeros((n_labels, d, d))
    counts = np.zeros(n_labels, dtype=np.int64)
    eps = np.zeros(n_labels)
    for l in range(n_labels):
        rows = outputs[labels == l]
        if rows.shape[0] == 0:
            name = label_names[l] if label_names else l
            raise MissingClassError(name)
        counts[l] = rows.shape[0]
        rel[l] = rows.mean(axis=0)
        covs[l] = covariance(rows, rel[l])
        eps[l] = default_epsilon(covs[l]) if epsilon is None else float(epsilon)
    return RelationSet(rel, covs, counts, eps, list(label_names or []), diagonal, epsilon)


def variance_cost(net, x_target, labels, rel):
    """Mean squared distance of each output to its label's relation vector."""
    out = _net_of(net).predict(as_matrix(x_target, "x_target"))
    diff = out - rel.relations[np.asarray(labels, dtype=np.int64)]
    return float(np.sum(diff * diff) / out.shape[0])


def _precision(matrix, label):
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        scale = float(np.mean(np.abs(np.diag(matrix)))) or 1.0
        raise SingularCovarianceError(label, suggested_epsilon=RELATIVE_EPSILON * scale) from None
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def mahalanobis_distances(rel, outputs, literal_sigma=False):
    """Distance of every output row to every relation vector, shape (rows, labels).

    By default the quadratic form uses the inverse of the regularized class
    covariance. ``literal_sigma=True`` uses the regularized covariance itself.
    """
    outputs = as_matrix(outputs, "outputs")
    if outputs.shape[1] != rel.dim:
        raise ShapeError(f"outputs have {outputs.shape[1]} columns, relation vectors {rel.dim}")
    dist = np.empty((outputs.shape[0], rel.n_labels))
    for l in range(rel.n_labels):
        m = rel.regularized(l)
        form = m if literal_sigma else _precision(m, rel.label_names[l])
        diff = outputs - rel.relations[l]
        dist[:, l] = np.sum((diff @ form) * diff, axis=1)
    return dist


def classify(model, x, literal_sigma=None):
    """Label of ``x`` (one input vector) and its distance to every label.

    Ties resolve to the lowest label index.
    """
    if literal_sigma is None:
        literal_sigma = model.literal_sigma
    f = model.net.predict(np.asarray(x, dtype=np.float64))
    dist = mahalanobis_distances(model.relation_set, f, literal_sigma)[0]
    return int(np.argmin(dist)), dist


def refit_covariances(net, x_target, labels, rel):
    """Class covariances of ``net``'s outputs around the (fixed) relation vectors of ``rel``."""
    out = _net_of(net).predict(as_matrix(x_target, "x_target"))
    labels = np.asarray(labels, dtype=np.int64)
    covs = np.zeros_like(rel.covariances)
    eps = np.zeros(rel.n_labels)
    for l in range(rel.n_labels):
        rows = out[labels == l]
        if rows.shape[0] == 0:
            raise MissingClassError(rel.label_names[l])
        covs[l] = covariance(rows, rel.relations[l])
        eps[l] = default_epsilon(covs[l]) if rel.epsilon_rule is None else rel.epsilon_rule
    return RelationSet(rel.relations.copy(), covs, rel.counts.copy(), eps, list(rel.label_names),
                       rel.diagonal, rel.epsilon_rule)


def finetune_target(source, rel, x_target, labels, cfg=TrainConfig(), recompute_relations_after=False,
                    covariance_stage="after"):
    """Fine-tune every layer so each sample's output approaches its relation vector.

    Relation vectors stay fixed during training and are the class centres used
    for classification. ``covariance_stage="after"`` re-estimates each class
    covariance from the tuned outputs around those fixed centres;
    ``"before"`` keeps the covariances measured on the untuned source network.
    ``recompute_relations_after`` re-estimates the centres as well.
    """
    if covariance_stage not in ("before", "after"):
        raise ValueError("covariance_stage must be 'before' or 'after'")
    net = _net_of(source)
    if net.output_activation != "linear":
        raise ShapeError("relation-vector transfer needs a source with a linear output layer")
    if net.output_dim != rel.dim:
        raise ShapeError("relation vectors do not live in this network's output space")
    labels = np.asarray(labels, dtype=np.int64)
    targets = rel.relations[labels]
    tuned, trace = train(net, x_target, targets, LossKind.VARIANCE_TO_TARGETS, cfg)
    if recompute_relations_after:
        final_rel = compute_relations(tuned, x_target, labels, rel.epsilon_rule, rel.n_labels,
                                      rel.diagonal, rel.label_names)
    elif covariance_stage == "after":
        final_rel = refit_covariances(tuned, x_target, labels, rel)
    else:
        final_rel = rel
    provenance = "" if isinstance(source, Network) else source.provenance.get("config", "")
    return TargetModel(tuned, final_rel, provenance, trace)


def separation(rel, epsilon=None):
    """Smallest pairwise Mahalanobis distance between relation vectors.

    Uses the count-weighted pooled class covariance plus ``epsilon`` (by
    default the count-weighted mean of the per-label ridges).
    """
    if rel.n_labels < 2:
        raise ShapeError("separation needs at least two target labels")
    pooled = rel.pooled_covariance()
    if rel.diagonal:
        pooled = np.diag(np.diag(pooled))
    eps = rel.pooled_epsilon() if epsilon is None else float(epsilon)
    prec = _precision(pooled + eps * np.eye(rel.dim), "pooled")
    best = math.inf
    for a, b in itertools.combinations(range(rel.n_labels), 2):
        diff = rel.relations[a] - rel.relations[b]
        best = min(best, float(diff @ prec @ diff))
    return max(best, 0.0)


@dataclass
class ScreenEntry:
    source_id: str
    separation: float | None
    performance: float | None = None
    rank: int | None = None
    error: str | None = None

    def record(self):
        return {"source_id": self.source_id, "d_m": self.separation, "t": self.performance,
                "rank": self.rank, "error": self.error}


@dataclass
class ScreenReport:
    entries: list
    correlation: float | None = None
    p_value: float | None = None

    def to_jsonl(self):
        lines = [json.dumps(e.record(), sort_keys=True) for e in self.entries]
        if self.correlation is not None:
            lines.append(json.dumps({"correlation": self.correlation, "p_value": self.p_value,
                                     "n": sum(e.separation is not None and e.performance is not None
                                              for e in self.entries)}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        entries, corr, p = [], None, None
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "correlation" in rec:
                corr, p = rec["correlation"], rec["p_value"]
            else:
                entries.append(ScreenEntry(rec["source_id"], rec["d_m"], rec["t"], rec["rank"], rec["error"]))
        return cls(entries, corr, p)


def _screen_one(candidate, x, labels, epsilon, n_labels):
    sid = candidate.source_id
    try:
        rel = compute_relations(candidate, x, labels, epsilon, n_labels)
        return ScreenEntry(sid, separation(rel))
    except Exception as exc:  # recorded, never fatal
        return ScreenEntry(sid, None, error=f"{type(exc).__name__}: {exc}")


def rank_entries(entries, performances=None):
    """Sort by separation (descending, then id), assign ranks, attach correlation."""
    ok = sorted((e for e in entries if e.separation is not None), key=lambda e: (-e.separation, e.source_id))
    bad = sorted((e for e in entries if e.separation is None), key=lambda e: e.source_id)
    for i, e in enumerate(ok, start=1):
        e.rank = i
    if performances is not None:
        for e in ok + bad:
            if e.source_id in performances:
                e.performance = float(performances[e.source_id])
    report = ScreenReport(ok + bad)
    paired = [(e.separation, e.performance) for e in ok if e.performance is not None]
    if len(paired) >= 2:
        d, t = np.array(paired).T
        report.correlation = pearson(d, t)
        report.p_value = pearson_pvalue(report.correlation, len(paired))
    return report


def screen_sources(candidates, x_target, labels, epsilon=None, performances=None, n_labels=None, threads=1):
    """Rank candidate source models by relation-vector separation on the target data.

    ``performances`` maps source id to a downstream score; when given, the
    Pearson correlation between separation and score is attached.
    """
    if not candidates:
        raise ValueError("at least one candidate is required")
    x = as_matrix(x_target, "x_target")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            entries = list(pool.map(lambda c: _screen_one(c, x, labels, epsilon, n_labels), candidates))
    else:
        entries = [_screen_one(c, x, labels, epsilon, n_labels) for c in candidates]
    return rank_entries(entries, performances)
