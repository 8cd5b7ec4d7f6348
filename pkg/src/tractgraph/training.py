"""Training loop, stratified cross-validation, metrics, and fold comparison.

Subjects are trained one at a time on a fresh tape with gradients averaged
over the mini-batch; per-fold seeds derive from the master seed plus the
fold index, so a run is reproducible whether folds execute sequentially or
in worker processes. Normalization is fitted inside each fold on its
training split alone.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Adam, Tape
from .errors import ConfigError, InputError, TrainingError
from .features import apply_minmax, fit_minmax
from .model import NeighborPlan, init_params, model_forward, normalized_fusion_weights

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")

# Two-sided 5% point of the t distribution with 4 degrees of freedom,
# frozen from t_critical(4) (Simpson quadrature + bisection).
T_CRITICAL_DF4 = 2.7764451051977987


def cross_entropy_value(logits, label):
    """Plain-number -log softmax(logits)[label] via log-sum-exp."""
    v = np.asarray(logits, dtype=np.float64)
    m = float(v.max())
    z = float(np.exp(v - m).sum())
    return m + math.log(z) - float(v[label])


def make_folds(labels, n_folds=5, seed=0):
    """Stratified fold indices: seeded shuffle within class, then round-robin.

    The fold pointer continues across classes, which keeps overall fold
    sizes within one of each other as well as the per-class counts.
    """
    labels = list(labels)
    n = len(labels)
    if n_folds < 2:
        raise ConfigError(f"need at least 2 folds, got {n_folds}")
    if n < n_folds:
        raise ConfigError(f"cannot split {n} subjects into {n_folds} folds")
    classes = sorted(set(labels))
    if classes != [0, 1]:
        raise InputError(f"expected both labels 0 and 1 to be present, got classes {classes}")
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=np.int64)
    pointer = 0
    for cls in classes:
        members = np.flatnonzero(np.asarray(labels) == cls)
        rng.shuffle(members)
        for i in members:
            fold[i] = pointer % n_folds
            pointer += 1
    return fold


@dataclass
class TrainSettings:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


def train_fold(subjects, plan, config, settings):
    """Train on one fold's subjects; returns (params, epoch loss history)."""
    if not subjects:
        raise InputError("cannot train on an empty subject list")
    params = init_params(config)
    opt = Adam(params, lr=settings.learning_rate)
    rng = np.random.default_rng(config.seed)
    n = len(subjects)
    history = []
    for epoch in range(settings.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, settings.batch_size):
            batch = order[start:start + settings.batch_size]
            opt.zero_grad()
            for pos in batch:
                subject = subjects[pos]
                tape = Tape()
                logits, _ = model_forward(tape, subject.features, params, plan, config)
                loss = tape.cross_entropy_logits(logits, subject.label)
                value = float(loss.values)
                if not math.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch + 1}, batch {start // settings.batch_size + 1}, "
                        f"subject {subject.subject_id}")
                tape.backward(loss, seed=1.0 / len(batch))
                epoch_loss += value
            opt.step()
        history.append(epoch_loss / n)
    return params, history


# --- metrics -----------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def macro_metrics(labels, predictions):
    """Accuracy plus precision/recall/F1 averaged over the two classes.

    A class never predicted has precision 0 (and F1 0 when the pair is 0/0);
    this keeps every value defined and inside [0,1].
    """
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape or labels.size == 0:
        raise InputError("labels and predictions must be equal-length and non-empty")
    accuracy = float(np.mean(labels == predictions))
    precisions, recalls, f1s = [], [], []
    for cls in (0, 1):
        tp = int(np.sum((predictions == cls) & (labels == cls)))
        fp = int(np.sum((predictions == cls) & (labels != cls)))
        fn = int(np.sum((predictions != cls) & (labels == cls)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2.0 * p * r / (p + r) if p + r else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return Metrics(accuracy, float(np.mean(precisions)), float(np.mean(recalls)), float(np.mean(f1s)))


@dataclass
class SubjectEval:
    subject_id: str
    label: int
    prediction: int
    correct: bool
    attention: np.ndarray | None


def evaluate(params, config, plan, subjects):
    """Argmax predictions, macro metrics, and per-subject attention capture."""
    if not subjects:
        raise InputError("cannot evaluate on an empty subject list")
    evals = []
    for subject in subjects:
        tape = Tape()
        logits, scores = model_forward(tape, subject.features, params, plan, config)
        if not np.all(np.isfinite(logits.values)):
            raise TrainingError(f"non-finite logits for subject {subject.subject_id}")
        pred = int(np.argmax(logits.values))
        evals.append(SubjectEval(
            subject_id=subject.subject_id,
            label=subject.label,
            prediction=pred,
            correct=pred == subject.label,
            attention=None if scores is None else scores.values.reshape(-1).copy(),
        ))
    metrics = macro_metrics([e.label for e in evals], [e.prediction for e in evals])
    return metrics, evals


# --- paired comparison -------------------------------------------------------


def _t_pdf(x, df):
    c = math.gamma((df + 1) / 2.0) / (math.sqrt(df * math.pi) * math.gamma(df / 2.0))
    return c * (1.0 + x * x / df) ** (-(df + 1) / 2.0)


def _t_cdf(x, df, panels=2000):
    # Simpson's rule over [0, x]; the density is symmetric around 0.
    if x == 0.0:
        return 0.5
    h = x / panels
    acc = _t_pdf(0.0, df) + _t_pdf(x, df)
    for i in range(1, panels):
        acc += (4.0 if i % 2 else 2.0) * _t_pdf(i * h, df)
    return 0.5 + acc * h / 3.0


def t_critical(df, alpha=0.05):
    """Two-sided critical value by bisection on the integrated density."""
    if df < 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {df}")
    target = 1.0 - alpha / 2.0
    lo, hi = 0.0, 200.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _t_cdf(mid, df) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class PairedTResult:
    t: float | None
    significant: bool
    unbounded: bool
    df: int
    critical: float
    mean_diff: float

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "significant": self.significant,
            "unbounded": self.unbounded,
            "df": self.df,
            "critical": self.critical,
            "mean_diff": self.mean_diff,
        }


def paired_t(a, b, alpha=0.05):
    """Paired t-test on matched fold values; two-sided at the given level.

    A zero-variance difference vector is judged directly: all-zero means no
    effect (t = 0), anything else is a constant shift reported significant
    with the statistic flagged unbounded rather than inventing a number.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise InputError(f"paired_t needs two equal-length vectors of >= 2 values, got {a.shape} and {b.shape}")
    d = a - b
    n = d.size
    df = n - 1
    critical = T_CRITICAL_DF4 if df == 4 and alpha == 0.05 else t_critical(df, alpha)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return PairedTResult(0.0, False, False, df, critical, mean)
        return PairedTResult(None, True, True, df, critical, mean)
    t = mean / (sd / math.sqrt(n))
    return PairedTResult(t, abs(t) > critical, False, df, critical, mean)


# --- cross-validation driver -------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    metrics: Metrics
    loss_history: list[float]
    subjects: list[SubjectEval]
    fusion_raw: tuple[float, float] | None
    fusion_normalized: tuple[float, float] | None
    params: dict
    norm: object


@dataclass
class CVResult:
    folds: list[FoldResult]
    summary: dict
    n_folds: int
    master_seed: int


def summarize_metrics(folds):
    """Per-metric fold values with mean and population standard deviation."""
    out = {}
    for name in METRIC_NAMES:
        values = [getattr(f.metrics, name) for f in folds]
        out[name] = {
            "per_fold": values,
            "mean": float(np.mean(values)),
            "sd": float(np.std(values)),
        }
    return out


def _run_fold(job):
    fold_id, train_subjects, test_subjects, graph, config, settings = job
    norm = fit_minmax(train_subjects)
    train_n = [apply_minmax(s, norm) for s in train_subjects]
    test_n = [apply_minmax(s, norm) for s in test_subjects]
    plan = None
    if "graph" in config.streams and config.baseline is None:
        plan = NeighborPlan(graph)
    params, history = train_fold(train_n, plan, config, settings)
    metrics, evals = evaluate(params, config, plan, test_n)
    raw = None
    if "fuse.w1" in params:
        raw = (float(params["fuse.w1"].values), float(params["fuse.w2"].values))
    return FoldResult(
        fold=fold_id,
        metrics=metrics,
        loss_history=history,
        subjects=evals,
        fusion_raw=raw,
        fusion_normalized=normalized_fusion_weights(params),
        params=params,
        norm=norm,
    )


def run_cv(subjects, graph, config, settings, n_folds=5, master_seed=0, workers=1):
    """Stratified cross-validation over the cohort; deterministic in the seed."""
    folds = make_folds([s.label for s in subjects], n_folds, master_seed)
    jobs = []
    for f in range(n_folds):
        train = [s for s, a in zip(subjects, folds) if a != f]
        test = [s for s, a in zip(subjects, folds) if a == f]
        jobs.append((f, train, test, graph, replace(config, seed=master_seed + f), settings))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]
    return CVResult(results, summarize_metrics(results), n_folds, master_seed)
