"""Agreement metrics between model and clinician scores.

Integer-valued inputs (the normal case: item scores and totals) go through
exact rational arithmetic, so identities such as the shift invariance of the
consistency ICC hold exactly rather than to rounding. Float inputs use numpy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .catalog import ITEMS, MadrsItem
from .errors import (
    ConstantTruth,
    LengthMismatch,
    MissingCell,
    MissingGroundTruth,
    ZeroBetweenTargetVariance,
)

ITEM_THRESHOLD = 3
TOTAL_THRESHOLD = 20
ITEM_MAX = 6
TOTAL_MAX = 60
TOTAL = "total"

# Inter-rater ICCs between human raters reported by Iannuzzo et al. (2006),
# printed next to model ICCs for comparison.
HUMAN_REFERENCE_ICC: dict[str, float] = {
    TOTAL: 0.98,
    MadrsItem.APPARENT_SADNESS.value: 0.92,
    MadrsItem.REPORTED_SADNESS.value: 0.94,
    MadrsItem.INNER_TENSION.value: 0.92,
    MadrsItem.REDUCED_SLEEP.value: 0.86,
    MadrsItem.REDUCED_APPETITE.value: 0.94,
    MadrsItem.CONCENTRATION_DIFFICULTIES.value: 0.90,
    MadrsItem.LASSITUDE.value: 0.90,
    MadrsItem.INABILITY_TO_FEEL.value: 0.94,
    MadrsItem.PESSIMISTIC_THOUGHTS.value: 0.93,
    MadrsItem.SUICIDAL_THOUGHTS.value: 0.97,
}


class DegenerateClassWarning(UserWarning):
    """Ground truth falls entirely on one side of the threshold; F1 is undefined."""


@dataclass(frozen=True)
class PairedScores:
    truth: tuple[int, ...]
    pred: tuple[int, ...]
    ids: tuple[str, ...] = ()
    max_score: int = ITEM_MAX

    def __post_init__(self):
        if len(self.truth) != len(self.pred):
            raise LengthMismatch(f"truth has {len(self.truth)} values, pred has {len(self.pred)}")
        if self.ids and len(self.ids) != len(self.truth):
            raise LengthMismatch("ids must align with scores")
        if len(self.truth) < 2:
            raise ValueError("need at least 2 paired scores")
        for v in (*self.truth, *self.pred):
            if not 0 <= v <= self.max_score:
                raise ValueError(f"score {v} outside 0-{self.max_score}")

    @classmethod
    def of(cls, truth: Sequence, pred: Sequence, ids: Sequence[str] = (), max_score: int = ITEM_MAX):
        return cls(tuple(truth), tuple(pred), tuple(ids), max_score)

    def __len__(self) -> int:
        return len(self.truth)


def _integral(values) -> bool:
    return all(float(v).is_integer() for v in values)


def _as_pair(p) -> tuple[Sequence, Sequence]:
    if isinstance(p, PairedScores):
        return p.truth, p.pred
    truth, pred = p
    if len(truth) != len(pred):
        raise LengthMismatch(f"truth has {len(truth)} values, pred has {len(pred)}")
    return truth, pred


def mae(p: PairedScores | tuple[Sequence, Sequence]) -> float:
    """Mean absolute error."""
    truth, pred = _as_pair(p)
    if not len(truth):
        raise ValueError("empty input")
    if _integral(truth) and _integral(pred):
        return float(Fraction(sum(abs(int(t) - int(q)) for t, q in zip(truth, pred)), len(truth)))
    return float(np.mean(np.abs(np.asarray(truth, float) - np.asarray(pred, float))))


def r_squared(p: PairedScores | tuple[Sequence, Sequence]) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot (negative when worse than the mean)."""
    truth, pred = _as_pair(p)
    n = len(truth)
    if _integral(truth) and _integral(pred):
        t = [int(v) for v in truth]
        q = [int(v) for v in pred]
        n_ss_tot = n * sum(v * v for v in t) - sum(t) ** 2
        if n_ss_tot == 0:
            raise ConstantTruth("truth is constant; R^2 undefined")
        ss_res = sum((a - b) ** 2 for a, b in zip(t, q))
        return float(1 - Fraction(n * ss_res, n_ss_tot))
    t = np.asarray(truth, float)
    q = np.asarray(pred, float)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0:
        raise ConstantTruth("truth is constant; R^2 undefined")
    return 1.0 - float(np.sum((t - q) ** 2)) / ss_tot


@dataclass(frozen=True)
class AnovaTable:
    """Two-way (targets x raters) ANOVA without interaction, one rating per cell."""

    n: int
    k: int
    ss_targets: float
    ss_raters: float
    ss_residual: float

    @property
    def ms_targets(self) -> float:
        return self.ss_targets / (self.n - 1)

    @property
    def ms_raters(self) -> float:
        return self.ss_raters / (self.k - 1)

    @property
    def ms_residual(self) -> float:
        return self.ss_residual / ((self.n - 1) * (self.k - 1))


def _check_matrix(ratings) -> np.ndarray:
    x = np.asarray(ratings, dtype=float)
    if x.ndim != 2:
        raise ValueError("ratings must be a 2-D matrix (targets x raters)")
    n, k = x.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 targets and 2 raters")
    if np.isnan(x).any():
        raise MissingCell("ratings matrix has missing cells")
    return x


def _exact_sums(x: np.ndarray) -> tuple[int, int, int, int]:
    """Integer sums of squares, each scaled by n*k: (targets, raters, residual, n*k)."""
    cells = [[int(v) for v in row] for row in x]
    n, k = len(cells), len(cells[0])
    total = sum(map(sum, cells))
    row_sums = [sum(r) for r in cells]
    col_sums = [sum(c) for c in zip(*cells)]
    sq = sum(v * v for r in cells for v in r)
    nk_total = n * k * sq - total ** 2
    nk_rows = n * sum(r * r for r in row_sums) - total ** 2
    nk_cols = k * sum(c * c for c in col_sums) - total ** 2
    return nk_rows, nk_cols, nk_total - nk_rows - nk_cols, n * k


def anova_two_way(ratings) -> AnovaTable:
    x = _check_matrix(ratings)
    n, k = x.shape
    if _integral(x.ravel()):
        rows, cols, resid, nk = _exact_sums(x)
        return AnovaTable(n, k, rows / nk, cols / nk, resid / nk)
    gm = x.mean()
    row = x.mean(axis=1, keepdims=True)
    col = x.mean(axis=0, keepdims=True)
    return AnovaTable(
        n, k,
        ss_targets=float(k * np.sum((row - gm) ** 2)),
        ss_raters=float(n * np.sum((col - gm) ** 2)),
        ss_residual=float(np.sum((x - row - col + gm) ** 2)),
    )


def icc_3k(ratings) -> float:
    """ICC(3,k): two-way mixed, average measures, consistency.

    ``ratings`` is an n-targets by k-raters matrix. Equals
    ``(MS_targets - MS_residual) / MS_targets``.
    """
    x = _check_matrix(ratings)
    k = x.shape[1]
    if _integral(x.ravel()):
        rows, _, resid, _ = _exact_sums(x)
        if rows == 0:
            raise ZeroBetweenTargetVariance("all targets have the same mean rating")
        return float(1 - Fraction(resid, (k - 1) * rows))
    a = anova_two_way(x)
    if a.ss_targets == 0:
        raise ZeroBetweenTargetVariance("all targets have the same mean rating")
    return (a.ms_targets - a.ms_residual) / a.ms_targets


def icc_3_1(ratings) -> float:
    """ICC(3,1): single-measure sibling of :func:`icc_3k`."""
    x = _check_matrix(ratings)
    k = x.shape[1]
    if _integral(x.ravel()):
        rows, _, resid, _ = _exact_sums(x)
        if rows == 0:
            raise ZeroBetweenTargetVariance("all targets have the same mean rating")
        return float(Fraction((k - 1) * rows - resid, (k - 1) * (rows + resid)))
    a = anova_two_way(x)
    if a.ss_targets == 0:
        raise ZeroBetweenTargetVariance("all targets have the same mean rating")
    return (a.ms_targets - a.ms_residual) / (a.ms_targets + (k - 1) * a.ms_residual)


@dataclass(frozen=True)
class ClassificationResult:
    f1: float
    accuracy: float
    class_dist: tuple[int, int]
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def degenerate(self) -> bool:
        return 0 in self.class_dist


def threshold_classification(p: PairedScores | tuple[Sequence, Sequence], threshold: int) -> ClassificationResult:
    """Binarize truth and prediction at ``>= threshold`` and score the positive class.

    ``class_dist`` is (truth below threshold, truth at/above threshold). When
    truth has a single class, F1 is NaN and a DegenerateClassWarning is issued.
    """
    truth, pred = _as_pair(p)
    if isinstance(p, PairedScores) and not 0 <= threshold <= p.max_score:
        raise ValueError(f"threshold {threshold} outside 0-{p.max_score}")
    tp = fp = fn = tn = 0
    for t, q in zip(truth, pred):
        pos_t, pos_q = t >= threshold, q >= threshold
        if pos_t and pos_q:
            tp += 1
        elif pos_q:
            fp += 1
        elif pos_t:
            fn += 1
        else:
            tn += 1
    n = tp + fp + fn + tn
    dist = (fp + tn, tp + fn)
    if 0 in dist:
        warnings.warn(
            f"truth has a single class at threshold {threshold}; F1 undefined",
            DegenerateClassWarning, stacklevel=2,
        )
        f1 = math.nan
    else:
        f1 = float(Fraction(2 * tp, 2 * tp + fp + fn))
    return ClassificationResult(f1, float(Fraction(tp + tn, n)), dist, tp, fp, fn, tn)


# -- per-run reports and aggregation ---------------------------------------

METRIC_NAMES = ("mae", "r2", "icc3k", "f1", "accuracy")


@dataclass(frozen=True)
class RunMetrics:
    """All metrics for one target (an item or the total) in one run."""

    mae: float
    r2: float
    icc3k: float
    f1: float
    accuracy: float
    class_dist: tuple[int, int]
    n: int
    coverage: float
    notes: tuple[str, ...] = ()

    def value(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    n_runs: int
    single_run: bool = False


@dataclass(frozen=True)
class MetricsReport:
    target: str
    runs: tuple[RunMetrics, ...]
    summary: dict[str, Summary]
    pooled: RunMetrics | None = None
    coverage: float = 1.0
    notes: tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "target": self.target,
            "coverage": self.coverage,
            "summary": {
                k: {"mean": clean(s.mean), "sd": clean(s.sd), "n_runs": s.n_runs, "single_run": s.single_run}
                for k, s in self.summary.items()
            },
            "class_dist": list(self.runs[0].class_dist) if self.runs else None,
            "runs": [
                {**{m: clean(r.value(m)) for m in METRIC_NAMES},
                 "class_dist": list(r.class_dist), "n": r.n, "coverage": r.coverage, "notes": list(r.notes)}
                for r in self.runs
            ],
            "pooled": None if self.pooled is None else {
                **{m: clean(self.pooled.value(m)) for m in METRIC_NAMES},
                "n": self.pooled.n, "notes": list(self.pooled.notes),
            },
            "notes": list(self.notes),
        }


def compute_run_metrics(p: PairedScores, threshold: int, coverage: float = 1.0) -> RunMetrics:
    """Metric suite for one set of pairs; undefined metrics become NaN with a note."""
    notes: list[str] = []
    try:
        r2 = r_squared(p)
    except ConstantTruth:
        r2 = math.nan
        notes.append("r2 undefined: constant truth")
    try:
        icc = icc_3k(np.column_stack([p.truth, p.pred]))
    except ZeroBetweenTargetVariance:
        icc = math.nan
        notes.append("icc undefined: no between-target variance")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cls = threshold_classification(p, threshold)
    if any(issubclass(w.category, DegenerateClassWarning) for w in caught):
        notes.append("f1 undefined: single truth class")
    return RunMetrics(
        mae=mae(p), r2=r2, icc3k=icc, f1=cls.f1, accuracy=cls.accuracy,
        class_dist=cls.class_dist, n=len(p), coverage=coverage, notes=tuple(notes),
    )


def _summarize(values: Sequence[float]) -> Summary:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return Summary(math.nan, math.nan, 0, len(values) == 1)
    if len(vals) == 1:
        return Summary(vals[0], 0.0, 1, True)
    arr = np.asarray(vals)
    return Summary(float(arr.mean()), float(arr.std(ddof=1)), len(vals))


def aggregate_runs(
    reports: Sequence[RunMetrics],
    target: str = "",
    pooled: RunMetrics | None = None,
) -> MetricsReport:
    """Across-run mean and sample SD of every metric."""
    if not reports:
        raise ValueError("need at least one run")
    summary = {m: _summarize([r.value(m) for r in reports]) for m in METRIC_NAMES}
    coverage = float(np.mean([r.coverage for r in reports]))
    return MetricsReport(target, tuple(reports), summary, pooled, coverage)


# -- run-set evaluation -----------------------------------------------------

def _require_truth(corpus, ids):
    unlabeled = [i for i in ids if corpus[i].clinician_scores is None]
    if unlabeled:
        raise MissingGroundTruth(
            f"{len(unlabeled)} interview(s) lack clinician scores, e.g. {unlabeled[0]!r}"
        )


def paired_for_run(corpus, runset, target: str, run_index: int) -> tuple[PairedScores | None, int]:
    """Clinician vs model pairs for one target and run; incomplete entries are skipped.

    Returns ``(pairs or None if fewer than 2, number of interviews expected)``.
    """
    ids = runset.interview_ids
    truth, pred, used = [], [], []
    for iid in ids:
        key = (iid, run_index)
        if key not in runset.runs:
            continue
        run = runset.runs[key]
        t = corpus[iid]
        if target == TOTAL:
            value, ref = run.total, t.clinician_total
        else:
            value, ref = run.score(MadrsItem(target)), t.clinician_scores[MadrsItem(target)]
        if value is None:
            continue
        truth.append(ref)
        pred.append(value)
        used.append(iid)
    if len(used) < 2:
        return None, len(ids)
    max_score = TOTAL_MAX if target == TOTAL else ITEM_MAX
    return PairedScores.of(truth, pred, used, max_score), len(ids)


def _empty_metrics(n_expected: int, n: int, note: str) -> RunMetrics:
    nan = math.nan
    return RunMetrics(nan, nan, nan, nan, nan, (0, 0), n, n / n_expected if n_expected else 0.0, (note,))


def evaluate_target(corpus, runset, target: str) -> MetricsReport:
    threshold = TOTAL_THRESHOLD if target == TOTAL else ITEM_THRESHOLD
    per_run = []
    all_truth, all_pred = [], []
    for r in runset.run_indices:
        pairs, expected = paired_for_run(corpus, runset, target, r)
        if pairs is None:
            per_run.append(_empty_metrics(expected, 0, "fewer than 2 scorable interviews"))
            continue
        per_run.append(compute_run_metrics(pairs, threshold, len(pairs) / expected))
        all_truth += pairs.truth
        all_pred += pairs.pred
    pooled = None
    if len(all_truth) >= 2:
        max_score = TOTAL_MAX if target == TOTAL else ITEM_MAX
        pooled = compute_run_metrics(PairedScores.of(all_truth, all_pred, max_score=max_score), threshold)
    return aggregate_runs(per_run, target, pooled)


def evaluate_runset(corpus, runset) -> dict[str, MetricsReport]:
    """Metrics per item plus the total, keyed by item value and ``"total"``."""
    _require_truth(corpus, runset.interview_ids)
    out = {item.value: evaluate_target(corpus, runset, item.value) for item in ITEMS}
    out[TOTAL] = evaluate_target(corpus, runset, TOTAL)
    return out


def icc_across_runs(runset, target: str) -> float:
    """ICC(3,k) treating repeated runs as raters (model self-consistency)."""
    runs = runset.run_indices
    rows = []
    for iid in runset.interview_ids:
        vals = []
        for r in runs:
            run = runset.runs.get((iid, r))
            v = None if run is None else (run.total if target == TOTAL else run.score(MadrsItem(target)))
            vals.append(v)
        if all(v is not None for v in vals):
            rows.append(vals)
    return icc_3k(np.asarray(rows, dtype=float))


@dataclass(frozen=True)
class ScopeComparisonRow:
    item: str
    mae_full: float
    se_full: float
    n_full: int
    mae_segmented: float
    se_segmented: float
    n_segmented: int


def _per_interview_abs_error(corpus, runset, target: str) -> list[float]:
    out = []
    for iid in runset.interview_ids:
        errs = []
        for r in runset.run_indices:
            run = runset.runs.get((iid, r))
            if run is None:
                continue
            if target == TOTAL:
                v, ref = run.total, corpus[iid].clinician_total
            else:
                v, ref = run.score(MadrsItem(target)), corpus[iid].clinician_scores[MadrsItem(target)]
            if v is not None:
                errs.append(abs(v - ref))
        if errs:
            out.append(sum(errs) / len(errs))
    return out


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, float)
    if len(arr) < 2:
        return float(arr.mean()), math.nan
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))


def scope_comparison(corpus, full_runset, segmented_runset) -> list[ScopeComparisonRow]:
    """Per-item MAE and standard error for full-transcript vs segmented runs.

    The unit is the interview: absolute errors are averaged over runs within
    each interview before the mean and SE are taken across interviews.
    """
    _require_truth(corpus, full_runset.interview_ids)
    _require_truth(corpus, segmented_runset.interview_ids)
    rows = []
    for item in ITEMS:
        ef = _per_interview_abs_error(corpus, full_runset, item.value)
        es = _per_interview_abs_error(corpus, segmented_runset, item.value)
        mf, sf = _mean_se(ef)
        ms, ss = _mean_se(es)
        rows.append(ScopeComparisonRow(item.value, mf, sf, len(ef), ms, ss, len(es)))
    return rows
