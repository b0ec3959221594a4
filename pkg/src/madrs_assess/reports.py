"""Text, JSON and CSV renderings of evaluation and error-model results."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Mapping, Sequence

from .catalog import ITEMS, MadrsItem
from .error_model import INTERCEPT, ErrorModelResult, significant_effects
from .metrics import HUMAN_REFERENCE_ICC, TOTAL, MetricsReport, ScopeComparisonRow, Summary

TARGETS = tuple(i.value for i in ITEMS) + (TOTAL,)
METRIC_COLUMNS = (("mae", "MAE"), ("r2", "R2"), ("icc3k", "ICC(3,k)"), ("f1", "F1"), ("accuracy", "Accuracy"))

PREDICTOR_LABELS = {
    "visit_within": "Visit (W)",
    "tokens_within": "Tokens (W)",
    "rater_R2": "Rater R2",
    "rater_R3": "Rater R3",
    "visit_between": "Visit (B)",
    "tokens_between": "Tokens (B)",
    "education": "Education",
    "male": "Male",
    "other_gender": "Other gender",
    "age": "Age",
}


def target_label(target: str) -> str:
    return "Total" if target == TOTAL else MadrsItem(target).label


def fmt_mean_sd(s: Summary | None, digits: int = 2) -> str:
    if s is None or math.isnan(s.mean):
        return "n/a"
    if s.single_run or math.isnan(s.sd):
        return f"{s.mean:.{digits}f}"
    return f"{s.mean:.{digits}f} ± {s.sd:.{digits}f}"


def _render(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(r) for r in rows)]) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v: float, digits: int = 6) -> str:
    return "" if v is None or math.isnan(v) else f"{v:.{digits}f}"


def metrics_table(reports: Mapping[str, MetricsReport]) -> str:
    """Per-item and total metrics as mean ± SD across runs."""
    header = ["Item", *(name for _, name in METRIC_COLUMNS), "Class dist. (<t, >=t)", "Coverage"]
    rows = []
    for target in TARGETS:
        rep = reports.get(target)
        if rep is None:
            continue
        dist = rep.runs[0].class_dist if rep.runs else ("?", "?")
        rows.append([
            target_label(target),
            *(fmt_mean_sd(rep.summary.get(key)) for key, _ in METRIC_COLUMNS),
            f"{dist[0]} / {dist[1]}",
            f"{rep.coverage:.3f}",
        ])
    return _render(header, rows)


def metrics_json(reports: Mapping[str, MetricsReport]) -> str:
    return json.dumps({t: reports[t].to_json() for t in TARGETS if t in reports}, indent=2, sort_keys=True) + "\n"


def metrics_csv(reports: Mapping[str, MetricsReport]) -> str:
    header = ["target"]
    for key, _ in METRIC_COLUMNS:
        header += [f"{key}_mean", f"{key}_sd"]
    header += ["n_runs", "coverage"]
    rows = []
    for target in TARGETS:
        rep = reports.get(target)
        if rep is None:
            continue
        row = [target]
        for key, _ in METRIC_COLUMNS:
            s = rep.summary[key]
            row += [_num(s.mean), _num(s.sd)]
        row += [rep.summary["mae"].n_runs, f"{rep.coverage:.6f}"]
        rows.append(row)
    return _csv(header, rows)


def comparison_table(
    results: Mapping[str, Mapping[str, MetricsReport]],
    metric: str = "mae",
) -> str:
    """One column per configuration (prompt variant, model, ...), one row per item."""
    names = list(results)
    rows = []
    for target in TARGETS:
        if not any(target in results[n] for n in names):
            continue
        rows.append([
            target_label(target),
            *(fmt_mean_sd(results[n][target].summary.get(metric)) if target in results[n] else "n/a"
              for n in names),
        ])
    return _render(["Item", *names], rows)


def icc_reference_table(
    reports: Mapping[str, MetricsReport],
    self_consistency: Mapping[str, float] | None = None,
) -> str:
    """Model-vs-clinician ICC beside the human inter-rater reference values."""
    header = ["Item", "Model ICC(3,k)", "Human reference"]
    if self_consistency is not None:
        header.append("Run-to-run ICC(3,k)")
    rows = []
    for target in TARGETS:
        rep = reports.get(target)
        if rep is None:
            continue
        row = [target_label(target), fmt_mean_sd(rep.summary.get("icc3k")), f"{HUMAN_REFERENCE_ICC[target]:.2f}"]
        if self_consistency is not None:
            v = self_consistency.get(target, math.nan)
            row.append("n/a" if math.isnan(v) else f"{v:.3f}")
        rows.append(row)
    return _render(header, rows)


def scope_comparison_csv(rows: Sequence[ScopeComparisonRow]) -> str:
    header = ["item", "mae_full", "se_full", "n_full", "mae_segmented", "se_segmented", "n_segmented"]
    return _csv(header, [
        [r.item, _num(r.mae_full), _num(r.se_full), r.n_full,
         _num(r.mae_segmented), _num(r.se_segmented), r.n_segmented]
        for r in rows
    ])


def _predictors(results: Mapping[str, ErrorModelResult]) -> list[str]:
    seen: list[str] = []
    for res in results.values():
        if res.fit is None:
            continue
        for c in res.fit.columns:
            if c != INTERCEPT and c not in seen:
                seen.append(c)
    order = list(PREDICTOR_LABELS)
    return sorted(seen, key=lambda c: order.index(c) if c in order else len(order))


def error_model_table(results: Mapping[str, ErrorModelResult], alpha: float = 0.05) -> str:
    """Significant coefficients per target; '--' marks non-significant or absent terms."""
    preds = _predictors(results)
    header = ["Item", *(PREDICTOR_LABELS.get(p, p) for p in preds)]
    rows, notes = [], []
    for target in TARGETS:
        res = results.get(target)
        if res is None:
            continue
        if res.fit is None:
            rows.append([target_label(target), *("--" for _ in preds)])
            notes.append(f"{target_label(target)}: {res.error}")
            continue
        sig = dict(significant_effects(res.fit, alpha))
        rows.append([target_label(target), *(f"{sig[p]:.3f}" if p in sig else "--" for p in preds)])
        if res.dropped:
            notes.append(f"{target_label(target)}: dropped {', '.join(res.dropped)} (SingularDesign)")
        if res.error:
            notes.append(f"{target_label(target)}: {res.error}")
    text = _render(header, rows)
    text += f"'--' = not significant at alpha {alpha:g} (Wald z-test) or not estimable.\n"
    if notes:
        text += "Notes:\n" + "".join(f"  {n}\n" for n in notes)
    return text


def error_model_json(results: Mapping[str, ErrorModelResult], alpha: float = 0.05) -> str:
    out = {}
    for target, res in results.items():
        entry = {"dropped": res.dropped, "error": res.error, "fit": None, "significant": []}
        if res.fit is not None:
            entry["fit"] = res.fit.to_json()
            entry["significant"] = [{"predictor": p, "coef": c} for p, c in significant_effects(res.fit, alpha)]
        out[target] = entry
    return json.dumps({"alpha": alpha, "models": out}, indent=2, sort_keys=True) + "\n"
