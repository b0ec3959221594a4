"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (collected again in the terminal
summary). Tolerances are fixed here and never loosened.
"""

import itertools
import math
import os
import time
import warnings

import numpy as np
import pytest

from oracles import confusion_oracle, icc3k_oracle, mae_oracle, ols, one_way_anova_components, r2_oracle
from madrs_assess.assessor import ItemAssessment, assess_corpus, parse_assessment
from madrs_assess.catalog import ITEMS, MadrsItem
from madrs_assess.cli import main
from madrs_assess.error_model import fit_reml
from madrs_assess.errors import AssessmentParseError, ZeroBetweenTargetVariance
from madrs_assess.llm import MockBackend
from madrs_assess.metrics import (
    DegenerateClassWarning,
    ITEM_THRESHOLD,
    TOTAL_THRESHOLD,
    PairedScores,
    evaluate_runset,
    icc_3k,
    mae,
    r_squared,
    scope_comparison,
    threshold_classification,
)
from madrs_assess.prompts import (
    CONTEXT_BEGIN,
    OUTPUT_FIELDS,
    SEGMENTATION_HEADER,
    ContextScope,
    PromptVariant,
    Section,
    build_assessment_prompt,
    extract_context,
    prompt_sections,
)
from madrs_assess.reports import metrics_csv, metrics_table, scope_comparison_csv
from madrs_assess.segmenter import segment_interview
from madrs_assess.synth import OraclePolicy, SynthSpec, generate_corpus, simulate_random_intercept
from madrs_assess.transcript import Corpus, Transcript, Utterance

REL = 1e-10


def _segment_all(corpus, backend, seed=0):
    return {t.interview_id: segment_interview(t, backend, seed=seed) for t in corpus}


def _pipeline(corpus, noise, reps, scope="segmented", seed=0):
    backend = MockBackend(OraclePolicy(noise=noise))
    segs = _segment_all(corpus, backend, seed) if scope == "segmented" else None
    rs = assess_corpus(corpus, "all", scope, backend, reps, segments=segs, seed=seed)
    return rs, backend


def test_c1_oracle_end_to_end(criterion):
    start = time.perf_counter()
    corpus = generate_corpus(SynthSpec(20, 2, seed=2024))
    rs, _ = _pipeline(corpus, 0.0, 5)
    reports = evaluate_runset(corpus, rs)
    elapsed = time.perf_counter() - start
    bad = []
    for target, rep in reports.items():
        if rep.summary["mae"].mean != 0 or rep.summary["accuracy"].mean != 1:
            bad.append(target)
        truth_varies = len({t.clinician_total if target == "total" else t.clinician_scores[MadrsItem(target)]
                            for t in corpus}) > 1
        if truth_varies and not all(r.icc3k == 1 for r in rep.runs):
            bad.append(f"{target}:icc")
    criterion("C1 oracle end-to-end", not bad and elapsed < 60 and len(reports) == 11,
              f"{elapsed:.1f}s, offending={bad}")


@pytest.mark.parametrize("p", [0.1, 0.3])
def test_c2_noise_calibration(criterion, p):
    corpus = generate_corpus(SynthSpec(20, 2, seed=7))
    rs, _ = _pipeline(corpus, p, 5, scope="full", seed=3)
    worst = []
    for item in ITEMS:
        errs = [abs(run.score(item) - t.clinician_scores[item])
                for t in corpus for r in rs.run_indices for run in [rs.run(t.interview_id, r)]]
        n = len(errs)
        band = 3 * math.sqrt(p * (1 - p) / n)
        worst.append((abs(np.mean(errs) - p) / band, n))
    ratio, n = max(worst)
    criterion(f"C2 noise calibration p={p}", ratio <= 1 and n >= 200,
              f"n={n} per item, worst |MAE-p| = {ratio:.2f} x 3 SD")


def test_c3_metric_oracles(criterion):
    rng = np.random.default_rng(3)
    checked = {"mae": 0, "r2": 0, "icc": 0, "cls": 0}
    fails = []

    def close(a, b):
        return abs(a - b) <= REL * max(1.0, abs(b))

    for case in range(1000):
        n = int(rng.integers(3, 12))
        truth = rng.integers(0, 7, n)
        pred = rng.integers(0, 7, n)
        pair = PairedScores.of(truth.tolist(), pred.tolist())
        checked["mae"] += 1
        if not close(mae(pair), mae_oracle(truth, pred)):
            fails.append(("mae", case))
        if np.ptp(truth) > 0:
            checked["r2"] += 1
            if not close(r_squared(pair), r2_oracle(truth, pred)):
                fails.append(("r2", case))
        k = int(rng.integers(2, 5))
        x = rng.integers(0, 7, (n, k))
        try:
            got = icc_3k(x)
        except ZeroBetweenTargetVariance:
            if np.ptp(x.mean(axis=1)) != 0:
                fails.append(("icc-raise", case))
        else:
            checked["icc"] += 1
            if not close(got, icc3k_oracle(x)):
                fails.append(("icc", case))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateClassWarning)
            c = threshold_classification(pair, ITEM_THRESHOLD)
        tp, fp, fn, tn, f1, acc = confusion_oracle(truth, pred, ITEM_THRESHOLD)
        checked["cls"] += 1
        same = (c.tp, c.fp, c.fn, c.tn) == (tp, fp, fn, tn) and close(c.accuracy, acc)
        if c.degenerate:
            same &= math.isnan(c.f1)
        else:
            same &= close(c.f1, f1)
        if not same:
            fails.append(("cls", case))

    x = rng.integers(0, 7, (8, 3))
    while np.ptp(x.mean(axis=1)) == 0:
        x = rng.integers(0, 7, (8, 3))
    shifted = x + np.array([0, 5, -2])
    shift_ok = icc_3k(x) == icc_3k(shifted)
    neg_ok = r_squared(PairedScores.of([0, 2, 4], [4, 2, 0])) == -3.0
    criterion("C3 metric oracles", not fails and shift_ok and neg_ok,
              f"checked {checked}, mismatches={fails[:5]}, shift={shift_ok}, R2(-3)={neg_ok}")


def test_c4_mixed_model_recovery(criterion):
    rng = np.random.default_rng(44)
    # (a) no patient variance: boundary fit equals OLS
    a_err = 0.0
    for _ in range(20):
        X, y, g = simulate_random_intercept(50, 4, np.array([0.5, 1.0, -1.0]), 0.0, 1.0, rng, center_noise=True)
        fit = fit_reml(X, y, g)
        a_err = max(a_err, float(np.max(np.abs(fit.coef - ols(X, y)))) if fit.psi == 0 else math.inf)
    a_ok = a_err <= 1e-6

    # (b) balanced intercept-only design: closed-form ANOVA components
    b_err = 0.0
    for m, n in [(10, 3), (30, 5), (60, 2)]:
        y = rng.normal(size=(m, n)) + rng.normal(scale=1.2, size=(m, 1))
        su, se = one_way_anova_components(y)
        fit = fit_reml(np.ones((m * n, 1)), y.ravel(), np.repeat(np.arange(m), n))
        b_err = max(b_err, abs(fit.sigma_u2 - su) / su, abs(fit.sigma_e2 - se) / se)
    b_ok = b_err <= 1e-8

    # (c) coverage of 3-SE intervals
    beta = np.array([1.0, 0.4, -0.3, 0.2])
    hits = np.zeros(len(beta))
    for _ in range(100):
        X, y, g = simulate_random_intercept(200, 5, beta, 0.8, 1.0, rng)
        fit = fit_reml(X, y, g)
        hits += np.abs(fit.coef - beta) <= 3 * fit.se
    c_ok = bool(np.all(hits >= 95))

    # (d) false-flag rate of a null predictor at alpha 0.05
    flags = 0
    for _ in range(500):
        X, y, g = simulate_random_intercept(60, 4, np.array([1.0, 0.0]), 0.8, 1.0, rng)
        flags += fit_reml(X, y, g).p_values[1] < 0.05
    rate = flags / 500
    d_ok = 0.02 <= rate <= 0.10

    criterion("C4 mixed-model recovery", a_ok and b_ok and c_ok and d_ok,
              f"(a) max|b-ols|={a_err:.1e} (b) rel={b_err:.1e} (c) hits={hits.astype(int).tolist()}/100 "
              f"(d) rate={rate:.3f}")


def test_c5_prompt_ablation(criterion):
    ctx = "CLINICIAN: How have you been sleeping?\nPATIENT: Badly."
    bad = []
    pairs = 0
    for item, scope in itertools.product(ITEMS, ContextScope):
        sections = prompt_sections(item, ctx, scope)
        texts = {}
        for v in PromptVariant:
            p = build_assessment_prompt(item, ctx, v, scope)
            pairs += 1
            m = p.section_manifest
            ok = all(s in m for s in (Section.TASK, Section.RATING_SCALE, Section.OUTPUT_FORMAT, Section.CONTEXT))
            ok &= (Section.ITEM_COMPONENTS in m) == v.descriptive
            ok &= (Section.DEMONSTRATIVE_CUES in m) == v.demonstrative
            ok &= all((sections[s] in p.rendered_text) == (s in m) for s in Section)
            ok &= list(m) == sorted(m, key=list(Section).index)
            ok &= all(f"{f}:" in p.rendered_text for f in OUTPUT_FIELDS)
            if not ok:
                bad.append((item.value, v.value, scope.value))
            texts[v] = p.rendered_text
        L = {v: len(t) for v, t in texts.items()}
        if not (L[PromptVariant.NO_CUES] <= L[PromptVariant.NO_DEMONSTRATIVE_CUES] <= L[PromptVariant.ALL_CUES]
                and L[PromptVariant.NO_CUES] <= L[PromptVariant.NO_DESCRIPTIVE_CUES] <= L[PromptVariant.ALL_CUES]
                and len(set(texts.values())) == 4):
            bad.append((item.value, "monotone", scope.value))
    criterion("C5 prompt ablation plumbing", not bad, f"{pairs} prompts, violations={bad[:5]}")


def test_c6_scope_comparison(criterion):
    corpus = generate_corpus(SynthSpec(10, 2, seed=66))
    full, _ = _pipeline(corpus, 0.0, 3, scope="full")
    seg, _ = _pipeline(corpus, 0.0, 3, scope="segmented")
    rows = scope_comparison(corpus, full, seg)
    csv_lines = scope_comparison_csv(rows).splitlines()
    ok = len(rows) == 10 and len(csv_lines) == 11
    ok &= [r.item for r in rows] == [i.value for i in ITEMS]
    ok &= all(r.mae_full == 0 and r.mae_segmented == 0 for r in rows)
    criterion("C6 context-scope comparison", ok, f"{len(rows)} rows, header={csv_lines[0]}")


FIELD_LINES = {
    "Rating": "Rating: {r}",
    "Explanation": "Explanation: The patient describes a change.",
    "Key Utterances": "Key Utterances: PATIENT: line one\nPATIENT: line two",
    "Most Relevant Question": "Most Relevant Question: How have you been?",
}
NOISE = ["", "Sure, here is my assessment.", "**Note**: uncertain", "Confidence: high", "---", "Rating", "7 8 9"]


def test_c7_parser_fuzz(criterion):
    rng = np.random.default_rng(77)
    panics, typed, ok, roundtrip_bad = [], 0, 0, 0
    for case in range(500):
        names = list(FIELD_LINES)
        rng.shuffle(names)
        keep = [n for n in names if rng.random() > 0.2]
        r = int(rng.integers(-2, 10))
        parts = []
        for n in keep:
            if rng.random() < 0.3:
                parts.append(NOISE[int(rng.integers(len(NOISE)))])
            line = FIELD_LINES[n].format(r=r)
            if rng.random() < 0.2:
                line = "**" + line.replace(":", ":**", 1)
            parts.append(line)
        raw = "\n".join(parts)
        try:
            a = parse_assessment(raw, MadrsItem.INNER_TENSION)
        except AssessmentParseError:
            typed += 1
        except Exception as exc:  # noqa: BLE001 - any other exception is a panic
            panics.append((case, repr(exc)))
        else:
            ok += 1
            if not isinstance(a, ItemAssessment) or not 0 <= a.score <= 6:
                panics.append((case, "invalid assessment"))

    for r in range(7):
        raw = "\n".join(FIELD_LINES[n].format(r=r) for n in OUTPUT_FIELDS)
        a = parse_assessment(raw, MadrsItem.INNER_TENSION)
        roundtrip_bad += (
            a.score != r
            or a.explanation != "The patient describes a change."
            or a.key_utterances != ("PATIENT: line one", "PATIENT: line two")
            or a.most_relevant_question != "How have you been?"
            or a.missing_fields != ()
        )
    criterion("C7 parser robustness", not panics and roundtrip_bad == 0 and typed + ok == 500,
              f"{ok} parsed, {typed} typed errors, panics={panics[:3]}, round-trip failures={roundtrip_bad}")


def _tagged(corpus):
    """Append an interview tag to every utterance so any cross-talk is visible."""
    out = []
    for t in corpus:
        utts = tuple(Utterance(u.index, u.speaker, f"{u.text} <{t.interview_id}>") for u in t.utterances)
        out.append(Transcript(t.meta, utts, t.clinician_scores))
    return Corpus(tuple(out))


def test_c8_leakage_and_determinism(criterion, tmp_path):
    corpus = _tagged(generate_corpus(SynthSpec(6, 2, seed=88)))
    tags = [f"<{t.interview_id}>" for t in corpus]
    leaks, checked = [], 0
    for scope in ("full", "segmented"):
        _, backend = _pipeline(corpus, 0.0, 2, scope=scope)
        for rec in backend.request_log:
            body = rec.prompt if rec.prompt.startswith(SEGMENTATION_HEADER) else extract_context(rec.prompt)
            present = {tag for tag in tags if tag in body}
            checked += 1
            if len(present) != 1:
                leaks.append(sorted(present))

    def run(dirname):
        d = tmp_path / dirname
        d.mkdir()
        os.chdir(d)
        assert main(["synth", "--corpus", "c.jsonl", "--patients", "4", "--visits", "2", "--seed", "8"]) == 0
        common = ["--corpus", "c.jsonl", "--seed", "8", "--mock-noise", "0.3"]
        assert main(["segment", *common]) == 0
        assert main(["assess", *common, "--runs", "3"]) == 0
        assert main(["evaluate", *common, "--runs", "3"]) == 0
        return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
                if p.is_file() and not p.name.endswith(".lock")}

    cwd = os.getcwd()
    try:
        a, b = run("first"), run("second")
    finally:
        os.chdir(cwd)
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    runsets = [k for k in a if k.startswith("out/runs/") and k.endswith(".jsonl")]
    reports = [k for k in a if k.startswith("out/reports/")]
    criterion("C8 leakage and determinism", not leaks and not differing and runsets and reports,
              f"{checked} prompts checked, leaks={leaks[:3]}, {len(a)} artifacts, differing={differing[:3]}")


def test_c9_threshold_semantics(criterion):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateClassWarning)
        item = threshold_classification(PairedScores.of([2, 3], [3, 2]), ITEM_THRESHOLD)
        same_item = threshold_classification(PairedScores.of([2, 3], [2, 3]), ITEM_THRESHOLD)
        total = threshold_classification(PairedScores.of([19, 20], [20, 19], max_score=60), TOTAL_THRESHOLD)
        same_total = threshold_classification(PairedScores.of([19, 20], [19, 20], max_score=60), TOTAL_THRESHOLD)
    ok = (ITEM_THRESHOLD, TOTAL_THRESHOLD) == (3, 20)
    ok &= item.class_dist == (1, 1) and (item.tp, item.fp, item.fn, item.tn) == (0, 1, 1, 0)
    ok &= same_item.accuracy == 1 and same_item.f1 == 1
    ok &= total.class_dist == (1, 1) and (total.tp, total.fp, total.fn, total.tn) == (0, 1, 1, 0)
    ok &= same_total.accuracy == 1 and same_total.f1 == 1
    criterion("C9 threshold semantics", ok,
              f"item 2|3 dist={item.class_dist}, total 19|20 dist={total.class_dist}")
