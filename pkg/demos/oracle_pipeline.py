"""
Walk through the full scoring pipeline on a synthetic corpus.

The mock backend decodes planted severity markers, so every number below is
known in advance. Raising ``NOISE`` makes the oracle miss by one point on
that fraction of calls, which is visible as MAE close to ``NOISE``.

Run with ``python demos/oracle_pipeline.py``.
"""

# %%
# Build a corpus: 12 patients seen twice, scores drawn uniformly.
from madrs_assess import SynthSpec, generate_corpus

corpus = generate_corpus(SynthSpec(n_patients=12, visits_per_patient=2, seed=1))
first = next(iter(corpus))
print(first.interview_id, "total", first.clinician_total)
print("\n".join(f"{u.speaker.value}: {u.text}" for u in first.utterances[:6]))

# %%
# Split each interview into question/response pairs and map them to items.
from madrs_assess.llm import MockBackend
from madrs_assess.segmenter import segment_interview
from madrs_assess.synth import OraclePolicy

NOISE = 0.2
backend = MockBackend(OraclePolicy(noise=NOISE))
segments = {t.interview_id: segment_interview(t, backend) for t in corpus}
seg = segments[first.interview_id]
print(f"{seg.n_pairs} pairs, {seg.mapped_fraction:.0%} mapped")

# %%
# Score every item five times with and without segmentation.
from madrs_assess.assessor import assess_corpus

segmented = assess_corpus(corpus, "all", "segmented", backend, 5, segments=segments)
full = assess_corpus(corpus, "all", "full", backend, 5)
print(len(backend.request_log), "requests sent")

# %%
# Agreement with the clinician, mean and SD over the five runs.
from madrs_assess.metrics import evaluate_runset, scope_comparison
from madrs_assess.reports import icc_reference_table, metrics_table, scope_comparison_csv

reports = evaluate_runset(corpus, segmented)
print(metrics_table(reports))
print(icc_reference_table(reports))

# %%
# Paired per-item error for the two context scopes.
print(scope_comparison_csv(scope_comparison(corpus, full, segmented)))
