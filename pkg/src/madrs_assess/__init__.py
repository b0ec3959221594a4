"""Score MADRS items from diarized interview transcripts with a language model.

The pipeline segments an interview into question-response pairs, asks the
model for one item at a time, and evaluates the ratings against clinician
scores. A mixed-effects model of the absolute errors relates them to visit,
transcript length, rater and patient characteristics.
"""

__version__ = "0.1.0"

from .assessor import (
    AssessmentRun,
    ItemAssessment,
    ItemFailure,
    RunSet,
    RunStore,
    assess_corpus,
    assess_item,
    parse_assessment,
)
from .catalog import ITEMS, Catalog, MadrsItem, default_catalog, load_catalog
from .error_model import (
    ErrorObservation,
    MixedModelFit,
    analyze_errors,
    decompose_within_between,
    fit_reml,
    significant_effects,
)
from .llm import LlmConfig, MockBackend, RemoteBackend, run_batch
from .metrics import (
    evaluate_runset,
    icc_3k,
    mae,
    r_squared,
    scope_comparison,
    threshold_classification,
)
from .prompts import ContextScope, PromptVariant, build_assessment_prompt, build_segmentation_prompt
from .segmenter import SegmentedInterview, segment_interview
from .synth import OraclePolicy, SynthSpec, generate_corpus
from .transcript import Corpus, Transcript, load_corpus, write_corpus
