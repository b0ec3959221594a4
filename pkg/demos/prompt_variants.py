"""
Inspect the four prompt variants used for cue ablation.

Each variant is a subset of the same rendered sections, so dropping a cue
type can only shorten the prompt.
"""

# %%
from madrs_assess.catalog import MadrsItem
from madrs_assess.prompts import ContextScope, PromptVariant, build_assessment_prompt

context = "CLINICIAN: How has your appetite been?\nPATIENT: I skip lunch most days."
item = MadrsItem.REDUCED_APPETITE

# %%
# Section manifests and lengths per variant.
for v in PromptVariant:
    p = build_assessment_prompt(item, context, v, ContextScope.SEGMENTED)
    names = ", ".join(s.value for s in p.section_manifest)
    print(f"{v.value:16s} {len(p.rendered_text):6d} chars  [{names}]")

# %%
# The bare prompt still lists the rating anchors.
bare = build_assessment_prompt(item, context, PromptVariant.NO_CUES, ContextScope.FULL_TRANSCRIPT)
print(bare.rendered_text)
