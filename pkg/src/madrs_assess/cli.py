"""Command-line entry point: ``madrs-assess <command> [options]``.

Stages communicate through files under ``--out``::

    out/segments/<interview>.json, out/segments/summary.json
    out/runs/<model>__<variant>__<scope>.jsonl (+ .manifest.json)
    out/reports/<runset>/...

Exit codes: 0 success, 1 partial failures, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import re
import shutil
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .assessor import DEFAULT_REPETITIONS, RunSet, RunStore, assess_corpus
from .catalog import ITEMS, Catalog, default_catalog, load_catalog
from .error_model import analyze_errors, observations_from_runset
from .errors import ConfigError, CorpusError, MadrsError, NoClinicianSpeech
from .llm import Backend, LlmConfig, MockBackend, RemoteBackend, backend_name
from .metrics import TOTAL, evaluate_runset, icc_across_runs, scope_comparison
from .prompts import ContextScope, PromptVariant
from .reports import (
    comparison_table,
    error_model_json,
    error_model_table,
    icc_reference_table,
    metrics_csv,
    metrics_json,
    metrics_table,
    scope_comparison_csv,
)
from .segmenter import SegmentedInterview, segment_interview
from .synth import OraclePolicy, SynthSpec, generate_corpus
from .transcript import Corpus, load_corpus, write_corpus

log = logging.getLogger("madrs_assess")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
MOCK_MODEL = "mock-oracle"


@dataclass
class RunConfig:
    corpus: str | None = None
    backend: str = "mock"
    model: str | None = None
    variant: str = PromptVariant.ALL_CUES.value
    scope: str = ContextScope.SEGMENTED.value
    runs: int = DEFAULT_REPETITIONS
    out: str = "out"
    seed: int = 0
    catalog: str | None = None
    alpha: float = 0.05
    mock_noise: float = 0.0
    max_in_flight: int = 4
    include_age: bool = False
    force: bool = False
    runsets: list[str] = field(default_factory=list)
    compare: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if self.runs < 1:
            raise ConfigError("--runs must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ConfigError("--alpha must be in (0, 1]")
        if not 0 <= self.mock_noise <= 1:
            raise ConfigError("--mock-noise must be in [0, 1]")
        try:
            PromptVariant(self.variant)
            ContextScope(self.scope)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.backend != "mock" and not re.match(r"^https?://", self.backend):
            raise ConfigError(f"--backend must be 'mock' or an http(s) URL, got {self.backend!r}")

    @property
    def model_name(self) -> str:
        return self.model or (MOCK_MODEL if self.backend == "mock" else "qwen2.5-72b-instruct")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def fingerprint(self) -> str:
        keep = {k: v for k, v in asdict(self).items() if k not in ("out", "force", "runsets", "compare")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def runset_path(cfg: RunConfig) -> Path:
    return cfg.out_dir / "runs" / f"{_safe(cfg.model_name)}__{cfg.variant}__{cfg.scope}.jsonl"


def _catalog(cfg: RunConfig) -> Catalog:
    return load_catalog(cfg.catalog) if cfg.catalog else default_catalog()


def make_backend(cfg: RunConfig, catalog: Catalog) -> Backend:
    if cfg.backend == "mock":
        return MockBackend(
            OraclePolicy(catalog, noise=cfg.mock_noise),
            seed=cfg.seed,
            max_in_flight=cfg.max_in_flight,
            model_name=cfg.model_name,
        )
    return RemoteBackend(LlmConfig(endpoint_url=cfg.backend, model_name=cfg.model_name, max_in_flight=cfg.max_in_flight))


def _load_corpus(cfg: RunConfig) -> Corpus:
    if not cfg.corpus:
        raise ConfigError("--corpus is required")
    return load_corpus(cfg.corpus)


def _file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
    for f in files:
        h.update(f.read_bytes())
    return h.hexdigest()


def manifest(cfg: RunConfig, catalog: Catalog, stage: str, **extra) -> dict:
    """Everything needed to re-run a stage; no timestamps so reruns are byte-identical."""
    doc = {
        "stage": stage,
        "code_version": __version__,
        "catalog": catalog.stamp,
        "config_sha256": cfg.fingerprint(),
        "config": {k: v for k, v in asdict(cfg).items() if k not in ("force",)},
        "corpus_sha256": _file_sha256(cfg.corpus) if cfg.corpus else None,
    }
    doc.update(extra)
    return doc


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _write_json(path: Path, doc) -> Path:
    return _write(path, json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def cmd_segment(cfg: RunConfig) -> int:
    catalog = _catalog(cfg)
    corpus = _load_corpus(cfg)
    seg_dir = cfg.out_dir / "segments"
    if seg_dir.exists() and any(seg_dir.iterdir()):
        if not cfg.force:
            raise ConfigError(f"{seg_dir} already holds segments; pass --force to overwrite")
        shutil.rmtree(seg_dir)
    backend = make_backend(cfg, catalog)
    summary: dict[str, dict] = {}
    for t in corpus:
        try:
            seg = segment_interview(t, backend, catalog, seed=cfg.seed)
        except NoClinicianSpeech as exc:
            summary[t.interview_id] = {"error": f"NoClinicianSpeech: {exc}"}
            log.error("%s: %s", t.interview_id, exc)
            continue
        seg.save(seg_dir / f"{_safe(t.interview_id)}.json")
        summary[t.interview_id] = {
            "n_pairs": seg.n_pairs,
            "mapped_fraction": seg.mapped_fraction,
            "unmapped": len(seg.unmapped),
            "failed_classifications": sum(1 for p in seg.unmapped if p.note and p.note != "preamble"),
            "error": None,
        }
    fractions = [v["mapped_fraction"] for v in summary.values() if v.get("error") is None]
    doc = {
        "manifest": manifest(cfg, catalog, "segment", model=backend_name(backend)),
        "interviews": summary,
        "mean_mapped_fraction": sum(fractions) / len(fractions) if fractions else None,
    }
    _write_json(seg_dir / "summary.json", doc)
    n_err = sum(1 for v in summary.values() if v.get("error"))
    print(f"segmented {len(corpus) - n_err}/{len(corpus)} interviews; "
          f"mean mapped fraction {doc['mean_mapped_fraction'] if fractions else float('nan'):.3f}")
    partial = n_err or any(v.get("failed_classifications") for v in summary.values())
    return EXIT_PARTIAL if partial else EXIT_OK


def load_segments(cfg: RunConfig) -> tuple[dict[str, SegmentedInterview], set[str]]:
    """Segments on disk and the ids the segment stage recorded as failed."""
    seg_dir = cfg.out_dir / "segments"
    summary_path = seg_dir / "summary.json"
    if not summary_path.exists():
        raise ConfigError(
            f"no segments under {seg_dir}; run `madrs-assess segment` with the same --corpus and --out first"
        )
    summary = json.loads(summary_path.read_text(encoding="utf-8"))["interviews"]
    segs = {}
    for p in sorted(seg_dir.glob("*.json")):
        if p.name == "summary.json":
            continue
        s = SegmentedInterview.load(p)
        segs[s.interview_id] = s
    failed = {iid for iid, v in summary.items() if v.get("error")}
    return segs, failed


def cmd_assess(cfg: RunConfig) -> int:
    catalog = _catalog(cfg)
    corpus = _load_corpus(cfg)
    variant, scope = PromptVariant(cfg.variant), ContextScope(cfg.scope)
    segments, skipped = None, set()
    if scope is ContextScope.SEGMENTED:
        segments, failed = load_segments(cfg)
        skipped = {t.interview_id for t in corpus if t.interview_id in failed}
        missing = [t.interview_id for t in corpus if t.interview_id not in segments and t.interview_id not in failed]
        if missing:
            raise ConfigError(
                f"no segments for {len(missing)} interview(s) (e.g. {missing[0]}); "
                "re-run `madrs-assess segment --force`"
            )
        if skipped:
            log.error("skipping %d interview(s) that failed segmentation", len(skipped))
            keep = tuple(t for t in corpus if t.interview_id not in skipped)
            if not keep:
                raise ConfigError("every interview failed segmentation")
            corpus = Corpus(keep, corpus.source_path)
    path = runset_path(cfg)
    if cfg.force and path.exists():
        path.unlink()
    backend = make_backend(cfg, catalog)
    store = RunStore(path)
    rs = assess_corpus(corpus, variant, scope, backend, cfg.runs, segments, catalog, cfg.seed, store)
    rs.save(path)
    failures = rs.failures()
    _write_json(path.with_suffix(".manifest.json"), manifest(
        cfg, catalog, "assess", model=rs.model, runset=path.name,
        n_records=len(rs.to_records()), n_failures=len(failures), skipped=sorted(skipped),
    ))
    print(f"{path}: {len(rs.runs)} runs, {len(failures)} failed items")
    return EXIT_PARTIAL if failures or skipped else EXIT_OK


def _runset_paths(cfg: RunConfig) -> list[Path]:
    paths = [Path(p) for p in cfg.runsets] or [runset_path(cfg)]
    for p in paths:
        if not p.exists():
            raise ConfigError(f"run set {p} not found; run `madrs-assess assess` first")
    return paths


def cmd_evaluate(cfg: RunConfig) -> int:
    catalog = _catalog(cfg)
    corpus = _load_corpus(cfg)
    reports_dir = cfg.out_dir / "reports"
    partial = False
    by_name = {}
    for path in _runset_paths(cfg):
        rs = RunSet.load(path)
        reports = evaluate_runset(corpus, rs)
        name = path.stem
        by_name[name] = reports
        d = reports_dir / name
        _write(d / "metrics.txt", metrics_table(reports))
        _write(d / "metrics.json", metrics_json(reports))
        _write(d / "metrics.csv", metrics_csv(reports))
        self_icc = {}
        for target in [i.value for i in ITEMS] + [TOTAL]:
            try:
                self_icc[target] = icc_across_runs(rs, target) if len(rs.run_indices) > 1 else math.nan
            except MadrsError:
                self_icc[target] = math.nan
        _write(d / "icc.txt", icc_reference_table(reports, self_icc))
        _write_json(d / "manifest.json", manifest(cfg, catalog, "evaluate", runset=path.name,
                                                  runset_sha256=_file_sha256(path)))
        partial |= any(r.coverage < 1 for r in reports.values())
        print(f"{d}/metrics.txt")
        print(metrics_table(reports), end="")
    if len(by_name) > 1:
        _write(reports_dir / "comparison_mae.txt", comparison_table(by_name, "mae"))
        _write(reports_dir / "comparison_icc.txt", comparison_table(by_name, "icc3k"))
    if cfg.compare:
        if len(cfg.compare) != 2:
            raise ConfigError("--compare takes two run sets: FULL SEGMENTED")
        full, seg = (RunSet.load(p) for p in cfg.compare)
        if full.scope is not ContextScope.FULL_TRANSCRIPT or seg.scope is not ContextScope.SEGMENTED:
            raise ConfigError("--compare expects a full-transcript run set then a segmented one")
        out = _write(reports_dir / "scope_comparison.csv", scope_comparison_csv(scope_comparison(corpus, full, seg)))
        print(out)
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_analyze_errors(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg)
    catalog = _catalog(cfg)
    partial = False
    for path in _runset_paths(cfg):
        rs = RunSet.load(path)
        obs = {
            target: observations_from_runset(corpus, rs, target)
            for target in [i.value for i in ITEMS] + [TOTAL]
        }
        results = analyze_errors(obs, include_age=cfg.include_age)
        d = cfg.out_dir / "reports" / path.stem
        text = error_model_table(results, cfg.alpha)
        _write(d / "error_model.txt", text)
        _write(d / "error_model.json", error_model_json(results, cfg.alpha))
        _write_json(d / "error_model.manifest.json", manifest(cfg, catalog, "analyze-errors", runset=path.name,
                                                              runset_sha256=_file_sha256(path)))
        partial |= any(not r.ok for r in results.values())
        print(text, end="")
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_synth(cfg: RunConfig, patients: int, visits: int) -> int:
    if not cfg.corpus:
        raise ConfigError("--corpus names the output file for synth")
    corpus = generate_corpus(SynthSpec(patients, visits, cfg.seed), _catalog(cfg))
    path = write_corpus(corpus, cfg.corpus)
    print(f"wrote {len(corpus)} interviews to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults; flags override it")
    common.add_argument("--corpus", help="corpus JSONL file or directory")
    common.add_argument("--backend", help="'mock' or the base URL of an OpenAI-compatible server")
    common.add_argument("--model", help="model name sent to the endpoint")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--catalog", help="alternative catalog JSON")
    common.add_argument("--mock-noise", type=float, dest="mock_noise",
                        help="probability the mock oracle perturbs a rating by one")
    common.add_argument("--max-in-flight", type=int, dest="max_in_flight")
    common.add_argument("--force", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--variant", choices=[v.value for v in PromptVariant])
    run.add_argument("--scope", choices=[s.value for s in ContextScope])
    run.add_argument("--runs", type=int)

    sets = argparse.ArgumentParser(add_help=False)
    sets.add_argument("--runset", dest="runsets", action="append",
                      help="run set JSONL (repeatable); default derives from model/variant/scope")

    p = argparse.ArgumentParser(prog="madrs-assess", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("segment", parents=[common], help="classify clinician questions by item")
    sub.add_parser("assess", parents=[common, run], help="score every item R times")
    ev = sub.add_parser("evaluate", parents=[common, run, sets], help="metrics against clinician scores")
    ev.add_argument("--compare", nargs=2, metavar=("FULL", "SEGMENTED"),
                    help="write the per-item full vs segmented MAE comparison CSV")
    ae = sub.add_parser("analyze-errors", parents=[common, run, sets], help="mixed-effects model of errors")
    ae.add_argument("--alpha", type=float)
    ae.add_argument("--include-age", action="store_true", default=None, dest="include_age")
    sy = sub.add_parser("synth", parents=[common], help="write a synthetic labelled corpus")
    sy.add_argument("--patients", type=int, default=20)
    sy.add_argument("--visits", type=int, default=2)
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for k, v in doc.items():
            setattr(cfg, k, v)
    for k in names:
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        if args.command == "segment":
            return cmd_segment(cfg)
        if args.command == "assess":
            return cmd_assess(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "analyze-errors":
            return cmd_analyze_errors(cfg)
        return cmd_synth(cfg, args.patients, args.visits)
    except (ConfigError, CorpusError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
