"""Experiment harness: run configurations, full-proof and next-step
evaluation loops, retrieval loading, human-annotation aggregation, and
automatic/human metric correlation.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Corpus, normalize_title, parse_mentions
from .decoder import DecodeConfig, DecodeError, DecodeMode, decode
from .lmbackend import Backend, BackendError, SampleRequest
from .metrics import (
    METRIC_NAMES,
    MetricReport,
    UndefinedCorrelationError,
    best_of_k,
    mean_report,
    pearson,
    score_proof,
    score_step,
)
from .promptgen import PROOF_END, KnowledgeSetting, render_inference_prompt

logger = logging.getLogger(__name__)

RETRIEVAL_DEPTH = 20


class ConfigError(Exception):
    pass


class RunError(Exception):
    pass


class AnnotationError(Exception):
    pass


class Task(str, Enum):
    FULL_PROOF = "full_proof"
    NEXT_STEP = "next_step"


_CONSTRAINED_STEPWISE = (DecodeMode.STEPWISE, DecodeMode.STEPWISEPP)


@dataclass
class ExperimentConfig:
    setting: KnowledgeSetting = KnowledgeSetting.PROVIDED
    task: Task = Task.FULL_PROOF
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    split: str = "test"
    theorem_filter: list[int] | None = None
    retrievals_path: str | None = None
    suggestions_k: int = 10
    seed: int = 0
    max_steps_per_proof: int | None = None

    def __post_init__(self) -> None:
        self.setting = KnowledgeSetting(self.setting)
        self.task = Task(self.task)
        if self.suggestions_k < 1:
            raise ConfigError("suggestions_k must be >= 1")
        if self.setting is KnowledgeSetting.RETRIEVED and not self.retrievals_path:
            raise ConfigError("setting=retrieved requires retrievals_path")
        if self.decode.mode in _CONSTRAINED_STEPWISE:
            # Stepwise constrained decoding is built for multi-step proofs
            # with trusted constraints: retrieved titles are too noisy and
            # next-step prediction has no multi-step search to run.
            if self.setting is KnowledgeSetting.RETRIEVED:
                raise ConfigError("stepwise decoding modes cannot run with setting=retrieved")
            if self.task is Task.NEXT_STEP:
                raise ConfigError("stepwise decoding modes cannot run with task=next_step")

    def to_dict(self) -> dict:
        return {
            "setting": self.setting.value,
            "task": self.task.value,
            "decode": self.decode.to_dict(),
            "split": self.split,
            "theorem_filter": self.theorem_filter,
            "retrievals_path": self.retrievals_path,
            "suggestions_k": self.suggestions_k,
            "seed": self.seed,
            "max_steps_per_proof": self.max_steps_per_proof,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        kwargs = dict(data)
        if "decode" in kwargs and isinstance(kwargs["decode"], Mapping):
            kwargs["decode"] = DecodeConfig.from_dict(dict(kwargs["decode"]))
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


def load_retrievals(path: str | Path, corpus: Corpus | None = None) -> dict[int, list[str]]:
    """Load a JSON map of theorem_id -> ranked retrieved titles.

    The stored ranking is preserved exactly; duplicates are dropped keeping
    the first occurrence (with a warning), short lists and theorem ids
    unknown to ``corpus`` warn as well.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RunError(f"cannot read retrievals {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise RunError("retrievals file must be a JSON object of theorem_id -> titles")
    out: dict[int, list[str]] = {}
    for key, titles in data.items():
        try:
            tid = int(key)
        except ValueError as exc:
            raise RunError(f"retrievals key {key!r} is not a theorem id") from exc
        if not isinstance(titles, list) or not all(isinstance(t, str) for t in titles):
            raise RunError(f"retrievals for theorem {tid} must be a list of titles")
        seen: list[str] = []
        dupes = 0
        for t in titles:
            if t in seen:
                dupes += 1
                continue
            seen.append(t)
        if dupes:
            logger.warning("retrievals for theorem %d: dropped %d duplicate titles", tid, dupes)
        if len(seen) < RETRIEVAL_DEPTH:
            logger.warning("retrievals for theorem %d list only %d titles", tid, len(seen))
        if corpus is not None and tid not in corpus.by_id:
            logger.warning("retrievals list unknown theorem id %d", tid)
        out[tid] = seen
    return out


@dataclass
class ItemResult:
    theorem_id: int
    step_index: int | None
    text: str
    report: MetricReport
    trace: dict

    def to_dict(self) -> dict:
        return {
            "theorem_id": self.theorem_id,
            "step_index": self.step_index,
            "text": self.text,
            "metrics": self.report.to_dict(),
            "trace": self.trace,
        }


@dataclass
class RunReport:
    task: str
    items: list[ItemResult]
    means: MetricReport
    failures: list[tuple[int, str]]
    attempted: int
    config: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "items": [r.to_dict() for r in self.items],
            "means": self.means.to_dict(),
            "scored": len(self.items),
            "attempted": self.attempted,
            "failures": [{"theorem_id": tid, "error": msg} for tid, msg in self.failures],
            "config": self.config,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def means_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "mean"])
        for name in METRIC_NAMES:
            writer.writerow([name, repr(getattr(self.means, name))])
        writer.writerow(["scored", len(self.items)])
        return buf.getvalue()


def _select_items(config: ExperimentConfig, corpus: Corpus) -> list[tuple[int, object]]:
    items = corpus.examples_in_split(config.split)
    if config.theorem_filter is not None:
        wanted = set(config.theorem_filter)
        items = [(tid, doc) for tid, doc in items if tid in wanted]
    return items


def _constraint_titles(
    config: ExperimentConfig,
    corpus: Corpus,
    theorem_id: int,
    gold,
    retrievals: Mapping[int, Sequence[str]] | None,
) -> list[str]:
    if config.setting is KnowledgeSetting.PROVIDED:
        return gold.titles_in_mention_order()
    if config.setting is KnowledgeSetting.RETRIEVED:
        assert retrievals is not None
        if theorem_id not in retrievals:
            raise RunError(f"no retrievals stored for theorem {theorem_id}")
        return list(retrievals[theorem_id])[:RETRIEVAL_DEPTH]
    return []


def run_full_proof(config: ExperimentConfig, corpus: Corpus, backend: Backend) -> RunReport:
    """Decode one proof per gold example in the split and score it."""
    if config.task is not Task.FULL_PROOF:
        raise ConfigError("run_full_proof requires task=full_proof")
    retrievals = (
        load_retrievals(config.retrievals_path, corpus)
        if config.setting is KnowledgeSetting.RETRIEVED
        else None
    )
    items = _select_items(config, corpus)
    results: list[ItemResult] = []
    failures: list[tuple[int, str]] = []
    for theorem_id, gold in items:
        theorem = corpus.by_id[theorem_id]
        try:
            titles = _constraint_titles(config, corpus, theorem_id, gold, retrievals)
            candidate, trace = decode(theorem, titles, backend, config.decode)
        except (DecodeError, BackendError, RunError) as exc:
            logger.warning("theorem %d failed: %s", theorem_id, exc)
            failures.append((theorem_id, str(exc)))
            continue
        text = candidate.text(config.decode.step_separator)
        results.append(ItemResult(theorem_id, None, text, score_proof(text, gold, corpus), trace.summary()))
    if items and len(failures) > len(items) / 2:
        raise RunError(f"more than half of the run failed ({len(failures)}/{len(items)}): {failures[:5]}")
    return RunReport(
        task=config.task.value,
        items=results,
        means=mean_report([r.report for r in results]),
        failures=failures,
        attempted=len(items),
        config=config.to_dict(),
        seed=config.seed,
    )


def _clean_step_text(text: str) -> str:
    idx = text.find(PROOF_END)
    if idx != -1:
        text = text[:idx]
    return text.strip()


def run_next_step(config: ExperimentConfig, corpus: Corpus, backend: Backend) -> RunReport:
    """For every gold proof prefix, sample ``suggestions_k`` next-step
    candidates, keep the best by metric sum against the gold step, and
    aggregate the kept reports."""
    if config.task is not Task.NEXT_STEP:
        raise ConfigError("run_next_step requires task=next_step")
    retrievals = (
        load_retrievals(config.retrievals_path, corpus)
        if config.setting is KnowledgeSetting.RETRIEVED
        else None
    )
    items = _select_items(config, corpus)
    results: list[ItemResult] = []
    failures: list[tuple[int, str]] = []
    budgets = config.decode.budgets
    for theorem_id, gold in items:
        theorem = corpus.by_id[theorem_id]
        try:
            titles = _constraint_titles(config, corpus, theorem_id, gold, retrievals)
        except RunError as exc:
            failures.append((theorem_id, str(exc)))
            continue
        step_count = len(gold.steps)
        if config.max_steps_per_proof is not None:
            step_count = min(step_count, config.max_steps_per_proof)
        failed = False
        for t in range(step_count):
            history = list(gold.steps[:t]) or None
            prompt = render_inference_prompt(
                theorem, titles, history, budgets, backend.count_tokens, config.decode.step_separator
            )
            request = SampleRequest(
                prompt=prompt,
                temperature=config.decode.rerank_temperature,
                n=config.suggestions_k,
                max_tokens=budgets.max_step_tokens,
                stop_sequences=(config.decode.step_separator,),
            )
            try:
                samples = backend.sample(request, stream_key=(theorem_id, t))
            except BackendError as exc:
                logger.warning("theorem %d step %d failed: %s", theorem_id, t, exc)
                failures.append((theorem_id, f"step {t}: {exc}"))
                failed = True
                break
            candidates = [
                (text, score_step(text, gold.steps[t], corpus))
                for text in (_clean_step_text(s.text) for s in samples)
            ]
            pick = best_of_k(candidates)
            text, report = candidates[pick]
            results.append(
                ItemResult(
                    theorem_id,
                    t,
                    text,
                    report,
                    {"candidates": len(candidates), "picked": pick, "cost": sum(s.token_count for s in samples)},
                )
            )
        if failed:
            continue
    if items and len(failures) > len(items) / 2:
        raise RunError(f"more than half of the run failed ({len(failures)}/{len(items)})")
    return RunReport(
        task=config.task.value,
        items=results,
        means=mean_report([r.report for r in results]),
        failures=failures,
        attempted=len(items),
        config=config.to_dict(),
        seed=config.seed,
    )


def run(config: ExperimentConfig, corpus: Corpus, backend: Backend) -> RunReport:
    if config.task is Task.NEXT_STEP:
        return run_next_step(config, corpus, backend)
    return run_full_proof(config, corpus, backend)


def suggest_next_steps(
    theorem,
    constraint_titles: Sequence[str],
    history_steps: Sequence,
    backend: Backend,
    decode_config: DecodeConfig,
    k: int,
    temperature: float | None = None,
    seed: int = 0,
    stream_label=None,
) -> tuple[list[dict], int]:
    """Sample ``k`` next-step candidates for an in-progress proof and rank
    them (descending logprob, then text).  Duplicate texts collapse to the
    highest-logprob draw, so at most ``k`` suggestions come back; the second
    element is the total sampled token cost.

    Each suggestion dict carries text, logprob, terminated (the model closed
    the proof), and the constraint titles covered by history + suggestion.
    """
    separator = decode_config.step_separator
    budgets = decode_config.budgets
    if temperature is None:
        temperature = decode_config.rerank_temperature
    prompt = render_inference_prompt(
        theorem, constraint_titles, list(history_steps) or None, budgets, backend.count_tokens, separator
    )
    request = SampleRequest(
        prompt=prompt,
        temperature=temperature,
        n=k,
        max_tokens=budgets.max_step_tokens,
        stop_sequences=(separator,),
    )
    label = stream_label if stream_label is not None else getattr(theorem, "id", 0)
    samples = backend.sample(request, stream_key=("suggest", seed, label, len(history_steps)))
    best: dict[str, tuple[float, bool]] = {}
    for s in samples:
        terminated = PROOF_END in s.text or s.truncated_by.value == "end"
        text = _clean_step_text(s.text)
        if text in best and best[text][0] >= s.logprob:
            continue
        best[text] = (s.logprob, terminated)
    history_texts = [getattr(s, "raw", s) for s in history_steps]
    suggestions = [
        {
            "text": text,
            "logprob": logprob,
            "terminated": terminated,
            "covered_titles": covered_constraints(history_texts + [text], constraint_titles),
        }
        for text, (logprob, terminated) in sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    ]
    return suggestions, sum(s.token_count for s in samples)


def covered_constraints(texts: Sequence[str], constraint_titles: Sequence[str]) -> list[str]:
    """Constraint titles mentioned anywhere in ``texts``, in constraint-list
    order, compared on normalized titles."""
    mentioned = {m.page_title for text in texts for m in parse_mentions(text)}
    out: list[str] = []
    seen: set[str] = set()
    for title in constraint_titles:
        norm = normalize_title(title)
        if norm in mentioned and norm not in seen:
            seen.add(norm)
            out.append(title)
    return out


# ---------------------------------------------------------------------------
# Human annotations
# ---------------------------------------------------------------------------

ERROR_BUCKETS: dict[str, tuple[str, ...]] = {
    "reference": ("invalid_deployment", "invalid_justification", "hallucinated_ref", "self_loop"),
    "equation": ("invalid_equation", "invalid_derivation"),
    "other_reasoning": ("skips_steps", "repetition", "invalid_other"),
    "language": ("incomplete", "misformatted_math", "unknown_symbol"),
    "symbolic": ("undefined", "overloaded", "mistyped", "unconventional"),
}

FINE_ERRORS: tuple[str, ...] = tuple(e for bucket in ERROR_BUCKETS.values() for e in bucket)

CORRECT_THRESHOLD = 4  # overall rating needed to count as correct
USEFUL_THRESHOLD = 3  # overall rating needed to count as useful


class StepCorrectness(str, Enum):
    YES = "yes"
    NO = "no"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class AnnotationRecord:
    theorem_id: int
    step_index: int
    fine_grained_errors: frozenset[str]
    step_correct: StepCorrectness
    step_useful: bool
    overall_correct: int
    overall_useful: int

    def __post_init__(self) -> None:
        unknown = set(self.fine_grained_errors) - set(FINE_ERRORS)
        if unknown:
            raise AnnotationError(f"unknown fine-grained errors: {sorted(unknown)}")
        for name in ("overall_correct", "overall_useful"):
            value = getattr(self, name)
            if not 0 <= value <= 5:
                raise AnnotationError(f"{name} must be in 0..5, got {value}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "AnnotationRecord":
        try:
            return cls(
                theorem_id=int(data["theorem_id"]),
                step_index=int(data["step_index"]),
                fine_grained_errors=frozenset(data.get("fine_grained_errors", [])),
                step_correct=StepCorrectness(data["step_correct"]),
                step_useful=bool(data["step_useful"]),
                overall_correct=int(data["overall_correct"]),
                overall_useful=int(data["overall_useful"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise AnnotationError(f"malformed annotation record: {exc}") from exc


@dataclass
class AggregateReport:
    count: int
    empty: bool
    fine_rates: dict[str, float]
    bucket_rates: dict[str, float]
    step_correct_rate: float
    step_useful_rate: float
    overall_correct_rate: float
    overall_useful_rate: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "empty": self.empty,
            "fine_rates": self.fine_rates,
            "bucket_rates": self.bucket_rates,
            "step_correct_rate": self.step_correct_rate,
            "step_useful_rate": self.step_useful_rate,
            "overall_correct_rate": self.overall_correct_rate,
            "overall_useful_rate": self.overall_useful_rate,
        }

    def human_metrics(self) -> dict[str, float]:
        out = {f"error_{name}": rate for name, rate in self.bucket_rates.items()}
        out["step_correct_rate"] = self.step_correct_rate
        out["step_useful_rate"] = self.step_useful_rate
        out["overall_correct_rate"] = self.overall_correct_rate
        out["overall_useful_rate"] = self.overall_useful_rate
        return out


def aggregate_annotations(
    records: Sequence[AnnotationRecord],
    correct_threshold: int = CORRECT_THRESHOLD,
    useful_threshold: int = USEFUL_THRESHOLD,
) -> AggregateReport:
    """Per-error and per-bucket rates (a step hits a bucket when it carries
    any of the bucket's errors), step-level correctness/usefulness rates, and
    overall correct/useful rates at the rating thresholds."""
    n = len(records)
    if n == 0:
        return AggregateReport(
            count=0,
            empty=True,
            fine_rates={e: 0.0 for e in FINE_ERRORS},
            bucket_rates={b: 0.0 for b in ERROR_BUCKETS},
            step_correct_rate=0.0,
            step_useful_rate=0.0,
            overall_correct_rate=0.0,
            overall_useful_rate=0.0,
        )
    fine_rates = {e: sum(1 for r in records if e in r.fine_grained_errors) / n for e in FINE_ERRORS}
    bucket_rates = {
        bucket: sum(1 for r in records if set(errors) & r.fine_grained_errors) / n
        for bucket, errors in ERROR_BUCKETS.items()
    }
    return AggregateReport(
        count=n,
        empty=False,
        fine_rates=fine_rates,
        bucket_rates=bucket_rates,
        step_correct_rate=sum(1 for r in records if r.step_correct is StepCorrectness.YES) / n,
        step_useful_rate=sum(1 for r in records if r.step_useful) / n,
        overall_correct_rate=sum(1 for r in records if r.overall_correct >= correct_threshold) / n,
        overall_useful_rate=sum(1 for r in records if r.overall_useful >= useful_threshold) / n,
    )


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(AnnotationRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"invalid JSON on line {lineno}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# Correlation of automatic metrics with human judgments
# ---------------------------------------------------------------------------

# Error-flavored series are negated before correlating so that a positive r
# always means "automatic metric agrees with human quality".
_NEGATED_AUTOMATIC = {"halluc"}
_NEGATED_HUMAN_PREFIX = "error_"


@dataclass
class CorrelationMatrix:
    labels: list[str]
    cells: dict[str, dict[str, float | None]]
    notes: dict[str, str]

    def to_dict(self) -> dict:
        return {"labels": self.labels, "cells": self.cells, "notes": self.notes}


def correlate(
    run_reports: Sequence[tuple[str, RunReport]],
    aggregates: Sequence[tuple[str, AggregateReport]],
) -> CorrelationMatrix:
    """Pearson r between every automatic-metric mean and every human metric
    across matched labels; cells with <2 settings or zero variance hold None
    with a reason in ``notes``."""
    agg_by_label = dict(aggregates)
    labels = [label for label, _ in run_reports if label in agg_by_label]
    matched = [(label, report, agg_by_label[label]) for label, report in run_reports if label in agg_by_label]
    human_names = list(matched[0][2].human_metrics().keys()) if matched else []
    cells: dict[str, dict[str, float | None]] = {}
    notes: dict[str, str] = {}
    for auto in METRIC_NAMES:
        auto_sign = -1.0 if auto in _NEGATED_AUTOMATIC else 1.0
        xs = [auto_sign * getattr(report.means, auto) for _, report, _ in matched]
        cells[auto] = {}
        for human in human_names:
            human_sign = -1.0 if human.startswith(_NEGATED_HUMAN_PREFIX) else 1.0
            ys = [human_sign * agg.human_metrics()[human] for _, _, agg in matched]
            if len(matched) < 2:
                cells[auto][human] = None
                notes[f"{auto}/{human}"] = "fewer than 2 matched settings"
                continue
            try:
                cells[auto][human] = pearson(xs, ys)
            except UndefinedCorrelationError as exc:
                cells[auto][human] = None
                notes[f"{auto}/{human}"] = str(exc)
    return CorrelationMatrix(labels=labels, cells=cells, notes=notes)
