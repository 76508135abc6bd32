"""Serialization of theorems, references, and proofs into the tagged
prompt/completion formats used for fine-tuning and inference.

Proof example layout (single spaces between tags and slots)::

    <theorem> <title> T </title> <content> C </content> </theorem>
    <ref> R1 </ref> ... <ref> Rn </ref> <proof>            (prompt)
    {proof} </proof>                                        (completion)

Reference reconstruction layout::

    <{type}> <title> T </title> <content>                   (prompt)
    {content} </content> </{type}>                          (completion)

Theorem/reference content keeps its internal newlines; proof steps are
joined with the engine's blank-line step separator.  Exact bytes are pinned
by golden-file tests.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .corpus import STEP_SEPARATOR, Corpus, ProofDocument, ProofStep, Reference

PROOF_OPEN = "<proof>"
PROOF_END = "</proof>"


class PromptError(Exception):
    pass


class PromptBudgetError(PromptError):
    pass


class EmitError(Exception):
    pass


class KnowledgeSetting(str, Enum):
    NONE = "none"
    RETRIEVED = "retrieved"
    PROVIDED = "provided"


class RecordKind(str, Enum):
    PROOF_EXAMPLE = "proof_example"
    RECONSTRUCTION = "reconstruction"


@dataclass(frozen=True)
class FinetuneRecord:
    prompt: str
    completion: str
    record_kind: RecordKind


@dataclass(frozen=True)
class PromptBudgets:
    max_prompt_tokens: int = 1024
    max_full_proof_tokens: int = 1020
    max_history_tokens: int = 900
    max_step_tokens: int = 120

    def __post_init__(self) -> None:
        for name in ("max_prompt_tokens", "max_full_proof_tokens", "max_history_tokens", "max_step_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


TokenCounter = Callable[[str], int]


def serialize_proof(proof: ProofDocument | Sequence[ProofStep], separator: str = STEP_SEPARATOR) -> str:
    steps = proof.steps if isinstance(proof, ProofDocument) else tuple(proof)
    return separator.join(s.raw for s in steps)


def _join_nonempty(parts: Sequence[str]) -> str:
    return " ".join(p for p in parts if p)


def _theorem_block(theorem: Reference, content: str | None = None) -> str:
    if content is None:
        content = "\n".join(theorem.content)
    return _join_nonempty(
        ["<theorem>", "<title>", theorem.title, "</title>", "<content>", content, "</content>", "</theorem>"]
    )


def render_proof_example(theorem: Reference, ref_titles: Sequence[str], proof: ProofDocument) -> FinetuneRecord:
    """Theorem, reference titles, and gold proof as one training record;
    empty ``ref_titles`` omits the ref blocks."""
    parts = [_theorem_block(theorem)]
    for title in ref_titles:
        parts.append(_join_nonempty(["<ref>", title, "</ref>"]))
    parts.append(PROOF_OPEN)
    prompt = " ".join(parts)
    completion = " " + _join_nonempty([serialize_proof(proof), PROOF_END])
    return FinetuneRecord(prompt, completion, RecordKind.PROOF_EXAMPLE)


def render_reconstruction(reference: Reference) -> FinetuneRecord:
    """Title-to-content reconstruction record for one reference page."""
    tag = reference.kind.value
    prompt = _join_nonempty([f"<{tag}>", "<title>", reference.title, "</title>", "<content>"])
    content = "\n".join(reference.content)
    completion = " " + _join_nonempty([content, "</content>", f"</{tag}>"])
    return FinetuneRecord(prompt, completion, RecordKind.RECONSTRUCTION)


_TITLE_RE = re.compile(r"<title> (.*?) </title>", re.S)
_CONTENT_RE = re.compile(r"<content> ?(.*?) ?</content>", re.S)
_REF_RE = re.compile(r"<ref> (.*?) </ref>", re.S)
_OPEN_TAG_RE = re.compile(r"^<(\w+)>")


def parse_finetune_record(text: str) -> dict:
    """Re-parse a concatenated prompt+completion back into its fields
    (inverse of the renderers; used by round-trip tests and tooling)."""
    m = _OPEN_TAG_RE.match(text)
    if not m:
        raise PromptError("record does not start with an open tag")
    tag = m.group(1)
    title_m = _TITLE_RE.search(text)
    content_m = _CONTENT_RE.search(text)
    if not title_m or not content_m:
        raise PromptError("record is missing title/content slots")
    out: dict = {"type": tag, "title": title_m.group(1), "content": content_m.group(1)}
    if tag == "theorem" and PROOF_OPEN in text:
        body_end = text.index(PROOF_OPEN)
        out["ref_titles"] = _REF_RE.findall(text[:body_end])
        proof_part = text[body_end + len(PROOF_OPEN) :]
        if not proof_part.rstrip().endswith(PROOF_END):
            raise PromptError("proof slot is not closed")
        out["proof"] = proof_part.rstrip()[: -len(PROOF_END)].strip()
        out["record_kind"] = RecordKind.PROOF_EXAMPLE
    else:
        out["record_kind"] = RecordKind.RECONSTRUCTION
    return out


def emit_finetune_file(
    corpus: Corpus,
    setting: KnowledgeSetting,
    retrievals: Mapping[int, Sequence[str]] | None,
    out: str | Path,
) -> int:
    """Write fine-tuning records for the train split as JSONL; returns the
    record count.

    ``none``: one proof example per train example, no ref blocks and no
    reconstructions.  ``provided``: gold in-context titles (first-mention
    order) plus one reconstruction per corpus reference.  ``retrieved``:
    top-20 retrieved titles per theorem plus the same reconstructions.
    """
    setting = KnowledgeSetting(setting)
    train = corpus.examples_in_split("train")
    if setting is KnowledgeSetting.RETRIEVED:
        if retrievals is None:
            raise EmitError("setting=retrieved requires a retrievals table")
        uncovered = sorted({tid for tid, _ in train} - set(retrievals))
        if uncovered:
            raise EmitError(f"retrievals missing for train theorems: {uncovered}")

    records: list[FinetuneRecord] = []
    for theorem_id, proof in train:
        theorem = corpus.by_id[theorem_id]
        if setting is KnowledgeSetting.NONE:
            titles: Sequence[str] = []
        elif setting is KnowledgeSetting.PROVIDED:
            titles = proof.titles_in_mention_order()
        else:
            titles = list(retrievals[theorem_id])[:20]
        records.append(render_proof_example(theorem, titles, proof))
    if setting is not KnowledgeSetting.NONE:
        for key in sorted(corpus.references):
            records.append(render_reconstruction(corpus.references[key]))

    out = Path(out)
    with out.open("w") as fh:
        for rec in records:
            fh.write(json.dumps({"prompt": rec.prompt, "completion": rec.completion}) + "\n")
    return len(records)


def _count_pieces(text: str) -> list[tuple[int, int]]:
    """Spans of whitespace-delimited pieces, for tail truncation."""
    return [m.span() for m in re.finditer(r"\S+", text)]


def _truncate_tail(text: str, budget: int, count: TokenCounter) -> str | None:
    """Longest prefix of ``text`` (cut at whitespace-piece boundaries) whose
    token count fits ``budget``; None when even the empty prefix is needed."""
    if count(text) <= budget:
        return text
    spans = _count_pieces(text)
    lo, hi = 0, len(spans)  # number of pieces kept
    while lo < hi:
        mid = (lo + hi + 1) // 2
        candidate = text[: spans[mid - 1][1]]
        if count(candidate) <= budget:
            lo = mid
        else:
            hi = mid - 1
    if lo == 0:
        return None
    return text[: spans[lo - 1][1]]


def render_inference_prompt(
    theorem: Reference,
    ref_titles: Sequence[str],
    proof_so_far: Sequence[ProofStep] | None,
    budgets: PromptBudgets,
    token_counter: TokenCounter,
    step_separator: str = STEP_SEPARATOR,
) -> str:
    """Build the generation prompt through ``<proof>`` within
    ``max_prompt_tokens`` (dropping trailing ref blocks first, then theorem
    content from its tail), then append the most recent whole steps of
    ``proof_so_far`` within ``max_history_tokens``, ending at a step boundary.
    """

    def assemble(titles: Sequence[str], content: str) -> str:
        parts = [_theorem_block(theorem, content)]
        for t in titles:
            parts.append(_join_nonempty(["<ref>", t, "</ref>"]))
        parts.append(PROOF_OPEN)
        return " ".join(parts)

    content = "\n".join(theorem.content)
    titles = list(ref_titles)
    prompt = assemble(titles, content)
    while token_counter(prompt) > budgets.max_prompt_tokens and titles:
        titles.pop()
        prompt = assemble(titles, content)
    if token_counter(prompt) > budgets.max_prompt_tokens:
        # No refs left; cut theorem content from its tail.
        overhead = token_counter(assemble([], ""))
        if overhead > budgets.max_prompt_tokens:
            raise PromptBudgetError(
                f"prompt skeleton for theorem {theorem.title!r} needs {overhead} tokens; "
                f"budget is {budgets.max_prompt_tokens}"
            )
        kept = _truncate_tail(content, budgets.max_prompt_tokens - overhead, token_counter)
        prompt = assemble([], kept or "")
        # The piece-count search bounds content tokens, but joining words can
        # merge counts differently under exotic tokenizers; re-verify and
        # back off piece by piece if needed.
        while token_counter(prompt) > budgets.max_prompt_tokens and kept:
            spans = _count_pieces(kept)
            kept = kept[: spans[-2][1]] if len(spans) > 1 else ""
            prompt = assemble([], kept)
        if token_counter(prompt) > budgets.max_prompt_tokens:
            raise PromptBudgetError(
                f"theorem {theorem.title!r} does not fit max_prompt_tokens={budgets.max_prompt_tokens}"
            )

    if not proof_so_far:
        return prompt

    steps = list(proof_so_far)
    while steps:
        history = "".join(s.raw + step_separator for s in steps)
        if token_counter(history) <= budgets.max_history_tokens:
            return prompt + " " + history
        steps.pop(0)  # drop the oldest whole step
    return prompt
