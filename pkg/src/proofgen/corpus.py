"""Proof corpus: wiki-link mention parsing, proof step segmentation, text
normalization, and loading of the JSON interchange format.

Conventions used throughout the engine:

* Page titles are compared after ``normalize_title`` (underscores to spaces,
  whitespace collapsed, case preserved); namespace prefixes such as
  ``Definition:`` are part of a page's identity.
* Proof steps are separated by a blank line (``STEP_SEPARATOR``); lines inside
  a step by single newlines.  ``segment_proof`` is a fixpoint under re-joining
  steps with the separator and re-segmenting.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

STEP_SEPARATOR = "\n\n"

_MENTION_RE = re.compile(r"\[\[([^\[\]|\n]+)(?:\|([^\[\]\n]*))?\]\]")
_WS_RE = re.compile(r"\s+")

# Line-merge triggers for segmentation: a line folds into the following one
# when it ends with a colon or when the next line opens display math or a
# template block.
_BLOCK_OPENERS = ("{{", "$$", ":$")


class CorpusError(Exception):
    pass


class CorpusLoadError(CorpusError):
    pass


class DuplicateTitleError(CorpusLoadError):
    pass


class MentionKind(str, Enum):
    DEFINITION = "Definition"
    THEOREM = "Theorem"
    AXIOM = "Axiom"
    OTHER = "Other"


class ReferenceKind(str, Enum):
    THEOREM = "theorem"
    DEFINITION = "definition"
    OTHER = "other"


def normalize_title(title: str) -> str:
    """Canonical page-title form: underscores to spaces, internal whitespace
    collapsed, trimmed.  Case-sensitive; namespace prefixes are kept."""
    return _WS_RE.sub(" ", title.replace("_", " ")).strip()


@dataclass(frozen=True)
class ReferenceMention:
    """One ``[[target|surface]]`` wiki link occurrence.

    ``target_title`` is the raw title text as written (namespace prefix
    stripped for recognized namespaces); ``page_title`` is the normalized
    title the mention resolves against.
    """

    target_kind: MentionKind
    target_title: str
    surface: str
    span: tuple[int, int]
    page_title: str


def _split_target(target: str) -> tuple[MentionKind, str, str]:
    """Return (kind, title_part, resolution_source) for a link target."""
    if ":" in target:
        prefix, rest = target.split(":", 1)
        p = prefix.strip()
        if p == "Definition":
            return MentionKind.DEFINITION, rest, target
        if p == "Axiom":
            return MentionKind.AXIOM, rest, target
        if p == "Theorem":
            # Theorem pages live in the main namespace; drop the prefix.
            return MentionKind.THEOREM, rest, rest
        return MentionKind.OTHER, target, target
    return MentionKind.THEOREM, target, target


def scan_mentions(text: str) -> tuple[list[ReferenceMention], list[str]]:
    """Parse all mentions left to right; also report unclosed ``[[`` markers."""
    mentions: list[ReferenceMention] = []
    spans: list[tuple[int, int]] = []
    for m in _MENTION_RE.finditer(text):
        target = m.group(1)
        kind, title_part, source = _split_target(target)
        raw_surface = m.group(2)
        if raw_surface is None:
            surface = target
        else:
            surface = raw_surface.strip()
            if not surface:
                # Pipe trick: [[Definition:Even Integer|]] renders the bare title.
                surface = normalize_title(title_part)
        mentions.append(
            ReferenceMention(
                target_kind=kind,
                target_title=title_part,
                surface=surface,
                span=m.span(),
                page_title=normalize_title(source),
            )
        )
        spans.append(m.span())
    warnings = []
    pos = 0
    while True:
        pos = text.find("[[", pos)
        if pos == -1:
            break
        if not any(a <= pos < b for a, b in spans):
            snippet = text[pos : pos + 40].replace("\n", "\\n")
            warnings.append(f"unclosed mention marker at offset {pos}: {snippet!r}")
        pos += 2
    return mentions, warnings


def parse_mentions(text: str) -> list[ReferenceMention]:
    mentions, warnings = scan_mentions(text)
    for w in warnings:
        logger.warning("%s", w)
    return mentions


def render_mention(mention: ReferenceMention) -> str:
    """Serialize a mention back to ``[[target|surface]]`` wikitext."""
    if mention.target_kind in (MentionKind.DEFINITION, MentionKind.AXIOM):
        target = f"{mention.target_kind.value}:{mention.target_title}"
    else:
        target = mention.target_title
    if mention.surface == target:
        return f"[[{target}]]"
    return f"[[{target}|{mention.surface}]]"


# ---------------------------------------------------------------------------
# Normalization: mentions to surface forms, templates rendered, whitespace
# collapsed.  Output never contains [[, ]], {{ or }}.
# ---------------------------------------------------------------------------

_DELETED_TEMPLATES = {"qed", "begin-eqn", "end-eqn"}
_EQN_KEYS = ("l", "o", "r", "c")


def _replace_mentions(text: str) -> str:
    mentions, _ = scan_mentions(text)
    if not mentions:
        return text
    out = []
    last = 0
    for m in mentions:
        a, b = m.span
        out.append(text[last:a])
        out.append(m.surface)
        last = b
    out.append(text[last:])
    return "".join(out)


def _match_braces(text: str, start: int) -> int | None:
    """Index of the ``}}`` closing the ``{{`` at ``start``, or None."""
    depth = 0
    i = start
    n = len(text)
    while i < n - 1:
        pair = text[i : i + 2]
        if pair == "{{":
            depth += 1
            i += 2
        elif pair == "}}":
            depth -= 1
            if depth == 0:
                return i
            i += 2
        else:
            i += 1
    return None


def _split_top_level(text: str, sep: str) -> list[str]:
    """Split on ``sep`` ignoring occurrences inside nested {{...}}."""
    parts = []
    depth = 0
    current = []
    i = 0
    n = len(text)
    while i < n:
        pair = text[i : i + 2]
        if pair == "{{":
            depth += 1
            current.append(pair)
            i += 2
        elif pair == "}}":
            depth = max(depth - 1, 0)
            current.append(pair)
            i += 2
        elif depth == 0 and text[i] == sep:
            parts.append("".join(current))
            current = []
            i += 1
        else:
            current.append(text[i])
            i += 1
    parts.append("".join(current))
    return parts


def _arg_value(arg: str) -> str:
    if "=" in arg:
        return arg.split("=", 1)[1].strip()
    return arg.strip()


def _render_one_template(inner: str) -> str:
    parts = _split_top_level(inner, "|")
    name = parts[0].strip().lower()
    args = parts[1:]
    if name in _DELETED_TEMPLATES:
        return ""
    if name == "eqn":
        named: dict[str, str] = {}
        for a in args:
            if "=" in a:
                k, v = a.split("=", 1)
                named.setdefault(k.strip().lower(), v.strip())
        values = [_render_templates(named.get(k, "")) for k in _EQN_KEYS]
        return " ".join(v for v in values if v)
    values = [_render_templates(_arg_value(a)) for a in args]
    return " ".join(v for v in values if v)


def _render_templates(text: str) -> str:
    out = []
    i = 0
    while True:
        start = text.find("{{", i)
        if start == -1:
            out.append(text[i:])
            break
        end = _match_braces(text, start)
        out.append(text[i:start])
        if end is None:
            # Unclosed marker: drop it and keep scanning the remainder.
            i = start + 2
            continue
        out.append(_render_one_template(text[start + 2 : end]))
        i = end + 2
    return "".join(out)


def normalize(text: str) -> str:
    """Render wikitext to plain comparison text.

    Mentions keep only their surface form; {{qed}}/{{begin-eqn}}/{{end-eqn}}
    are deleted; {{eqn | l=.. | o=.. | r=.. | c=..}} renders its slot values
    in that order; unknown templates render their argument values joined by
    spaces.  Whitespace is collapsed to single spaces and trimmed.  Idempotent.
    """
    rendered = _render_templates(_replace_mentions(text))
    for marker in ("[[", "]]", "{{", "}}"):
        rendered = rendered.replace(marker, " ")
    return _WS_RE.sub(" ", rendered).strip()


# ---------------------------------------------------------------------------
# Proof structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProofStep:
    lines: tuple[str, ...]
    raw: str
    mentions: tuple[ReferenceMention, ...]

    @classmethod
    def from_lines(cls, lines: list[str] | tuple[str, ...]) -> "ProofStep":
        raw = "\n".join(lines)
        return cls(tuple(lines), raw, tuple(parse_mentions(raw)))

    @classmethod
    def from_raw(cls, raw: str) -> "ProofStep":
        return cls.from_lines(raw.split("\n"))


@dataclass(frozen=True)
class ProofDocument:
    steps: tuple[ProofStep, ...]
    ref_titles: frozenset[str]

    @classmethod
    def from_steps(cls, steps: tuple[ProofStep, ...]) -> "ProofDocument":
        titles = frozenset(m.page_title for s in steps for m in s.mentions)
        return cls(steps, titles)

    def raw_text(self, separator: str = STEP_SEPARATOR) -> str:
        return separator.join(s.raw for s in self.steps)

    def titles_in_mention_order(self) -> list[str]:
        """Unique mentioned page titles in first-mention order."""
        seen: list[str] = []
        for step in self.steps:
            for m in step.mentions:
                if m.page_title not in seen:
                    seen.append(m.page_title)
        return seen


def segment_proof(raw_proof: str) -> ProofDocument:
    """Split raw proof text into atomic steps.

    Each non-blank line starts a step; blank lines always delimit; a line
    merges into the next when it ends with ``:`` or when the next line opens
    a template/display-math block.  Empty input yields an empty document.
    """
    text = raw_proof.replace("\r\n", "\n").replace("\r", "\n")
    lines = text.split("\n")
    blocks: list[list[str]] = []
    current: list[str] = []
    for i, line in enumerate(lines):
        if not line.strip():
            if current:
                blocks.append(current)
                current = []
            continue
        current.append(line)
        nxt = lines[i + 1] if i + 1 < len(lines) else None
        if nxt is None or not nxt.strip():
            continue  # blank (or end) handles the flush
        if line.rstrip().endswith(":") or nxt.lstrip().startswith(_BLOCK_OPENERS):
            continue  # merge with the following line
        blocks.append(current)
        current = []
    if current:
        blocks.append(current)
    steps = tuple(ProofStep.from_lines(b) for b in blocks)
    return ProofDocument.from_steps(steps)


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Reference:
    id: int
    kind: ReferenceKind
    title: str
    content: tuple[str, ...]
    mentions: tuple[ReferenceMention, ...]

    @classmethod
    def build(cls, id: int, kind: ReferenceKind, title: str, content: list[str]) -> "Reference":
        return cls(id, kind, title, tuple(content), tuple(parse_mentions("\n".join(content))))


@dataclass
class CorpusDiagnostics:
    dangling: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def dangling_titles(self) -> set[str]:
        return {t for _, t in self.dangling}


@dataclass
class Corpus:
    references: dict[str, Reference]  # keyed by normalized title
    examples: list[tuple[int, ProofDocument]]
    splits: dict[str, list[int]]
    diagnostics: CorpusDiagnostics = field(default_factory=CorpusDiagnostics)
    by_id: dict[int, Reference] = field(default_factory=dict)

    def resolve(self, title: str) -> Reference | None:
        return self.references.get(normalize_title(title))

    def examples_in_split(self, split: str) -> list[tuple[int, ProofDocument]]:
        ids = set(self.splits.get(split, []))
        return [(tid, doc) for tid, doc in self.examples if tid in ids]


_SPLIT_NAMES = ("train", "valid", "test")


def _build_corpus(
    raw_references: list[dict],
    raw_examples: list[dict],
    raw_splits: dict,
) -> Corpus:
    references: dict[str, Reference] = {}
    by_id: dict[int, Reference] = {}
    for i, entry in enumerate(raw_references):
        try:
            ref_id = int(entry["id"])
            kind = ReferenceKind(entry["kind"])
            title = str(entry["title"])
            contents = entry["contents"]
        except (KeyError, ValueError, TypeError) as exc:
            raise CorpusLoadError(f"malformed reference record {i}: {exc}") from exc
        if not title.strip():
            raise CorpusLoadError(f"reference record {i}: empty title")
        if not isinstance(contents, list) or not all(isinstance(c, str) for c in contents):
            raise CorpusLoadError(f"reference {ref_id}: 'contents' must be a list of strings")
        ref = Reference.build(ref_id, kind, title, contents)
        key = normalize_title(title)
        if key in references:
            other = references[key]
            raise DuplicateTitleError(
                f"references {other.id} ({other.title!r}) and {ref_id} ({title!r}) "
                f"normalize to the same title {key!r}"
            )
        if ref_id in by_id:
            raise CorpusLoadError(f"duplicate reference id {ref_id}")
        references[key] = ref
        by_id[ref_id] = ref

    examples: list[tuple[int, ProofDocument]] = []
    diagnostics = CorpusDiagnostics()
    for i, entry in enumerate(raw_examples):
        try:
            theorem_id = int(entry["theorem_id"])
            proof_raw = entry["proof"]
        except (KeyError, ValueError, TypeError) as exc:
            raise CorpusLoadError(f"malformed example record {i}: {exc}") from exc
        if not isinstance(proof_raw, str):
            raise CorpusLoadError(f"example {i} (theorem {theorem_id}): 'proof' must be a string")
        theorem = by_id.get(theorem_id)
        if theorem is None:
            raise CorpusLoadError(f"example {i}: unknown theorem_id {theorem_id}")
        if theorem.kind is not ReferenceKind.THEOREM:
            raise CorpusLoadError(
                f"example {i}: theorem_id {theorem_id} resolves to a {theorem.kind.value} page"
            )
        doc = segment_proof(proof_raw)
        if not doc.steps:
            raise CorpusLoadError(f"example {i} (theorem {theorem_id}): empty proof")
        for title in sorted(doc.ref_titles):
            if title not in references:
                diagnostics.dangling.append((theorem_id, title))
        examples.append((theorem_id, doc))

    if not isinstance(raw_splits, dict):
        raise CorpusLoadError("'splits' must be an object with train/valid/test arrays")
    unknown = set(raw_splits) - set(_SPLIT_NAMES)
    if unknown:
        raise CorpusLoadError(f"unknown split names: {sorted(unknown)}")
    splits: dict[str, list[int]] = {}
    for name in _SPLIT_NAMES:
        ids = raw_splits.get(name, [])
        if not isinstance(ids, list):
            raise CorpusLoadError(f"split {name!r} must be an array of theorem ids")
        splits[name] = [int(x) for x in ids]
    for a in range(len(_SPLIT_NAMES)):
        for b in range(a + 1, len(_SPLIT_NAMES)):
            overlap = set(splits[_SPLIT_NAMES[a]]) & set(splits[_SPLIT_NAMES[b]])
            if overlap:
                raise CorpusLoadError(
                    f"splits {_SPLIT_NAMES[a]!r} and {_SPLIT_NAMES[b]!r} overlap: {sorted(overlap)}"
                )
    example_ids = {tid for tid, _ in examples}
    for name in _SPLIT_NAMES:
        for tid in splits[name]:
            if tid not in example_ids:
                diagnostics.warnings.append(f"split {name!r} lists theorem {tid} with no stored proof")

    for w in diagnostics.warnings:
        logger.warning("%s", w)
    return Corpus(references, examples, splits, diagnostics, by_id)


def load_corpus(path: str | Path, format: str | None = None) -> Corpus:
    """Load the JSON interchange format.

    ``format`` is ``"json"`` (one document with ``references``, ``examples``
    and ``splits`` arrays) or ``"jsonl"`` (one object per line carrying a
    ``record`` discriminator: reference / example / splits); inferred from
    the file suffix when omitted.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix == ".jsonl" else "json"
    if format not in ("json", "jsonl"):
        raise CorpusLoadError(f"unknown corpus format {format!r}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise CorpusLoadError(f"cannot read corpus file {path}: {exc}") from exc

    if format == "json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusLoadError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise CorpusLoadError("corpus document must be a JSON object")
        return _build_corpus(
            doc.get("references", []), doc.get("examples", []), doc.get("splits", {})
        )

    raw_references: list[dict] = []
    raw_examples: list[dict] = []
    raw_splits: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusLoadError(f"invalid JSON on line {lineno} of {path}: {exc}") from exc
        record = entry.pop("record", None)
        if record == "reference":
            raw_references.append(entry)
        elif record == "example":
            raw_examples.append(entry)
        elif record == "splits":
            raw_splits = entry
        else:
            raise CorpusLoadError(f"line {lineno}: unknown record type {record!r}")
    return _build_corpus(raw_references, raw_examples, raw_splits)
