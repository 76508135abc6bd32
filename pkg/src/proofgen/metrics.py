"""Proof evaluation metrics.

All lexical metrics run on the canonical token pipeline: ``corpus.normalize``
followed by whitespace splitting, case preserved.  GLEU here is the symmetric
min(clipped n-gram precision aggregate, n-gram recall aggregate) form for
n = 1..4 computed over a whole proof as one sequence.

Empty-input conventions (applied uniformly): metric(x, x) = 1 for any x
including empty; empty vs non-empty = 0.
"""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, fields
from typing import Sequence

from .corpus import Corpus, ProofDocument, ProofStep, Reference, normalize, normalize_title, parse_mentions

MAX_NGRAM_ORDER = 4


class MetricError(Exception):
    pass


class UndefinedCorrelationError(MetricError):
    pass


def tokenize(text: str) -> list[str]:
    return normalize(text).split()


def token_bag(text: str) -> Counter:
    return Counter(tokenize(text))


def gleu(hyp_tokens: Sequence[str], ref_tokens: Sequence[str], max_n: int = MAX_NGRAM_ORDER) -> float:
    if not hyp_tokens and not ref_tokens:
        return 1.0
    if not hyp_tokens or not ref_tokens:
        return 0.0
    matches = 0
    hyp_total = 0
    ref_total = 0
    for n in range(1, max_n + 1):
        hyp_grams = Counter(tuple(hyp_tokens[i : i + n]) for i in range(len(hyp_tokens) - n + 1))
        ref_grams = Counter(tuple(ref_tokens[i : i + n]) for i in range(len(ref_tokens) - n + 1))
        matches += sum(min(count, ref_grams[g]) for g, count in hyp_grams.items())
        hyp_total += max(len(hyp_tokens) - n + 1, 0)
        ref_total += max(len(ref_tokens) - n + 1, 0)
    precision = matches / hyp_total
    recall = matches / ref_total
    return min(precision, recall)


def token_f1(hyp_bag: Counter, ref_bag: Counter) -> float:
    hyp_size = sum(hyp_bag.values())
    ref_size = sum(ref_bag.values())
    if hyp_size == 0 and ref_size == 0:
        return 1.0
    if hyp_size == 0 or ref_size == 0:
        return 0.0
    overlap = sum(min(count, ref_bag[t]) for t, count in hyp_bag.items())
    p = overlap / hyp_size
    r = overlap / ref_size
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def knowledge_bag(pages: Sequence[Reference]) -> Counter:
    """Token bag of the concatenated normalized contents of ``pages``,
    counting each page once (dedup by normalized title)."""
    seen: set[str] = set()
    bag: Counter = Counter()
    for page in pages:
        key = normalize_title(page.title)
        if key in seen:
            continue
        seen.add(key)
        bag.update(tokenize("\n".join(page.content)))
    return bag


def kf1(hyp_bag: Counter, pages: Sequence[Reference]) -> float:
    return token_f1(hyp_bag, knowledge_bag(pages))


def ref_prf(generated_titles: set[str], gold_titles: set[str]) -> tuple[float, float, float]:
    """Set precision/recall/F1 over normalized unique reference titles."""
    gen = {normalize_title(t) for t in generated_titles}
    gold = {normalize_title(t) for t in gold_titles}
    if not gen and not gold:
        return (1.0, 1.0, 1.0)
    inter = len(gen & gold)
    p = inter / len(gen) if gen else 0.0
    r = inter / len(gold) if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return (p, r, f1)


def halluc_rate(generated_titles: set[str], corpus: Corpus) -> float:
    """Fraction of unique generated titles that resolve to no corpus page."""
    gen = {normalize_title(t) for t in generated_titles}
    if not gen:
        return 0.0
    unresolved = sum(1 for t in gen if corpus.resolve(t) is None)
    return unresolved / len(gen)


@dataclass(frozen=True)
class MetricReport:
    gleu: float
    token_f1: float
    kf1: float
    ref_p: float
    ref_r: float
    ref_f1: float
    halluc: float

    def selection_score(self) -> float:
        """Sum of all metrics with hallucination negated (best-of-k key)."""
        return self.gleu + self.token_f1 + self.kf1 + self.ref_p + self.ref_r + self.ref_f1 - self.halluc

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_NAMES = tuple(f.name for f in fields(MetricReport))


def _score_against(hyp_text: str, gold_text: str, gold_titles: set[str], corpus: Corpus) -> MetricReport:
    hyp_tokens = tokenize(hyp_text)
    gold_tokens = tokenize(gold_text)
    gen_titles = {m.page_title for m in parse_mentions(hyp_text)}
    pages = [p for p in (corpus.resolve(t) for t in sorted(gold_titles)) if p is not None]
    p, r, f1 = ref_prf(gen_titles, gold_titles)
    return MetricReport(
        gleu=gleu(hyp_tokens, gold_tokens),
        token_f1=token_f1(Counter(hyp_tokens), Counter(gold_tokens)),
        kf1=kf1(Counter(hyp_tokens), pages),
        ref_p=p,
        ref_r=r,
        ref_f1=f1,
        halluc=halluc_rate(gen_titles, corpus),
    )


def score_proof(hyp_text: str, gold: ProofDocument, corpus: Corpus) -> MetricReport:
    """Full metric suite for a generated proof against a gold proof document."""
    return _score_against(hyp_text, gold.raw_text(), set(gold.ref_titles), corpus)


def score_step(hyp_text: str, gold_step: ProofStep, corpus: Corpus) -> MetricReport:
    """Step-level analogue of ``score_proof``: the gold step serves as the
    gold document (its mentions are the gold titles and knowledge pages)."""
    gold_titles = {m.page_title for m in gold_step.mentions}
    return _score_against(hyp_text, gold_step.raw, gold_titles, corpus)


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        return MetricReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    n = len(reports)
    return MetricReport(**{name: sum(getattr(r, name) for r in reports) / n for name in METRIC_NAMES})


def best_of_k(candidates: Sequence[tuple[str, MetricReport]]) -> int:
    """Index of the candidate with the highest metric sum (halluc negated);
    ties break to the lowest index."""
    if not candidates:
        raise MetricError("best_of_k requires at least one candidate")
    best_idx = 0
    best_score = candidates[0][1].selection_score()
    for i in range(1, len(candidates)):
        score = candidates[i][1].selection_score()
        if score > best_score:
            best_idx, best_score = i, score
    return best_idx


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson r; raises UndefinedCorrelationError on <2 points,
    mismatched lengths, or zero variance in either series."""
    if len(xs) != len(ys):
        raise UndefinedCorrelationError(f"series lengths differ: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 points")
    try:
        return statistics.correlation(list(xs), list(ys))
    except statistics.StatisticsError as exc:
        raise UndefinedCorrelationError(str(exc)) from exc
