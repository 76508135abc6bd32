"""Segment-level constrained decoding.

Four strategies over the same backend interface:

* ``greedy``    — one temperature-0 full-proof completion (1 expansion).
* ``rerank``    — n full-proof samples, rescored by the value function.
* ``stepwise``  — stochastic beam search over proof steps at a single alpha.
* ``stepwisepp``— multi-temperature expansion plus per-alpha cluster
  selection; the final answer maximizes the value at ``final_alpha``.

The value function mixes constraint coverage with model likelihood:
``v = alpha * c_hat + (1 - alpha) * l_hat`` where each term is normalized by
the maximum absolute value among the candidates under comparison (floored at
EPSILON).  Coverage counts unique in-context reference titles present in the
candidate text; likelihood is the raw sum of segment logprobs (no length
normalization).

Determinism: every sample call carries a ``(iteration, beam_index,
schedule_slot)`` stream key, so seeded mock results are independent of call
order and the sampling could be parallelized without changing outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

from .corpus import STEP_SEPARATOR, ProofStep, Reference, normalize_title, parse_mentions
from .lmbackend import Backend, BackendError, SampleRequest, SampleResult, TruncationReason
from .promptgen import PROOF_END, PromptBudgets, render_inference_prompt

EPSILON = 1e-12


class DecodeError(Exception):
    pass


class DecodeBackendError(DecodeError):
    """Backend failure mid-search; carries the trace accumulated so far."""

    def __init__(self, cause: BackendError, trace: "SearchTrace"):
        super().__init__(f"backend failure during decoding: {cause}")
        self.cause = cause
        self.trace = trace


class DecodeMode(str, Enum):
    GREEDY = "greedy"
    RERANK = "rerank"
    STEPWISE = "stepwise"
    STEPWISEPP = "stepwisepp"


@dataclass(frozen=True)
class Candidate:
    steps: tuple[str, ...]
    cum_logprob: float
    terminated: bool
    covered_titles: frozenset[str]

    def text(self, separator: str = STEP_SEPARATOR) -> str:
        return separator.join(self.steps)


def make_candidate(
    steps: Sequence[str], cum_logprob: float, terminated: bool, separator: str = STEP_SEPARATOR
) -> Candidate:
    """Candidate with covered_titles recomputed from its text (never trusted
    from callers)."""
    steps = tuple(steps)
    covered = frozenset(m.page_title for m in parse_mentions(separator.join(steps)))
    return Candidate(steps, cum_logprob, terminated, covered)


@dataclass(frozen=True)
class DecodeConfig:
    mode: DecodeMode = DecodeMode.GREEDY
    beam_size: int = 9
    expansions_per_prefix: int = 10
    temperature_schedule: tuple[tuple[int, float], ...] = ((1, 0.0), (3, 0.3), (3, 0.5), (3, 0.7))
    alpha_clusters: tuple[float, ...] = (0.1, 0.5, 1.0)
    final_alpha: float = 0.75
    stepwise_alpha: float = 0.0
    rerank_n: int = 10
    rerank_temperature: float = 0.3
    max_steps: int = 50
    step_separator: str = STEP_SEPARATOR
    budgets: PromptBudgets = field(default_factory=PromptBudgets)

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.rerank_n < 1:
            raise ValueError("rerank_n must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.temperature_schedule:
            raise ValueError("temperature_schedule must be non-empty")
        if sum(c for c, _ in self.temperature_schedule) != self.expansions_per_prefix:
            raise ValueError("temperature_schedule counts must sum to expansions_per_prefix")
        if any(c < 1 or t < 0 for c, t in self.temperature_schedule):
            raise ValueError("temperature_schedule entries must have count >= 1 and tau >= 0")
        if not self.alpha_clusters:
            raise ValueError("alpha_clusters must be non-empty")
        for a in (*self.alpha_clusters, self.final_alpha, self.stepwise_alpha):
            if not 0.0 <= a <= 1.0:
                raise ValueError("alpha values must lie in [0, 1]")
        if not self.step_separator:
            raise ValueError("step_separator must be non-empty")

    def modal_temperature(self) -> float:
        """Temperature of the schedule's most frequent entry (ties break to
        the first listed); used by plain stepwise expansion."""
        top = max(c for c, _ in self.temperature_schedule)
        return next(t for c, t in self.temperature_schedule if c == top)

    def cluster_quotas(self) -> list[int]:
        """Per-alpha-cluster beam quotas: beam_size split evenly, remainder
        distributed one each starting from the highest alpha."""
        n = len(self.alpha_clusters)
        base = self.beam_size // n
        quotas = [base] * n
        remainder = self.beam_size % n
        order = sorted(range(n), key=lambda i: -self.alpha_clusters[i])
        for i in order[:remainder]:
            quotas[i] += 1
        return quotas

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "beam_size": self.beam_size,
            "expansions_per_prefix": self.expansions_per_prefix,
            "temperature_schedule": [[c, t] for c, t in self.temperature_schedule],
            "alpha_clusters": list(self.alpha_clusters),
            "final_alpha": self.final_alpha,
            "stepwise_alpha": self.stepwise_alpha,
            "rerank_n": self.rerank_n,
            "rerank_temperature": self.rerank_temperature,
            "max_steps": self.max_steps,
            "step_separator": self.step_separator,
            "budgets": {
                "max_prompt_tokens": self.budgets.max_prompt_tokens,
                "max_full_proof_tokens": self.budgets.max_full_proof_tokens,
                "max_history_tokens": self.budgets.max_history_tokens,
                "max_step_tokens": self.budgets.max_step_tokens,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecodeConfig":
        kwargs = dict(data)
        if "mode" in kwargs:
            kwargs["mode"] = DecodeMode(kwargs["mode"])
        if "temperature_schedule" in kwargs:
            kwargs["temperature_schedule"] = tuple((int(c), float(t)) for c, t in kwargs["temperature_schedule"])
        if "alpha_clusters" in kwargs:
            kwargs["alpha_clusters"] = tuple(float(a) for a in kwargs["alpha_clusters"])
        if "budgets" in kwargs and isinstance(kwargs["budgets"], dict):
            kwargs["budgets"] = PromptBudgets(**kwargs["budgets"])
        return cls(**kwargs)


def v_constraint(candidate: Candidate, constraint_titles: set[str]) -> int:
    """Number of unique constraint titles covered by the candidate text
    (titles compared after normalization)."""
    constraints = {normalize_title(t) for t in constraint_titles}
    return len(candidate.covered_titles & constraints)


def score_candidates(
    candidates: Sequence[Candidate], constraint_titles: Sequence[str] | set[str], alpha: float
) -> list[float]:
    """Value of each candidate relative to the others in the list."""
    if not candidates:
        return []
    constraints = {normalize_title(t) for t in constraint_titles}
    counts = [v_constraint(c, constraints) for c in candidates]
    c_norm = max(max(abs(c) for c in counts), EPSILON)
    l_norm = max(max(abs(c.cum_logprob) for c in candidates), EPSILON)
    return [
        alpha * (count / c_norm) + (1.0 - alpha) * (cand.cum_logprob / l_norm)
        for count, cand in zip(counts, candidates)
    ]


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class PoolEntry:
    text: str
    cum_logprob: float
    coverage: int
    terminated: bool
    selected: bool
    selected_by: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "cum_logprob": self.cum_logprob,
            "coverage": self.coverage,
            "terminated": self.terminated,
            "selected": self.selected,
            "selected_by": list(self.selected_by),
        }


@dataclass
class IterationTrace:
    index: int
    expanded: tuple[str, ...]
    entries: list[PoolEntry]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "expanded": list(self.expanded),
            "entries": [e.to_dict() for e in self.entries],
        }


@dataclass
class SearchTrace:
    mode: str
    iterations: list[IterationTrace] = field(default_factory=list)
    expansions: int = 0
    generated_tokens: int = 0
    segment_count: int = 0
    degenerate: bool = False
    forced: bool = False
    exhausted: bool = False

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "iterations": len(self.iterations),
            "expansions": self.expansions,
            "generated_tokens": self.generated_tokens,
            "segment_count": self.segment_count,
            "degenerate": self.degenerate,
            "forced": self.forced,
            "exhausted": self.exhausted,
        }

    def to_dict(self) -> dict:
        out = self.summary()
        out["iterations"] = [it.to_dict() for it in self.iterations]
        return out


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _candidate_sort_key(scored: tuple[Candidate, float], separator: str):
    cand, value = scored
    return (-value, -cand.cum_logprob, cand.text(separator))


def _pick_best(candidates: Sequence[Candidate], titles: Sequence[str], alpha: float, separator: str) -> Candidate:
    scores = score_candidates(candidates, titles, alpha)
    ranked = sorted(zip(candidates, scores), key=lambda cs: _candidate_sort_key(cs, separator))
    return ranked[0][0]


def _clip_proof_end(text: str) -> tuple[str, bool]:
    """Cut at the first proof-end tag; True when the tag (or nothing beyond
    it) marked termination."""
    idx = text.find(PROOF_END)
    if idx == -1:
        return text, False
    return text[:idx].rstrip(), True


def _full_proof_candidate(result: SampleResult, separator: str) -> Candidate:
    text, _ = _clip_proof_end(result.text.strip())
    steps = tuple(s.strip() for s in text.split(separator) if s.strip())
    return make_candidate(steps, result.logprob, True, separator)


def _prompt_for(
    theorem: Reference,
    titles: Sequence[str],
    steps: Sequence[str],
    config: DecodeConfig,
    backend: Backend,
) -> str:
    history = [ProofStep.from_raw(s) for s in steps] if steps else None
    return render_inference_prompt(
        theorem, titles, history, config.budgets, backend.count_tokens, config.step_separator
    )


# ---------------------------------------------------------------------------
# Full-proof strategies
# ---------------------------------------------------------------------------


def decode_greedy(
    theorem: Reference, constraint_titles: Sequence[str], backend: Backend, config: DecodeConfig
) -> tuple[Candidate, SearchTrace]:
    """One temperature-0 full-proof completion."""
    trace = SearchTrace(mode=DecodeMode.GREEDY.value)
    prompt = _prompt_for(theorem, constraint_titles, (), config, backend)
    request = SampleRequest(
        prompt=prompt,
        temperature=0.0,
        n=1,
        max_tokens=config.budgets.max_full_proof_tokens,
        stop_sequences=(PROOF_END,),
    )
    try:
        result = backend.sample(request, stream_key=(0, 0, 0))[0]
    except BackendError as exc:
        raise DecodeBackendError(exc, trace) from exc
    trace.expansions = 1
    trace.generated_tokens = result.token_count
    candidate = _full_proof_candidate(result, config.step_separator)
    trace.segment_count = len(candidate.steps)
    trace.degenerate = not candidate.steps
    coverage = v_constraint(candidate, set(constraint_titles))
    trace.iterations.append(
        IterationTrace(
            index=0,
            expanded=("",),
            entries=[
                PoolEntry(
                    text=candidate.text(config.step_separator),
                    cum_logprob=candidate.cum_logprob,
                    coverage=coverage,
                    terminated=True,
                    selected=True,
                    selected_by=(),
                )
            ],
        )
    )
    return candidate, trace


def decode_rerank(
    theorem: Reference, constraint_titles: Sequence[str], backend: Backend, config: DecodeConfig
) -> tuple[Candidate, SearchTrace]:
    """Sample ``rerank_n`` full proofs and return the argmax of the value
    function at ``final_alpha``."""
    trace = SearchTrace(mode=DecodeMode.RERANK.value)
    prompt = _prompt_for(theorem, constraint_titles, (), config, backend)
    request = SampleRequest(
        prompt=prompt,
        temperature=config.rerank_temperature,
        n=config.rerank_n,
        max_tokens=config.budgets.max_full_proof_tokens,
        stop_sequences=(PROOF_END,),
    )
    try:
        results = backend.sample(request, stream_key=(0, 0, 0))
    except BackendError as exc:
        raise DecodeBackendError(exc, trace) from exc
    trace.expansions = config.rerank_n
    trace.generated_tokens = sum(r.token_count for r in results)
    candidates = [c for c in (_full_proof_candidate(r, config.step_separator) for r in results) if c.steps]
    if not candidates:
        trace.degenerate = True
        raise DecodeError("no viable proof: all sampled completions were empty")
    scores = score_candidates(candidates, constraint_titles, config.final_alpha)
    ranked = sorted(zip(candidates, scores), key=lambda cs: _candidate_sort_key(cs, config.step_separator))
    winner = ranked[0][0]
    constraints = set(constraint_titles)
    trace.segment_count = len(winner.steps)
    trace.iterations.append(
        IterationTrace(
            index=0,
            expanded=("",),
            entries=[
                PoolEntry(
                    text=c.text(config.step_separator),
                    cum_logprob=c.cum_logprob,
                    coverage=v_constraint(c, constraints),
                    terminated=True,
                    selected=c is winner,
                    selected_by=(config.final_alpha,) if c is winner else (),
                )
                for c in candidates
            ],
        )
    )
    return winner, trace


# ---------------------------------------------------------------------------
# Stepwise strategies
# ---------------------------------------------------------------------------


def _extend(candidate: Candidate, result: SampleResult, separator: str) -> Candidate | None:
    """Child candidate from one sampled segment; None for a degenerate empty
    expansion that also fails to terminate anything."""
    text = result.text.strip()
    text, saw_end = _clip_proof_end(text)
    terminated = saw_end or result.truncated_by is TruncationReason.END
    if not text:
        if terminated and candidate.steps:
            return replace(candidate, cum_logprob=candidate.cum_logprob + result.logprob, terminated=True)
        return None
    return make_candidate(
        candidate.steps + (text,), candidate.cum_logprob + result.logprob, terminated, separator
    )


def _dedup(pool: list[Candidate], separator: str) -> list[Candidate]:
    """Merge candidates with identical (text, terminated), keeping the
    highest cum_logprob; order of first occurrence is preserved."""
    best: dict[tuple[str, bool], int] = {}
    out: list[Candidate] = []
    for cand in pool:
        key = (cand.text(separator), cand.terminated)
        if key not in best:
            best[key] = len(out)
            out.append(cand)
        elif cand.cum_logprob > out[best[key]].cum_logprob:
            out[best[key]] = cand
    return out


def _stepwise_search(
    theorem: Reference,
    constraint_titles: Sequence[str],
    backend: Backend,
    config: DecodeConfig,
    *,
    schedule: Sequence[tuple[int, float]],
    select,
    pick_alpha: float,
    mode: DecodeMode,
) -> tuple[Candidate, SearchTrace]:
    separator = config.step_separator
    constraints = set(constraint_titles)
    trace = SearchTrace(mode=mode.value)
    beam: list[Candidate] = [make_candidate((), 0.0, False, separator)]
    archive: list[Candidate] = []  # every terminated candidate ever pooled

    for iteration in range(config.max_steps):
        if all(c.terminated for c in beam):
            break
        pool: list[Candidate] = [c for c in beam if c.terminated]
        expanded: list[str] = []
        live = [(i, c) for i, c in enumerate(beam) if not c.terminated]
        for beam_index, candidate in live:
            expanded.append(candidate.text(separator))
            prompt = _prompt_for(theorem, constraint_titles, candidate.steps, config, backend)
            for slot, (count, tau) in enumerate(schedule):
                request = SampleRequest(
                    prompt=prompt,
                    temperature=tau,
                    n=count,
                    max_tokens=config.budgets.max_step_tokens,
                    stop_sequences=(separator,),
                )
                try:
                    results = backend.sample(request, stream_key=(iteration, beam_index, slot))
                except BackendError as exc:
                    raise DecodeBackendError(exc, trace) from exc
                trace.expansions += count
                trace.generated_tokens += sum(r.token_count for r in results)
                for result in results:
                    child = _extend(candidate, result, separator)
                    if child is not None:
                        pool.append(child)

        pool = _dedup(pool, separator)
        archive.extend(c for c in pool if c.terminated)
        if not pool:
            # All expansions were empty and nothing terminated passed through.
            trace.exhausted = True
            trace.iterations.append(IterationTrace(iteration, tuple(expanded), []))
            break

        selected_by = select(pool, constraints)
        trace.iterations.append(
            IterationTrace(iteration, tuple(expanded), _pool_entries(pool, selected_by, constraints, separator))
        )
        beam = [pool[i] for i in sorted(selected_by)]

    if trace.exhausted:
        survivors = _dedup(archive, separator)
        if not survivors:
            raise DecodeError("beam exhausted with no terminated candidate")
        final_pool = survivors
    else:
        final_pool = list(beam)
        if any(not c.terminated for c in final_pool):
            trace.forced = True  # max_steps cap converted live candidates
            final_pool = [c if c.terminated else replace(c, terminated=True) for c in final_pool]
    winner = _pick_best(final_pool, constraint_titles, pick_alpha, separator)
    trace.segment_count = len(winner.steps)
    return winner, trace


def _pool_entries(
    pool: Sequence[Candidate],
    selected_by: dict[int, tuple[float, ...]],
    constraints: set[str],
    separator: str,
) -> list[PoolEntry]:
    return [
        PoolEntry(
            text=c.text(separator),
            cum_logprob=c.cum_logprob,
            coverage=v_constraint(c, constraints),
            terminated=c.terminated,
            selected=i in selected_by,
            selected_by=selected_by.get(i, ()),
        )
        for i, c in enumerate(pool)
    ]


def decode_stepwise(
    theorem: Reference,
    constraint_titles: Sequence[str],
    backend: Backend,
    config: DecodeConfig,
    alpha: float,
) -> tuple[Candidate, SearchTrace]:
    """Stepwise stochastic beam search at a single alpha; expansion samples
    all N segments at the schedule's modal temperature."""
    separator = config.step_separator

    def select(pool: list[Candidate], constraints: set[str]) -> dict[int, tuple[float, ...]]:
        scores = score_candidates(pool, constraints, alpha)
        order = sorted(
            range(len(pool)), key=lambda i: (-scores[i], -pool[i].cum_logprob, pool[i].text(separator))
        )
        return {i: (alpha,) for i in order[: config.beam_size]}

    schedule = ((config.expansions_per_prefix, config.modal_temperature()),)
    return _stepwise_search(
        theorem,
        constraint_titles,
        backend,
        config,
        schedule=schedule,
        select=select,
        pick_alpha=alpha,
        mode=DecodeMode.STEPWISE,
    )


def decode_stepwisepp(
    theorem: Reference, constraint_titles: Sequence[str], backend: Backend, config: DecodeConfig
) -> tuple[Candidate, SearchTrace]:
    """Stepwise search with multi-temperature expansion and per-alpha cluster
    selection; the final answer maximizes the value at ``final_alpha``."""
    separator = config.step_separator
    quotas = config.cluster_quotas()

    def select(pool: list[Candidate], constraints: set[str]) -> dict[int, tuple[float, ...]]:
        selected: dict[int, tuple[float, ...]] = {}
        for alpha, quota in zip(config.alpha_clusters, quotas):
            if quota == 0:
                continue
            scores = score_candidates(pool, constraints, alpha)
            order = sorted(
                range(len(pool)), key=lambda i: (-scores[i], -pool[i].cum_logprob, pool[i].text(separator))
            )
            for i in order[:quota]:
                selected[i] = selected.get(i, ()) + (alpha,)
        return selected

    return _stepwise_search(
        theorem,
        constraint_titles,
        backend,
        config,
        schedule=config.temperature_schedule,
        select=select,
        pick_alpha=config.final_alpha,
        mode=DecodeMode.STEPWISEPP,
    )


def decode(
    theorem: Reference, constraint_titles: Sequence[str], backend: Backend, config: DecodeConfig
) -> tuple[Candidate, SearchTrace]:
    """Dispatch on ``config.mode``."""
    if config.mode is DecodeMode.GREEDY:
        return decode_greedy(theorem, constraint_titles, backend, config)
    if config.mode is DecodeMode.RERANK:
        return decode_rerank(theorem, constraint_titles, backend, config)
    if config.mode is DecodeMode.STEPWISE:
        return decode_stepwise(theorem, constraint_titles, backend, config, config.stepwise_alpha)
    if config.mode is DecodeMode.STEPWISEPP:
        return decode_stepwisepp(theorem, constraint_titles, backend, config)
    raise DecodeError(f"unknown decode mode {config.mode!r}")
