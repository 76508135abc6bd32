"""Independent reference implementations used only by tests.

Everything here is written from the documented contracts (docstrings,
README formulas) with deliberately different code paths from the package:
plain dict/loop n-gram counting, a from-scratch mock-sampler replica, and a
from-scratch stepwise search simulator.  Tests compare package outputs
against these, so a bug would have to be made twice, in two shapes, to slip
through.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from dataclasses import dataclass, field

PROOF_END = "</proof>"

# ---------------------------------------------------------------------------
# Lexical metric oracles (operate on token lists)
# ---------------------------------------------------------------------------


def _ngram_counts(tokens, n):
    counts = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def oracle_gleu(hyp, ref, max_n=4):
    """min(clipped n-gram precision, recall), micro-aggregated over n=1..4."""
    if not hyp and not ref:
        return 1.0
    if not hyp or not ref:
        return 0.0
    matches = 0
    hyp_total = 0
    ref_total = 0
    for n in range(1, max_n + 1):
        h = _ngram_counts(hyp, n)
        r = _ngram_counts(ref, n)
        for gram, count in h.items():
            if gram in r:
                matches += count if count < r[gram] else r[gram]
        hyp_total += max(len(hyp) - n + 1, 0)
        ref_total += max(len(ref) - n + 1, 0)
    precision = matches / hyp_total
    recall = matches / ref_total
    return min(precision, recall)


def oracle_token_f1(hyp, ref):
    """Bag-overlap F1 over tokens."""
    if not hyp and not ref:
        return 1.0
    if not hyp or not ref:
        return 0.0
    h = {}
    for t in hyp:
        h[t] = h.get(t, 0) + 1
    r = {}
    for t in ref:
        r[t] = r.get(t, 0) + 1
    overlap = 0
    for t, count in h.items():
        if t in r:
            overlap += count if count < r[t] else r[t]
    p = overlap / len(hyp)
    rec = overlap / len(ref)
    if p + rec == 0:
        return 0.0
    return 2 * p * rec / (p + rec)


# ---------------------------------------------------------------------------
# Mention / title helpers (independent of the package parser)
# ---------------------------------------------------------------------------

_LINK_RE = re.compile(r"\[\[([^\[\]|\n]+)(?:\|[^\[\]\n]*)?\]\]")
_WS_RE = re.compile(r"\s+")


def oracle_norm_title(title):
    return _WS_RE.sub(" ", title.replace("_", " ")).strip()


def oracle_page_titles(text):
    """Normalized page titles linked from ``text`` (Theorem: prefix points at
    the main namespace; other prefixes stay part of the page title)."""
    titles = set()
    for target in _LINK_RE.findall(text):
        if target.startswith("Theorem:"):
            target = target[len("Theorem:") :]
        titles.add(oracle_norm_title(target))
    return titles


# ---------------------------------------------------------------------------
# Mock backend replica
# ---------------------------------------------------------------------------


@dataclass
class OracleDraw:
    text: str
    logprob: float
    token_count: int
    reason: str  # "stop" | "max_tokens" | "end"


def _oracle_truncate(text, stop_sequences, max_tokens):
    cut = len(text)
    reason = "end"
    for stop in stop_sequences:
        if not stop:
            continue
        pos = text.find(stop)
        if pos != -1 and pos < cut:
            cut, reason = pos, "stop"
    kept = text[:cut]
    pieces = [m for m in re.finditer(r"\S+", kept)]
    if len(pieces) > max_tokens:
        return kept[: pieces[max_tokens - 1].end()], "max_tokens"
    return kept, reason


def oracle_stream_seed(seed, stream_key, prompt, temperature):
    material = repr((seed, tuple(stream_key), prompt, float(temperature))).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def oracle_mock_sample(script, seed, stream_key, prompt, temperature, n, stop_sequences, max_tokens):
    """Replica of the documented mock backend: longest-suffix table lookup,
    temperature-rescaled inverse-CDF draws from a per-call seeded stream,
    logprob = ln(base weight share)."""
    best_key = None
    for key in script:
        if prompt.endswith(key) and (best_key is None or len(key) > len(best_key)):
            best_key = key
    assert best_key is not None, f"no script key matches ...{prompt[-60:]!r}"
    table = script[best_key]
    total = sum(w for _, w in table)
    base = [w / total for _, w in table]
    if temperature == 0.0:
        top = max(base)
        tied = [i for i, p in enumerate(base) if p == top]
        choice = min(tied, key=lambda i: table[i][0])
        indices = [choice] * n
    else:
        scaled = [p ** (1.0 / temperature) for p in base]
        z = sum(scaled)
        probs = [s / z for s in scaled]
        rng = random.Random(oracle_stream_seed(seed, stream_key, prompt, temperature))
        indices = []
        for _ in range(n):
            r = rng.random()
            acc = 0.0
            pick = len(probs) - 1
            for i, p in enumerate(probs):
                acc += p
                if r < acc:
                    pick = i
                    break
            indices.append(pick)
    draws = []
    for i in indices:
        text, reason = _oracle_truncate(table[i][0], stop_sequences, max_tokens)
        draws.append(OracleDraw(text, math.log(base[i]), len(text.split()), reason))
    return draws


# ---------------------------------------------------------------------------
# Stepwise search simulator
# ---------------------------------------------------------------------------

EPSILON = 1e-12


@dataclass
class SimCandidate:
    steps: tuple
    logprob: float
    terminated: bool

    def text(self, sep):
        return sep.join(self.steps)


@dataclass
class SimIteration:
    index: int
    expanded: list
    pool: list  # (text, logprob, coverage, terminated, selected_by)


@dataclass
class SimResult:
    winner: SimCandidate
    iterations: list = field(default_factory=list)
    expansions: int = 0
    exhausted: bool = False
    forced: bool = False


def _sim_coverage(cand, constraints_norm, sep):
    return len(oracle_page_titles(cand.text(sep)) & constraints_norm)


def _sim_scores(pool, constraints_norm, alpha, sep):
    counts = [_sim_coverage(c, constraints_norm, sep) for c in pool]
    c_norm = max(max(abs(c) for c in counts), EPSILON)
    l_norm = max(max(abs(c.logprob) for c in pool), EPSILON)
    return [
        alpha * (count / c_norm) + (1.0 - alpha) * (cand.logprob / l_norm)
        for count, cand in zip(counts, pool)
    ]


def _sim_rank(pool, constraints_norm, alpha, sep):
    scores = _sim_scores(pool, constraints_norm, alpha, sep)
    return sorted(range(len(pool)), key=lambda i: (-scores[i], -pool[i].logprob, pool[i].text(sep)))


def _sim_dedup(pool, sep):
    index = {}
    out = []
    for cand in pool:
        key = (cand.text(sep), cand.terminated)
        if key not in index:
            index[key] = len(out)
            out.append(cand)
        elif cand.logprob > out[index[key]].logprob:
            out[index[key]] = cand
    return out


def sim_quotas(beam_size, alphas):
    n = len(alphas)
    quotas = [beam_size // n] * n
    for i in sorted(range(n), key=lambda i: -alphas[i])[: beam_size % n]:
        quotas[i] += 1
    return quotas


def simulate_stepwise_search(
    *,
    script,
    seed,
    base_prompt,
    separator,
    constraint_titles,
    schedule,
    alpha_clusters,
    quotas,
    pick_alpha,
    max_steps=50,
    max_step_tokens=120,
):
    """From-scratch rerun of the documented stepwise search.

    ``alpha_clusters``/``quotas`` describe selection (a single cluster with
    quota K reproduces plain stepwise); prompts grow as
    ``base + " " + each step + separator``.
    """
    constraints_norm = {oracle_norm_title(t) for t in constraint_titles}
    result = SimResult(winner=None)
    beam = [SimCandidate((), 0.0, False)]
    archive = []

    def prompt_for(steps):
        if not steps:
            return base_prompt
        return base_prompt + " " + "".join(s + separator for s in steps)

    for iteration in range(max_steps):
        if all(c.terminated for c in beam):
            break
        pool = [c for c in beam if c.terminated]
        expanded = []
        for beam_index, parent in enumerate(beam):
            if parent.terminated:
                continue
            expanded.append(parent.text(separator))
            prompt = prompt_for(parent.steps)
            for slot, (count, tau) in enumerate(schedule):
                draws = oracle_mock_sample(
                    script, seed, (iteration, beam_index, slot), prompt, tau, count, (separator,), max_step_tokens
                )
                result.expansions += count
                for draw in draws:
                    text = draw.text.strip()
                    saw_end = PROOF_END in text
                    if saw_end:
                        text = text[: text.find(PROOF_END)].rstrip()
                    terminated = saw_end or draw.reason == "end"
                    if not text:
                        if terminated and parent.steps:
                            pool.append(SimCandidate(parent.steps, parent.logprob + draw.logprob, True))
                        continue
                    pool.append(
                        SimCandidate(parent.steps + (text,), parent.logprob + draw.logprob, terminated)
                    )
        pool = _sim_dedup(pool, separator)
        archive.extend(c for c in pool if c.terminated)
        if not pool:
            result.exhausted = True
            result.iterations.append(SimIteration(iteration, expanded, []))
            break
        selected = {}
        for alpha, quota in zip(alpha_clusters, quotas):
            if quota == 0:
                continue
            for i in _sim_rank(pool, constraints_norm, alpha, separator)[:quota]:
                selected[i] = selected.get(i, ()) + (alpha,)
        result.iterations.append(
            SimIteration(
                iteration,
                expanded,
                [
                    (
                        c.text(separator),
                        c.logprob,
                        _sim_coverage(c, constraints_norm, separator),
                        c.terminated,
                        selected.get(i, ()),
                    )
                    for i, c in enumerate(pool)
                ],
            )
        )
        beam = [pool[i] for i in sorted(selected)]

    if result.exhausted:
        final_pool = _sim_dedup(archive, separator)
        assert final_pool, "simulator: exhausted with no terminated candidate"
    else:
        final_pool = list(beam)
        if any(not c.terminated for c in final_pool):
            result.forced = True
            final_pool = [SimCandidate(c.steps, c.logprob, True) for c in final_pool]
    best = _sim_rank(final_pool, constraints_norm, pick_alpha, separator)[0]
    result.winner = final_pool[best]
    return result


def oracle_ref_f1(gen_titles, gold_titles):
    gen = {oracle_norm_title(t) for t in gen_titles}
    gold = {oracle_norm_title(t) for t in gold_titles}
    if not gen and not gold:
        return 1.0
    inter = len(gen & gold)
    p = inter / len(gen) if gen else 0.0
    r = inter / len(gold) if gold else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0
