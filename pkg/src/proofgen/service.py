"""HTTP facade exposing next-step suggestion and full-proof generation.

The server is stateless: the evolving proof lives in the client, every
request carries its own history, and responses are pure functions of the
request (plus the fixed corpus/backend the app was built with).
"""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import Future, ThreadPoolExecutor, TimeoutError as FutureTimeout
from typing import Mapping, Sequence

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .corpus import Corpus, ProofDocument, ProofStep, Reference, ReferenceKind, normalize_title
from .decoder import DecodeConfig, DecodeError, decode
from .harness import covered_constraints, suggest_next_steps
from .lmbackend import Backend, BackendError, BackendTransportError
from .metrics import score_proof
from .promptgen import KnowledgeSetting, PromptError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_SYNC_TIMEOUT = 15.0
MAX_PAGE_SIZE = 100


class InlineTheorem(BaseModel):
    title: str
    content: str


class SuggestRequest(BaseModel):
    theorem_id: int | None = None
    theorem: InlineTheorem | None = None
    proof_so_far: list[str] = Field(default_factory=list)
    setting: str | None = None
    constraint_titles: list[str] | None = None
    k: int = Field(default=10, ge=1)
    temperature: float | None = Field(default=None, ge=0.0)
    seed: int = 0


class Suggestion(BaseModel):
    text: str
    logprob: float
    covered_titles: list[str]
    terminated: bool


class SuggestResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    suggestions: list[Suggestion]
    cost: int


class ProveRequest(BaseModel):
    theorem_id: int | None = None
    theorem: InlineTheorem | None = None
    setting: str | None = None
    constraint_titles: list[str] | None = None
    decode: dict = Field(default_factory=dict)


class ProveResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    status: str = "done"
    steps: list[str]
    text: str
    covered_titles: list[str]
    metrics: dict | None
    trace: dict


class JobPending(BaseModel):
    schema_version: int = SCHEMA_VERSION
    status: str
    job: str
    error: str | None = None


def _http_422(message: str) -> HTTPException:
    return HTTPException(status_code=422, detail=message)


def _http_502(exc: Exception) -> HTTPException:
    retryable = isinstance(exc, BackendTransportError)
    hint = "transient failure, retry with backoff" if retryable else "not retryable as-is"
    return HTTPException(status_code=502, detail=f"backend failure: {exc} ({hint})")


def create_app(
    corpus: Corpus,
    backend: Backend,
    decode_config: DecodeConfig | None = None,
    retrievals: Mapping[int, Sequence[str]] | None = None,
    sync_timeout: float = DEFAULT_SYNC_TIMEOUT,
    job_workers: int = 2,
) -> FastAPI:
    base_decode = decode_config or DecodeConfig()
    app = FastAPI(title="proofgen", version=str(SCHEMA_VERSION))
    executor = ThreadPoolExecutor(max_workers=job_workers)
    jobs: dict[str, Future] = {}
    jobs_lock = threading.Lock()

    gold_by_id: dict[int, ProofDocument] = {}
    for tid, doc in corpus.examples:
        gold_by_id.setdefault(tid, doc)

    def lookup_theorem(theorem_id: int) -> Reference:
        ref = corpus.by_id.get(theorem_id)
        if ref is None or ref.kind is not ReferenceKind.THEOREM:
            raise HTTPException(status_code=404, detail=f"unknown theorem id {theorem_id}")
        return ref

    def resolve_theorem(req: SuggestRequest | ProveRequest) -> tuple[Reference, int | None]:
        if (req.theorem_id is None) == (req.theorem is None):
            raise _http_422("exactly one of theorem_id and theorem is required")
        if req.theorem_id is not None:
            return lookup_theorem(req.theorem_id), req.theorem_id
        inline = req.theorem
        if not inline.title.strip():
            raise _http_422("inline theorem title must be non-empty")
        return Reference.build(-1, ReferenceKind.THEOREM, inline.title, inline.content.split("\n")), None

    def resolve_constraints(req: SuggestRequest | ProveRequest, theorem_id: int | None) -> list[str]:
        if req.constraint_titles is not None and req.setting is not None:
            raise _http_422("constraint_titles and setting are mutually exclusive")
        if req.constraint_titles is not None:
            return list(req.constraint_titles)
        if req.setting is None:
            return []
        try:
            setting = KnowledgeSetting(req.setting)
        except ValueError:
            raise _http_422(f"unknown setting {req.setting!r}")
        if setting is KnowledgeSetting.NONE:
            return []
        if theorem_id is None:
            raise _http_422(f"setting={setting.value} requires theorem_id")
        if setting is KnowledgeSetting.PROVIDED:
            gold = gold_by_id.get(theorem_id)
            if gold is None:
                raise _http_422(f"theorem {theorem_id} has no stored proof to provide references from")
            return gold.titles_in_mention_order()
        if retrievals is None:
            raise _http_422("server started without a retrievals table")
        if theorem_id not in retrievals:
            raise _http_422(f"no retrievals stored for theorem {theorem_id}")
        return list(retrievals[theorem_id])

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "schema_version": SCHEMA_VERSION,
            "references": len(corpus.references),
            "examples": len(corpus.examples),
            "backend": type(backend).__name__,
        }

    @app.get("/v1/theorems")
    def list_theorems(query: str = "", offset: int = 0, limit: int = 20) -> dict:
        if offset < 0 or limit < 1:
            raise _http_422("offset must be >= 0 and limit >= 1")
        limit = min(limit, MAX_PAGE_SIZE)
        needle = normalize_title(query).lower()
        rows = [
            {"id": ref.id, "title": ref.title, "has_gold": ref.id in gold_by_id}
            for ref in sorted(corpus.by_id.values(), key=lambda r: r.id)
            if ref.kind is ReferenceKind.THEOREM and needle in normalize_title(ref.title).lower()
        ]
        return {
            "schema_version": SCHEMA_VERSION,
            "items": rows[offset : offset + limit],
            "total": len(rows),
            "offset": offset,
            "limit": limit,
        }

    @app.get("/v1/theorems/{theorem_id}")
    def get_theorem(theorem_id: int) -> dict:
        ref = lookup_theorem(theorem_id)
        gold = gold_by_id.get(theorem_id)
        return {
            "schema_version": SCHEMA_VERSION,
            "id": ref.id,
            "title": ref.title,
            "content": "\n".join(ref.content),
            "gold_titles": gold.titles_in_mention_order() if gold else [],
            "gold_steps": [s.raw for s in gold.steps] if gold else None,
        }

    @app.post("/v1/suggest")
    def suggest(req: SuggestRequest) -> SuggestResponse:
        theorem, theorem_id = resolve_theorem(req)
        constraints = resolve_constraints(req, theorem_id)
        history = [ProofStep.from_raw(s) for s in req.proof_so_far]
        label = theorem_id if theorem_id is not None else theorem.title
        try:
            rows, cost = suggest_next_steps(
                theorem,
                constraints,
                history,
                backend,
                base_decode,
                k=req.k,
                temperature=req.temperature,
                seed=req.seed,
                stream_label=label,
            )
        except PromptError as exc:
            raise _http_422(str(exc))
        except BackendError as exc:
            raise _http_502(exc)
        return SuggestResponse(suggestions=[Suggestion(**row) for row in rows], cost=cost)

    def run_prove(req: ProveRequest) -> ProveResponse:
        theorem, theorem_id = resolve_theorem(req)
        constraints = resolve_constraints(req, theorem_id)
        merged = base_decode.to_dict()
        merged.update(req.decode)
        try:
            config = DecodeConfig.from_dict(merged)
        except (ValueError, TypeError, KeyError) as exc:
            raise _http_422(f"bad decode config: {exc}")
        try:
            candidate, trace = decode(theorem, constraints, backend, config)
        except (BackendError, DecodeError) as exc:
            raise _http_502(exc)
        text = candidate.text(config.step_separator)
        gold = gold_by_id.get(theorem_id) if theorem_id is not None else None
        metrics = score_proof(text, gold, corpus).to_dict() if gold else None
        return ProveResponse(
            steps=list(candidate.steps),
            text=text,
            covered_titles=covered_constraints([text], constraints),
            metrics=metrics,
            trace=trace.summary(),
        )

    @app.post("/v1/prove")
    def prove(req: ProveRequest, response: Response):
        future = executor.submit(run_prove, req)
        try:
            return future.result(timeout=sync_timeout)
        except FutureTimeout:
            token = uuid.uuid4().hex
            with jobs_lock:
                jobs[token] = future
            response.status_code = 202
            return JobPending(status="pending", job=token)

    @app.get("/v1/jobs/{token}")
    def poll_job(token: str):
        with jobs_lock:
            future = jobs.get(token)
        if future is None:
            raise HTTPException(status_code=404, detail=f"unknown job {token}")
        if not future.done():
            return JobPending(status="pending", job=token)
        try:
            result = future.result()
        except HTTPException as exc:
            return JobPending(status="failed", job=token, error=str(exc.detail))
        except Exception as exc:  # decode bugs should not wedge the poller
            logger.exception("job %s crashed", token)
            return JobPending(status="failed", job=token, error=str(exc))
        return result

    return app
