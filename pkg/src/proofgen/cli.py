"""Command-line interface.

Verbs: emit-finetune, decode, suggest, score, aggregate-annotations,
correlate, serve.  Global flags pick the corpus, the backend (mock or
remote), the seed, and an optional experiment config file; reports are
written with sorted keys and no timestamps so reruns are byte-identical.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from .corpus import Corpus, load_corpus, segment_proof
from .harness import (
    AggregateReport,
    AnnotationError,
    ConfigError,
    ExperimentConfig,
    RunError,
    RunReport,
    aggregate_annotations,
    correlate as correlate_matrices,
    covered_constraints,
    load_annotations,
    load_retrievals,
    run as run_experiment,
    suggest_next_steps,
)
from .lmbackend import (
    Backend,
    BackendError,
    MockBackend,
    RateLimitedBackend,
    RemoteBackend,
    TokenBucket,
)
from .metrics import MetricReport, score_proof
from .promptgen import EmitError, KnowledgeSetting, PromptError, emit_finetune_file


@dataclass
class CliState:
    corpus_path: str | None
    config_path: str | None
    seed: int | None
    backend_name: str
    mock_script: str | None
    endpoint: str | None
    model: str | None
    api_key_env: str
    per_minute: int | None
    max_in_flight: int | None

    def load_corpus(self) -> Corpus:
        if not self.corpus_path:
            raise click.UsageError("a corpus is required: pass --corpus or set PROOFGEN_CORPUS")
        try:
            return load_corpus(self.corpus_path)
        except Exception as exc:
            raise click.ClickException(f"failed to load corpus: {exc}")

    def load_config(self) -> ExperimentConfig:
        if not self.config_path:
            raise click.UsageError("this command needs --config pointing at an experiment config file")
        try:
            config = ExperimentConfig.from_file(self.config_path)
        except ConfigError as exc:
            raise click.ClickException(str(exc))
        if self.seed is not None:
            config.seed = self.seed
        return config

    def resolved_seed(self, config: ExperimentConfig | None = None) -> int:
        if self.seed is not None:
            return self.seed
        if config is not None:
            return config.seed
        return 0

    def build_backend(self, seed: int) -> Backend:
        if self.backend_name == "mock":
            if not self.mock_script:
                raise click.UsageError("--backend mock needs --mock-script (or PROOFGEN_MOCK_SCRIPT)")
            try:
                return MockBackend(load_mock_script(self.mock_script), seed=seed)
            except (OSError, ValueError, json.JSONDecodeError) as exc:
                raise click.ClickException(f"bad mock script: {exc}")
        if not self.endpoint or not self.model:
            raise click.UsageError("--backend remote needs --endpoint and --model")
        backend: Backend = RemoteBackend(self.endpoint, self.model, api_key=os.environ.get(self.api_key_env))
        if self.per_minute or self.max_in_flight:
            bucket = TokenBucket(per_minute=self.per_minute or 60, max_in_flight=self.max_in_flight or 4)
            backend = RateLimitedBackend(backend, bucket)
        return backend


def load_mock_script(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """Mock scripts are JSON: prompt-suffix -> list of [text, weight] pairs
    (or a text -> weight object; insertion order is the table order)."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("mock script must be a JSON object")
    script: dict[str, list[tuple[str, float]]] = {}
    for key, table in data.items():
        if isinstance(table, dict):
            script[key] = [(text, float(w)) for text, w in table.items()]
        else:
            script[key] = [(str(t), float(w)) for t, w in table]
    return script


def _emit_json(data, out: str | None) -> None:
    text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


@click.group()
@click.option("--corpus", "corpus_path", envvar="PROOFGEN_CORPUS", type=click.Path(), help="Corpus JSON/JSONL file.")
@click.option("--config", "config_path", type=click.Path(), help="Experiment config JSON file.")
@click.option("--seed", type=int, default=None, help="Seed override (wins over the config file's seed).")
@click.option("--backend", "backend_name", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--mock-script", envvar="PROOFGEN_MOCK_SCRIPT", type=click.Path(), help="Scripted-continuation JSON for the mock backend.")
@click.option("--endpoint", envvar="PROOFGEN_ENDPOINT", help="Remote completions URL.")
@click.option("--model", envvar="PROOFGEN_MODEL", help="Remote model name.")
@click.option("--api-key-env", default="PROOFGEN_API_KEY", show_default=True, help="Env var holding the remote API key.")
@click.option("--per-minute", type=int, default=None, help="Remote rate limit: calls per rolling minute.")
@click.option("--max-in-flight", type=int, default=None, help="Remote rate limit: concurrent calls.")
@click.pass_context
def main(ctx, corpus_path, config_path, seed, backend_name, mock_script, endpoint, model, api_key_env, per_minute, max_in_flight):
    """Grounded theorem-proof generation engine."""
    ctx.obj = CliState(
        corpus_path=corpus_path,
        config_path=config_path,
        seed=seed,
        backend_name=backend_name,
        mock_script=mock_script,
        endpoint=endpoint,
        model=model,
        api_key_env=api_key_env,
        per_minute=per_minute,
        max_in_flight=max_in_flight,
    )


@main.command("emit-finetune")
@click.option("--setting", type=click.Choice([s.value for s in KnowledgeSetting]), required=True)
@click.option("--retrievals", "retrievals_path", type=click.Path(), help="JSON map theorem_id -> retrieved titles (required for setting=retrieved).")
@click.option("--out", required=True, type=click.Path())
@click.pass_obj
def emit_finetune(state: CliState, setting, retrievals_path, out):
    """Write fine-tuning records (JSONL) for the train split."""
    corpus = state.load_corpus()
    setting = KnowledgeSetting(setting)
    retrievals = None
    if setting is KnowledgeSetting.RETRIEVED:
        if not retrievals_path:
            raise click.UsageError("setting=retrieved needs --retrievals")
        try:
            retrievals = load_retrievals(retrievals_path, corpus)
        except RunError as exc:
            raise click.ClickException(str(exc))
    try:
        count = emit_finetune_file(corpus, setting, retrievals, out)
    except (EmitError, PromptError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {count} records to {out}")


@main.command("decode")
@click.option("--out", type=click.Path(), help="Report JSON path (stdout when omitted).")
@click.option("--csv", "csv_out", type=click.Path(), help="Also write the metric means as CSV.")
@click.pass_obj
def decode_cmd(state: CliState, out, csv_out):
    """Run the configured experiment (full-proof or next-step) and report."""
    corpus = state.load_corpus()
    config = state.load_config()
    backend = state.build_backend(config.seed)
    try:
        report = run_experiment(config, corpus, backend)
    except (ConfigError, RunError, BackendError) as exc:
        raise click.ClickException(str(exc))
    if out:
        Path(out).write_text(report.to_json())
    else:
        sys.stdout.write(report.to_json())
    if csv_out:
        Path(csv_out).write_text(report.means_csv())
    means = " ".join(f"{name}={getattr(report.means, name):.4f}" for name in report.means.to_dict())
    click.echo(f"scored {len(report.items)}/{report.attempted} items: {means}", err=True)


@main.command("suggest")
@click.option("--theorem-id", type=int, required=True)
@click.option("--history-file", type=click.Path(), help="Proof-so-far text; blank lines separate steps.")
@click.option("--title", "titles", multiple=True, help="Constraint title (repeatable).")
@click.option("--provided", is_flag=True, help="Use the gold proof's mentioned titles as constraints.")
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--temperature", type=float, default=None)
@click.option("--out", type=click.Path())
@click.pass_obj
def suggest(state: CliState, theorem_id, history_file, titles, provided, k, temperature, out):
    """Sample and rank next-step suggestions for an in-progress proof."""
    corpus = state.load_corpus()
    seed = state.resolved_seed()
    backend = state.build_backend(seed)
    theorem = corpus.by_id.get(theorem_id)
    if theorem is None:
        raise click.ClickException(f"unknown theorem id {theorem_id}")
    if provided and titles:
        raise click.UsageError("--provided and --title are mutually exclusive")
    constraint_titles = list(titles)
    if provided:
        gold = next((doc for tid, doc in corpus.examples if tid == theorem_id), None)
        if gold is None:
            raise click.ClickException(f"theorem {theorem_id} has no stored proof")
        constraint_titles = gold.titles_in_mention_order()
    history = segment_proof(Path(history_file).read_text()).steps if history_file else ()
    config = ExperimentConfig().decode
    try:
        suggestions, cost = suggest_next_steps(
            theorem, constraint_titles, history, backend, config, k=k, temperature=temperature, seed=seed
        )
    except (BackendError, PromptError) as exc:
        raise click.ClickException(str(exc))
    _emit_json({"theorem_id": theorem_id, "suggestions": suggestions, "cost": cost, "seed": seed}, out)


@main.command("score")
@click.option("--theorem-id", type=int, required=True)
@click.option("--proof-file", type=click.Path(), required=True, help="Generated proof text to score.")
@click.option("--out", type=click.Path())
@click.pass_obj
def score(state: CliState, theorem_id, proof_file, out):
    """Score a proof text against a theorem's stored gold proof."""
    corpus = state.load_corpus()
    gold = next((doc for tid, doc in corpus.examples if tid == theorem_id), None)
    if gold is None:
        raise click.ClickException(f"theorem {theorem_id} has no stored proof to score against")
    text = Path(proof_file).read_text()
    report = score_proof(text, gold, corpus)
    covered = covered_constraints([text], gold.titles_in_mention_order())
    _emit_json({"theorem_id": theorem_id, "metrics": report.to_dict(), "covered_titles": covered}, out)


@main.command("aggregate-annotations")
@click.option("--annotations", "annotations_path", type=click.Path(), required=True, help="JSONL of per-step human annotations.")
@click.option("--correct-threshold", type=int, default=4, show_default=True)
@click.option("--useful-threshold", type=int, default=3, show_default=True)
@click.option("--out", type=click.Path())
def aggregate_annotations_cmd(annotations_path, correct_threshold, useful_threshold, out):
    """Aggregate human annotations into error/correctness rates."""
    try:
        records = load_annotations(annotations_path)
        agg = aggregate_annotations(records, correct_threshold, useful_threshold)
    except AnnotationError as exc:
        raise click.ClickException(str(exc))
    _emit_json(agg.to_dict(), out)


def _parse_labeled(values: tuple[str, ...], flag: str) -> list[tuple[str, str]]:
    pairs = []
    for value in values:
        label, sep, path = value.partition("=")
        if not sep or not label or not path:
            raise click.UsageError(f"{flag} takes LABEL=PATH, got {value!r}")
        pairs.append((label, path))
    return pairs


def _run_report_from_file(path: str) -> RunReport:
    data = json.loads(Path(path).read_text())
    return RunReport(
        task=data.get("task", "full_proof"),
        items=[],
        means=MetricReport(**data["means"]),
        failures=[],
        attempted=data.get("attempted", 0),
        config=data.get("config", {}),
        seed=data.get("seed", 0),
    )


@main.command("correlate")
@click.option("--run", "runs", multiple=True, required=True, help="LABEL=report.json (repeatable).")
@click.option("--aggregate", "aggregates", multiple=True, required=True, help="LABEL=aggregate.json (repeatable).")
@click.option("--out", type=click.Path())
def correlate(runs, aggregates, out):
    """Pearson correlation of automatic metric means with human rates across
    matching labels."""
    try:
        run_pairs = [(label, _run_report_from_file(path)) for label, path in _parse_labeled(runs, "--run")]
        agg_pairs = []
        for label, path in _parse_labeled(aggregates, "--aggregate"):
            data = json.loads(Path(path).read_text())
            agg_pairs.append((label, AggregateReport(**data)))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise click.ClickException(f"failed to load inputs: {exc}")
    matrix = correlate_matrices(run_pairs, agg_pairs)
    _emit_json(matrix.to_dict(), out)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--retrievals", "retrievals_path", type=click.Path(), help="Retrievals table for setting=retrieved requests.")
@click.option("--sync-timeout", type=float, default=15.0, show_default=True, help="Seconds before /v1/prove answers 202 + job token.")
@click.pass_obj
def serve(state: CliState, host, port, retrievals_path, sync_timeout):
    """Serve the suggestion/proving HTTP API."""
    import uvicorn

    from .service import create_app

    corpus = state.load_corpus()
    seed = state.resolved_seed()
    backend = state.build_backend(seed)
    retrievals = None
    if retrievals_path:
        try:
            retrievals = load_retrievals(retrievals_path, corpus)
        except RunError as exc:
            raise click.ClickException(str(exc))
    decode_config = None
    if state.config_path:
        decode_config = state.load_config().decode
    app = create_app(corpus, backend, decode_config=decode_config, retrievals=retrievals, sync_timeout=sync_timeout)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
