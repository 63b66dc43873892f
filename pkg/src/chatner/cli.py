"""Command-line interface: annotate texts, score predictions, inspect prompts.

Exit codes: 0 means every document succeeded, 2 means the run finished but
some documents failed, 1 means the run itself could not proceed (bad flags,
unusable schema, unreachable backend).
"""

from __future__ import annotations

import importlib
import json
import sys
from pathlib import Path

import click

from . import __version__
from .client import DEFAULT_BASE_URL, MockBackend
from .domain import EntitySchema, document_from_record, document_to_record
from .engine import FewShotNer, NerModel, ZeroShotNer
from .errors import (
    AuthenticationError,
    BackendConnectionError,
    ChatnerError,
    ConfigError,
)
from .evaluation import evaluate as evaluate_documents
from .evaluation import read_conll_file

_METHODS = {"single": "single_turn", "multi": "multi_turn"}
_MULTI_MODES = {"step": "step_by_step", "final": "final_step"}
_POS_MODES = {"none": "none", "llm": "via_llm", "hook": "via_hook"}


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_hook(spec: str):
    module_name, _, attr = spec.partition(":")
    if not module_name or not attr:
        raise ConfigError(f"--pos-hook must look like module:function, got {spec!r}")
    try:
        module = importlib.import_module(module_name)
        hook = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load POS hook {spec!r}: {exc}") from exc
    if not callable(hook):
        raise ConfigError(f"POS hook {spec!r} is not callable")
    return hook


def _resolve_backend(spec: str | None):
    """None means the live HTTP client; "mock:<file>" loads a scripted one."""
    if spec is None:
        return None
    kind, _, path = spec.partition(":")
    if kind == "mock" and path:
        return MockBackend.from_file(path)
    raise ConfigError(f"unknown backend {spec!r}; expected mock:<script-file>")


def _read_examples(path: str):
    content = Path(path).read_text(encoding="utf-8")
    stripped = content.lstrip()
    try:
        if stripped.startswith("["):
            records = json.loads(content)
        else:
            records = [json.loads(line) for line in content.splitlines() if line.strip()]
        return [document_from_record(record) for record in records]
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot read examples from {path}: {exc}") from exc


def _read_input_texts(path: str | None) -> list[str]:
    """One document per line; a line may also be a JSON record with "text"."""
    if path is None:
        lines = sys.stdin.read().splitlines()
    else:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    texts = []
    for line in lines:
        if not line.strip():
            continue
        if line.lstrip().startswith("{"):
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                record = None
            if isinstance(record, dict) and isinstance(record.get("text"), str):
                texts.append(record["text"])
                continue
        texts.append(line)
    return texts


def model_options(require_schema: bool = True):
    """Flags shared by every subcommand that can build a model."""

    def wrap(command):
        options = [
            click.option("--schema", "schema_path", required=require_schema,
                         default=None,
                         help="JSON file mapping entity labels to descriptions."),
            click.option("--examples", "examples_path", default=None,
                         help="JSON (list or lines) of annotated example records."),
            click.option("--method", type=click.Choice(sorted(_METHODS)),
                         default="single", show_default=True,
                         help="Prompt for all entities at once, or one per turn."),
            click.option("--multi-mode", type=click.Choice(sorted(_MULTI_MODES)),
                         default="step", show_default=True,
                         help="Parse every turn, or only a final combined answer."),
            click.option("--shape", type=click.Choice(["inline", "json"]),
                         default="inline", show_default=True,
                         help="Expected answer shape."),
            click.option("--delimiters", nargs=2, default=None,
                         help="Custom open/close mention markers (multi-turn only)."),
            click.option("--pos", type=click.Choice(sorted(_POS_MODES)),
                         default="none", show_default=True,
                         help="Part-of-speech augmentation of the query text."),
            click.option("--pos-hook", default=None,
                         help="module:function returning (token, tag) pairs; "
                              "used with --pos hook."),
            click.option("--base-url", default=DEFAULT_BASE_URL, show_default=True),
            click.option("--model", "model_name", default="gpt-3.5-turbo",
                         show_default=True),
            click.option("--temperature", type=float, default=0.0, show_default=True),
            click.option("--concurrency", type=int, default=1, show_default=True,
                         help="Maximum in-flight requests."),
            click.option("--retries", type=int, default=3, show_default=True,
                         help="Maximum retries after a retryable backend failure."),
            click.option("--backend", "backend_spec", default=None,
                         help="mock:<script-file> for an offline scripted backend."),
            click.option("--templates", "templates_path", default=None,
                         help="JSON file of prompt template overrides."),
        ]
        for option in reversed(options):
            command = option(command)
        return command

    return wrap


def _build_model(
    *,
    schema_path: str,
    examples_path: str | None,
    method: str,
    multi_mode: str,
    shape: str,
    delimiters,
    pos: str,
    pos_hook: str | None,
    base_url: str,
    model_name: str,
    temperature: float,
    concurrency: int,
    retries: int,
    backend_spec: str | None,
    templates_path: str | None,
) -> NerModel:
    schema = EntitySchema.from_file(schema_path)
    examples = _read_examples(examples_path) if examples_path else None
    cls = FewShotNer if examples else ZeroShotNer
    model = cls(
        method=_METHODS[method],
        multi_turn_mode=_MULTI_MODES[multi_mode],
        answer_shape=shape,
        delimiters=tuple(delimiters) if delimiters else None,
        pos_mode=_POS_MODES[pos],
        pos_tagger=_load_hook(pos_hook) if pos_hook else None,
        model=model_name,
        temperature=temperature,
        max_concurrency=concurrency,
        max_retries=retries,
        base_url=base_url,
        templates=templates_path,
        backend=_resolve_backend(backend_spec),
    )
    model.contextualize(schema, examples=examples)
    return model


def _result_record(result) -> dict:
    record = document_to_record(result.document)
    record["warnings"] = list(result.report.warnings)
    if result.error is not None:
        record["error"] = str(result.error)
    return record


def _write_lines(path: str | None, lines: list[str]) -> None:
    payload = "".join(line + "\n" for line in lines)
    if path is None:
        sys.stdout.write(payload)
    else:
        Path(path).write_text(payload, encoding="utf-8")


def _finish_batch(results) -> None:
    """Map per-document failures to the exit-code convention."""
    fatal = next(
        (
            r.error
            for r in results
            if isinstance(r.error, (AuthenticationError, BackendConnectionError))
        ),
        None,
    )
    if fatal is not None:
        _fail(str(fatal))
    if any(r.error is not None for r in results):
        sys.exit(2)


@click.group()
@click.version_option(version=__version__, prog_name="chatner")
def main() -> None:
    """Named entity recognition through chat-completion language models."""


@main.command("annotate")
@model_options()
@click.option("--input", "input_path", default=None,
              help="Input file, one document per line; default standard input.")
@click.option("--output", "output_path", default=None,
              help="Output file for JSON records; default standard output.")
def annotate(input_path, output_path, **model_flags) -> None:
    """Annotate documents and emit one JSON record per input line."""
    try:
        model = _build_model(**model_flags)
        texts = _read_input_texts(input_path)
        results = model.predict(texts)
        lines = [
            json.dumps(_result_record(result), ensure_ascii=False)
            for result in results
        ]
        _write_lines(output_path, lines)
    except (ChatnerError, OSError) as exc:
        _fail(str(exc))
    _finish_batch(results)


@main.command("dump-prompt")
@model_options()
@click.option("--text", "text", default=None, help="The document to plan for.")
@click.option("--input", "input_path", default=None,
              help="Read the document from this file (first non-empty line).")
def dump_prompt(text, input_path, **model_flags) -> None:
    """Print the exact conversation annotate would submit, without any request."""
    try:
        model = _build_model(**model_flags)
        if text is None:
            candidates = _read_input_texts(input_path)
            text = candidates[0] if candidates else ""
        messages = model.plan_conversation(text)
    except (ChatnerError, OSError) as exc:
        _fail(str(exc))
    click.echo("\n\n".join(f"[{m.role}]\n{m.content}" for m in messages))


@main.command("evaluate")
@model_options(require_schema=False)
@click.option("--gold", "gold_path", required=True,
              help="Gold-standard CoNLL file (token-per-line, NER tag last).")
@click.option("--predictions", "predictions_path", default=None,
              help="JSON-lines document records; omitted means annotate first.")
@click.option("--matching", type=click.Choice(["relaxed", "strict"]),
              default="relaxed", show_default=True)
@click.option("--output", "output_path", default=None,
              help="Also write the report as JSON to this file.")
def evaluate(gold_path, predictions_path, matching, output_path, **model_flags):
    """Score predictions against a gold CoNLL file and print the table."""
    results = None
    try:
        gold = read_conll_file(gold_path)
        if predictions_path is not None:
            content = Path(predictions_path).read_text(encoding="utf-8")
            try:
                predicted = [
                    document_from_record(json.loads(line))
                    for line in content.splitlines()
                    if line.strip()
                ]
            except (json.JSONDecodeError, ValueError) as exc:
                raise ConfigError(
                    f"cannot read predictions from {predictions_path}: {exc}"
                ) from exc
        else:
            if model_flags.get("schema_path") is None:
                raise ConfigError(
                    "scoring without --predictions annotates the gold texts "
                    "first and needs --schema"
                )
            model = _build_model(**model_flags)
            results = model.predict([doc.text for doc in gold])
            predicted = [result.document for result in results]
        report = evaluate_documents(predicted, gold, matching=matching)
        click.echo(report.to_table())
        if output_path is not None:
            Path(output_path).write_text(report.to_json() + "\n", encoding="utf-8")
    except (ChatnerError, OSError) as exc:
        _fail(str(exc))
    if results is not None:
        _finish_batch(results)


if __name__ == "__main__":
    main()
