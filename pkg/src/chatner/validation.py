"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

from collections.abc import Sequence

from .domain import (
    AnnotatedDocument,
    EntitySchema,
    NerConfig,
    first_overlap,
    validate_document,
)
from .errors import ConfigError, NotContextualizedError


def check_is_contextualized(model) -> None:
    """Raise unless ``model`` has been given its entity schema."""
    if getattr(model, "schema_", None) is None:
        raise NotContextualizedError(
            f"this {type(model).__name__} instance is not contextualized yet; "
            "call contextualize(entities=...) before predict"
        )


def ensure_texts(texts) -> list[str]:
    """Normalize a predict() input to a list of strings.

    A bare string is rejected: it is iterable, so silently accepting it
    would predict one document per character.
    """
    if isinstance(texts, str):
        raise TypeError("pass a sequence of texts, not a single string")
    try:
        items = list(texts)
    except TypeError:
        raise TypeError(f"texts must be a sequence of strings, got {type(texts).__name__}") from None
    for item in items:
        if not isinstance(item, str):
            raise TypeError(f"texts must all be strings, got {type(item).__name__}")
    return items


def ensure_examples(
    examples: Sequence[AnnotatedDocument],
    schema: EntitySchema,
    config: NerConfig,
) -> tuple[AnnotatedDocument, ...]:
    """Validate few-shot examples against the schema and configuration."""
    checked = []
    for position, example in enumerate(examples):
        if not isinstance(example, AnnotatedDocument):
            raise ConfigError(
                f"example {position} must be an AnnotatedDocument, "
                f"got {type(example).__name__}"
            )
        if not example.text:
            raise ConfigError(f"example {position} has empty text")
        result = validate_document(example)
        if not result.ok:
            issue = result.issues[0]
            raise ConfigError(
                f"example {position} is invalid: {issue.reason} for {issue.annotation}"
            )
        unknown = sorted(
            {ann.label for ann in example.annotations} - set(schema.labels)
        )
        if unknown:
            raise ConfigError(
                f"example {position} uses labels outside the schema: {unknown}"
            )
        if config.answer_shape == "inline":
            overlap = first_overlap(example.annotations)
            if overlap is not None:
                raise ConfigError(
                    f"example {position} has overlapping annotations "
                    f"({overlap[0]} and {overlap[1]}), which the in-line "
                    "answer shape cannot demonstrate"
                )
        checked.append(example)
    return tuple(checked)
