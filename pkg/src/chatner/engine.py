"""The estimator: configure, contextualize with a schema, then predict.

The interface follows scikit-learn conventions: every constructor argument
is stored verbatim as a public attribute and reported by ``get_params``,
nothing is validated until :meth:`NerModel.contextualize` (the fit step),
and fitted state lives in trailing-underscore attributes. ``predict``
refuses to run before ``contextualize``.
"""

from __future__ import annotations

import inspect
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .client import (
    BackendConfig,
    CompletionBackend,
    DEFAULT_BASE_URL,
    HttpBackend,
    chat_complete,
)
from .domain import AnnotatedDocument, EntitySchema, NerConfig
from .errors import ChatnerError, ConfigError, MalformedResponseError, ParseError
from .parsing import (
    ParseReport,
    merge_turn_annotations,
    parse_inline,
    parse_json_answer,
)
from .prompting import (
    ChatMessage,
    MultiTurnState,
    augment_with_pos,
    compose_system_prompt,
    next_turn,
    render_examples,
    start_turns,
)
from .templates import PromptTemplateSet
from .validation import check_is_contextualized, ensure_examples, ensure_texts


@dataclass(frozen=True)
class PredictionResult:
    """Outcome for one document in a batch.

    ``error`` carries the per-document failure, if any, so one bad document
    never aborts a batch; failed documents keep their input text with an
    empty annotation set.
    """

    document: AnnotatedDocument
    report: ParseReport
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _resolve_templates(
    templates: PromptTemplateSet | Mapping[str, str] | str | Path | None,
    language: str,
) -> PromptTemplateSet:
    if templates is None:
        return PromptTemplateSet.default(language)
    if isinstance(templates, PromptTemplateSet):
        return templates
    if isinstance(templates, (str, Path)):
        return PromptTemplateSet.from_file(templates, language=language)
    if isinstance(templates, Mapping):
        return PromptTemplateSet.with_overrides(templates, language=language)
    raise ConfigError(
        "templates must be a PromptTemplateSet, a mapping of overrides, "
        f"or a path, got {type(templates).__name__}"
    )


class NerModel:
    """Named entity recognition through a chat-completion model.

    Parameters
    ----------
    method : "single_turn" asks for every entity in one exchange;
        "multi_turn" dedicates one turn per entity, which helps weaker
        models and allows one span to carry several labels.
    multi_turn_mode : "step_by_step" parses every turn's answer and merges
        them; "final_step" only parses a closing answer covering all
        entities.
    answer_shape : "inline" expects the text echoed back with mentions
        wrapped in tags; "json" expects an object of label -> mentions.
    delimiters : optional custom (open, close) pair replacing the
        label-named tags; multi-turn only.
    pos_mode : "none", "via_llm" (one extra request asks the model to
        part-of-speech tag the text first), or "via_hook" (``pos_tagger``
        is called instead).
    examples, entities : supplied to :meth:`contextualize`, not here.
    backend : any object with a ``complete(conversation, config)`` method;
        defaults to the live HTTP client for ``base_url``.

    The remaining parameters mirror the connection settings of
    :class:`chatner.client.BackendConfig`.
    """

    def __init__(
        self,
        *,
        method: str = "single_turn",
        multi_turn_mode: str = "step_by_step",
        answer_shape: str = "inline",
        delimiters: tuple[str, str] | None = None,
        pos_mode: str = "none",
        pos_tagger: Callable | None = None,
        model: str = "gpt-3.5-turbo",
        temperature: float = 0.0,
        max_tokens: int = 1024,
        max_retries: int = 3,
        max_concurrency: int = 1,
        language: str = "en",
        templates: PromptTemplateSet | Mapping[str, str] | str | Path | None = None,
        backend: CompletionBackend | None = None,
        base_url: str = DEFAULT_BASE_URL,
        api_key: str | None = None,
        timeout: float = 60.0,
        initial_backoff_ms: float = 500.0,
    ):
        self.method = method
        self.multi_turn_mode = multi_turn_mode
        self.answer_shape = answer_shape
        self.delimiters = delimiters
        self.pos_mode = pos_mode
        self.pos_tagger = pos_tagger
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.max_concurrency = max_concurrency
        self.language = language
        self.templates = templates
        self.backend = backend
        self.base_url = base_url
        self.api_key = api_key
        self.timeout = timeout
        self.initial_backoff_ms = initial_backoff_ms
        self.schema_: EntitySchema | None = None

    # -- scikit-learn style parameter plumbing ---------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [name for name in signature.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict[str, Any]:
        """Constructor parameters as a dict, scikit-learn style."""
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params: Any) -> "NerModel":
        """Update constructor parameters; unknown names raise ValueError."""
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    # -- lifecycle --------------------------------------------------------

    @property
    def is_contextualized(self) -> bool:
        return self.schema_ is not None

    def contextualize(
        self,
        entities: EntitySchema | Mapping[str, str],
        examples: Sequence[AnnotatedDocument] | None = None,
    ) -> "NerModel":
        """Bind the entity schema (and optional few-shot examples).

        This is the fit step: it validates the whole configuration, builds
        the prompt prefix (system message plus demonstration pairs), and
        unlocks :meth:`predict`. Returns self for chaining.
        """
        schema = entities if isinstance(entities, EntitySchema) else EntitySchema(entities)
        config = NerConfig(
            prompting_method=self.method,
            multi_turn_mode=self.multi_turn_mode,
            answer_shape=self.answer_shape,
            delimiters=self.delimiters,
            pos_mode=self.pos_mode,
            examples=tuple(examples or ()),
            model=self.model,
            temperature=self.temperature,
            max_retries=self.max_retries,
            max_concurrency=self.max_concurrency,
            language=self.language,
        )
        if config.pos_mode == "via_hook" and self.pos_tagger is None:
            raise ConfigError("pos_mode 'via_hook' needs the pos_tagger parameter")
        templates = _resolve_templates(self.templates, self.language)
        checked_examples = ensure_examples(config.examples, schema, config)
        system = compose_system_prompt(schema, config, templates)
        demonstrations = render_examples(checked_examples, schema, config, templates)
        prefix = [system]
        for user, assistant in demonstrations:
            prefix.extend((user, assistant))
        self.config_ = config
        self.templates_ = templates
        self.examples_ = checked_examples
        self.backend_ = self.backend if self.backend is not None else HttpBackend()
        self.backend_config_ = BackendConfig(
            base_url=self.base_url,
            api_key=self.api_key,
            model=self.model,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            timeout=self.timeout,
            max_retries=self.max_retries,
            initial_backoff_ms=self.initial_backoff_ms,
        )
        self.prefix_ = tuple(prefix)
        self.schema_ = schema
        return self

    # -- prediction -------------------------------------------------------

    def _complete(self, conversation: Sequence[ChatMessage]) -> str:
        return chat_complete(conversation, self.backend_config_, backend=self.backend_)

    def _parse_json_with_retry(
        self,
        conversation: list[ChatMessage],
        reply: str,
        original: str,
        schema: EntitySchema,
    ) -> tuple[AnnotatedDocument, ParseReport, str]:
        """Parse a JSON answer, re-requesting once if it does not parse."""
        try:
            document, report = parse_json_answer(reply, original, schema)
            return document, report, reply
        except ParseError:
            retry_reply = self._complete(conversation)
            document, report = parse_json_answer(retry_reply, original, schema)
            return document, report, retry_reply

    def _augmented(self, text: str) -> str:
        if self.config_.pos_mode == "none":
            return text
        return augment_with_pos(
            text,
            self.config_,
            tagger=self.pos_tagger,
            backend=self.backend_,
            backend_config=self.backend_config_,
            templates=self.templates_,
        )

    def predict_one(self, text: str) -> tuple[AnnotatedDocument, ParseReport]:
        """Annotate one text. Backend and double-parse failures raise."""
        check_is_contextualized(self)
        if not isinstance(text, str):
            raise TypeError(f"text must be a string, got {type(text).__name__}")
        config = self.config_
        block = self._augmented(text)
        if config.prompting_method == "single_turn":
            conversation = list(self.prefix_)
            conversation.append(
                ChatMessage("user", self.templates_.render("user_text", text=block))
            )
            reply = self._complete(conversation)
            if config.answer_shape == "json":
                document, report, _ = self._parse_json_with_retry(
                    conversation, reply, text, self.schema_
                )
            else:
                document, report = parse_inline(reply, text, self.schema_)
            return document, report
        return self._predict_multi_turn(text, block)

    def _predict_multi_turn(
        self, text: str, block: str
    ) -> tuple[AnnotatedDocument, ParseReport]:
        config = self.config_
        schema = self.schema_
        step_by_step = config.multi_turn_mode == "step_by_step"
        conversation = list(self.prefix_)
        state = start_turns(block, schema, config)
        per_turn: list[frozenset] = []
        warnings: list[str] = []
        final: tuple[AnnotatedDocument, ParseReport] | None = None
        message = next_turn(state, self.templates_)
        while message is not None:
            conversation.append(message)
            reply = self._complete(conversation)
            if state.last_was_final:
                # The closing request covers the full schema with default tags.
                if config.answer_shape == "json":
                    document, report, reply = self._parse_json_with_retry(
                        conversation, reply, text, schema
                    )
                else:
                    document, report = parse_inline(reply, text, schema)
                final = (document, report)
            elif step_by_step:
                label = state.last_label
                sub_schema = EntitySchema({label: schema[label]})
                if config.answer_shape == "json":
                    turn_doc, turn_report, reply = self._parse_json_with_retry(
                        conversation, reply, text, sub_schema
                    )
                else:
                    turn_doc, turn_report = parse_inline(
                        reply, text, sub_schema, config.delimiters
                    )
                per_turn.append(turn_doc.annotations)
                warnings.extend(turn_report.warnings)
            upcoming = next_turn(state, self.templates_)
            if upcoming is not None:
                if not reply:
                    raise MalformedResponseError(
                        "empty completion cannot continue a multi-turn exchange"
                    )
                conversation.append(ChatMessage("assistant", reply))
            message = upcoming
        if final is not None:
            return final
        annotations = merge_turn_annotations(per_turn)
        document = AnnotatedDocument(text, annotations)
        return document, ParseReport(document.annotations, tuple(warnings))

    def predict(
        self,
        texts: Sequence[str],
        max_concurrency: int | None = None,
    ) -> list[PredictionResult]:
        """Annotate a batch of texts, preserving input order.

        At most ``max_concurrency`` requests are in flight at once
        (defaulting to the constructor parameter). A failure is recorded in
        that document's result instead of aborting the batch.
        """
        check_is_contextualized(self)
        items = ensure_texts(texts)
        workers = max_concurrency if max_concurrency is not None else self.max_concurrency
        if workers < 1:
            raise ConfigError("max_concurrency must be >= 1")
        if not items:
            return []

        def run(text: str) -> PredictionResult:
            try:
                document, report = self.predict_one(text)
                return PredictionResult(document, report)
            except ChatnerError as exc:
                empty = AnnotatedDocument(text)
                return PredictionResult(empty, ParseReport(frozenset(), ()), error=exc)

        if workers == 1 or len(items) == 1:
            return [run(text) for text in items]
        with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
            return list(executor.map(run, items))

    # -- prompt inspection -------------------------------------------------

    def plan_conversation(self, text: str) -> tuple[ChatMessage, ...]:
        """The exact messages predict would submit for ``text``, without
        contacting any backend.

        Assistant replies that would come from the model appear as
        ``{response}`` placeholders; with pos_mode "via_llm" the tag block
        appears as a ``{pos_tags}`` placeholder.
        """
        check_is_contextualized(self)
        config = self.config_
        if config.pos_mode == "via_llm":
            block = self.templates_.render("pos_block", text=text, tags="{pos_tags}")
        elif config.pos_mode == "via_hook":
            block = self._augmented(text)
        else:
            block = text
        messages = list(self.prefix_)
        if config.prompting_method == "single_turn":
            messages.append(
                ChatMessage("user", self.templates_.render("user_text", text=block))
            )
            return tuple(messages)
        state = start_turns(block, self.schema_, config)
        message = next_turn(state, self.templates_)
        while message is not None:
            messages.append(message)
            messages.append(ChatMessage("assistant", "{response}"))
            message = next_turn(state, self.templates_)
        return tuple(messages)


class ZeroShotNer(NerModel):
    """NER from instructions alone: the schema is the entire supervision."""

    def contextualize(
        self,
        entities: EntitySchema | Mapping[str, str],
        examples: Sequence[AnnotatedDocument] | None = None,
    ) -> "ZeroShotNer":
        if examples:
            raise ConfigError(
                "a zero-shot model takes no examples; use FewShotNer instead"
            )
        super().contextualize(entities, examples=None)
        return self


class FewShotNer(NerModel):
    """NER with in-context demonstrations rendered into the prompt."""

    def contextualize(
        self,
        entities: EntitySchema | Mapping[str, str],
        examples: Sequence[AnnotatedDocument] | None = None,
    ) -> "FewShotNer":
        if not examples:
            raise ConfigError("a few-shot model requires a non-empty examples list")
        super().contextualize(entities, examples=examples)
        return self
