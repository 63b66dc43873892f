"""Turning model completions back into character-offset annotations.

The in-line parser never trusts the model's echo blindly: the completion
with its tags stripped is aligned against the original text and every
recovered span is verified to cover the exact mention the model enclosed.
Spans the alignment cannot place verbatim are relocated by exact substring
search, and dropped with a warning as a last resort, so a recovered
annotation is always a verbatim occurrence of the enclosed mention.
"""

from __future__ import annotations

import difflib
import json
import re
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable

from .domain import AnnotatedDocument, Annotation, EntitySchema
from .errors import ConfigError, ParseError

_TOKEN_RE = re.compile(r"\S+")

# Above this product of token counts the quadratic LCS table is not worth
# building; difflib's matching blocks are still monotone, just not maximal.
_LCS_LIMIT = 1_000_000


@dataclass(frozen=True)
class AlignedSegment:
    """A contiguous region of the stripped completion mapped to the original."""

    stripped_start: int
    stripped_end: int
    original_start: int
    original_end: int
    quality: float


@dataclass(frozen=True)
class AlignmentMap:
    """Monotone mapping from stripped-completion offsets to original offsets.

    Segments tile the stripped text left to right; each carries a match
    quality in [0, 1], where 1.0 means the region is a verbatim copy.
    """

    segments: tuple[AlignedSegment, ...]

    def map_offset(self, offset: int, *, prefer_end: bool = False) -> tuple[int, float]:
        """Map one stripped offset to an original offset and region quality.

        ``prefer_end`` resolves offsets sitting on a segment boundary to the
        left segment, which is what the exclusive end of a span wants.
        """
        if not self.segments:
            return 0, 0.0
        starts = [seg.stripped_start for seg in self.segments]
        if prefer_end:
            index = bisect_right(starts, offset - 1) - 1 if offset > 0 else 0
        else:
            index = bisect_right(starts, offset) - 1
        index = max(0, min(index, len(self.segments) - 1))
        seg = self.segments[index]
        offset = max(seg.stripped_start, min(offset, seg.stripped_end))
        s_len = seg.stripped_end - seg.stripped_start
        o_len = seg.original_end - seg.original_start
        if s_len == 0:
            mapped = seg.original_end if prefer_end else seg.original_start
        elif s_len == o_len:
            mapped = seg.original_start + (offset - seg.stripped_start)
        else:
            mapped = seg.original_start + round(
                (offset - seg.stripped_start) * o_len / s_len
            )
        return mapped, seg.quality

    def map_span(self, start: int, end: int) -> tuple[int, int, float]:
        """Map a stripped span; quality is the worst across touched segments."""
        mapped_start, start_quality = self.map_offset(start)
        mapped_end, end_quality = self.map_offset(end, prefer_end=True)
        quality = min(start_quality, end_quality)
        for seg in self.segments:
            if seg.stripped_start < end and seg.stripped_end > start:
                quality = min(quality, seg.quality)
        if mapped_end < mapped_start:
            mapped_end = mapped_start
        return mapped_start, mapped_end, quality


@dataclass(frozen=True)
class ParseReport:
    """What a parse recovered and everything it had to gloss over."""

    annotations: frozenset[Annotation]
    warnings: tuple[str, ...]


def _lcs_token_pairs(a: list[str], b: list[str]) -> list[tuple[int, int]]:
    """Index pairs of a longest common subsequence of the two token lists."""
    if not a or not b:
        return []
    if len(a) * len(b) > _LCS_LIMIT:
        matcher = difflib.SequenceMatcher(None, a, b, autojunk=False)
        return [
            (i + k, j + k)
            for i, j, size in matcher.get_matching_blocks()
            for k in range(size)
        ]
    rows = len(a) + 1
    cols = len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(len(a) - 1, -1, -1):
        row = table[i]
        below = table[i + 1]
        for j in range(len(b) - 1, -1, -1):
            if a[i] == b[j]:
                row[j] = below[j + 1] + 1
            else:
                row[j] = max(below[j], row[j + 1])
    pairs: list[tuple[int, int]] = []
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def _gap_segments(
    stripped: str, original: str, s_lo: int, s_hi: int, o_lo: int, o_hi: int
) -> list[AlignedSegment]:
    """Segments covering an unmatched region between two token matches."""
    gap_s = stripped[s_lo:s_hi]
    gap_o = original[o_lo:o_hi]
    if not gap_s:
        return []
    if gap_s == gap_o:
        return [AlignedSegment(s_lo, s_hi, o_lo, o_hi, 1.0)]
    if not gap_o:
        return [AlignedSegment(s_lo, s_hi, o_lo, o_hi, 0.0)]
    # Character-level refinement inside the gap: equal blocks map exactly,
    # the fuzz in between maps proportionally with its own similarity.
    matcher = difflib.SequenceMatcher(None, gap_s, gap_o, autojunk=False)
    segments: list[AlignedSegment] = []
    prev_a = prev_b = 0

    def fuzzy(a_lo: int, a_hi: int, b_lo: int, b_hi: int) -> None:
        if a_hi == a_lo:
            return
        piece_s = gap_s[a_lo:a_hi]
        piece_o = gap_o[b_lo:b_hi]
        if not piece_o:
            quality = 0.0
        else:
            quality = difflib.SequenceMatcher(None, piece_s, piece_o, autojunk=False).ratio()
        segments.append(
            AlignedSegment(s_lo + a_lo, s_lo + a_hi, o_lo + b_lo, o_lo + b_hi, quality)
        )

    for block in matcher.get_matching_blocks():
        fuzzy(prev_a, block.a, prev_b, block.b)
        if block.size:
            segments.append(
                AlignedSegment(
                    s_lo + block.a,
                    s_lo + block.a + block.size,
                    o_lo + block.b,
                    o_lo + block.b + block.size,
                    1.0,
                )
            )
            prev_a = block.a + block.size
            prev_b = block.b + block.size
    return segments


def align_texts(stripped: str, original: str) -> AlignmentMap:
    """Align a tag-stripped completion against the original text.

    Token-level longest-common-subsequence alignment (tokens are maximal
    runs of non-whitespace) refined to character offsets. Identical inputs
    give the identity map with quality 1.0; an empty stripped text gives an
    empty map.
    """
    if stripped == original:
        if not stripped:
            return AlignmentMap(())
        return AlignmentMap(
            (AlignedSegment(0, len(stripped), 0, len(original), 1.0),)
        )
    tokens_s = list(_TOKEN_RE.finditer(stripped))
    tokens_o = list(_TOKEN_RE.finditer(original))
    pairs = _lcs_token_pairs(
        [m.group() for m in tokens_s], [m.group() for m in tokens_o]
    )
    segments: list[AlignedSegment] = []
    prev_s = prev_o = 0
    for i, j in pairs:
        tok_s = tokens_s[i]
        tok_o = tokens_o[j]
        segments.extend(
            _gap_segments(stripped, original, prev_s, tok_s.start(), prev_o, tok_o.start())
        )
        segments.append(
            AlignedSegment(tok_s.start(), tok_s.end(), tok_o.start(), tok_o.end(), 1.0)
        )
        prev_s, prev_o = tok_s.end(), tok_o.end()
    segments.extend(
        _gap_segments(stripped, original, prev_s, len(stripped), prev_o, len(original))
    )
    return AlignmentMap(tuple(segments))


def _scan_label_tags(
    completion: str, labels: Iterable[str]
) -> tuple[str, list[tuple[bool, str, int]]]:
    """Strip ``<label>``/``</label>`` tags for known labels.

    Returns the stripped text and tag events as (is_close, label, offset in
    stripped text). Anything that merely looks like a tag but names no
    schema label stays in the text untouched.
    """
    alternatives = "|".join(
        re.escape(label) for label in sorted(labels, key=len, reverse=True)
    )
    pattern = re.compile(f"<(/?)({alternatives})>")
    parts: list[str] = []
    events: list[tuple[bool, str, int]] = []
    cursor = 0
    length = 0
    for match in pattern.finditer(completion):
        chunk = completion[cursor : match.start()]
        parts.append(chunk)
        length += len(chunk)
        events.append((bool(match.group(1)), match.group(2), length))
        cursor = match.end()
    parts.append(completion[cursor:])
    return "".join(parts), events


def _scan_delimiters(
    completion: str, open_: str, close: str, label: str
) -> tuple[str, list[tuple[bool, str, int]]]:
    """Strip one custom delimiter pair bound to a single target label."""
    parts: list[str] = []
    events: list[tuple[bool, str, int]] = []
    cursor = 0
    length = 0
    inside = False
    while True:
        if open_ == close:
            index = completion.find(open_, cursor)
            if index == -1:
                break
            is_close, token = inside, open_
            inside = not inside
        else:
            i_open = completion.find(open_, cursor)
            i_close = completion.find(close, cursor)
            if i_open == -1 and i_close == -1:
                break
            if i_close == -1 or (i_open != -1 and i_open < i_close):
                index, is_close, token = i_open, False, open_
            elif i_open == i_close:
                # One delimiter is a prefix of the other; take the longer.
                longer = open_ if len(open_) >= len(close) else close
                index, is_close, token = i_open, longer is close, longer
            else:
                index, is_close, token = i_close, True, close
        chunk = completion[cursor:index]
        parts.append(chunk)
        length += len(chunk)
        events.append((is_close, label, length))
        cursor = index + len(token)
    parts.append(completion[cursor:])
    return "".join(parts), events


def _pair_tag_events(
    events: list[tuple[bool, str, int]], warnings: list[str]
) -> list[tuple[int, int, str]]:
    """Stack-match open/close events into spans, warning about strays."""
    stack: list[tuple[str, int]] = []
    spans: list[tuple[int, int, str]] = []
    for is_close, label, offset in events:
        if not is_close:
            stack.append((label, offset))
            continue
        if stack and stack[-1][0] == label:
            start = stack.pop()[1]
            spans.append((start, offset, label))
            continue
        match_index = next(
            (i for i in range(len(stack) - 1, -1, -1) if stack[i][0] == label), None
        )
        if match_index is None:
            warnings.append(f"stray closing tag for {label!r} ignored")
            continue
        for dropped_label, _ in stack[match_index + 1 :]:
            warnings.append(f"unmatched opening tag for {dropped_label!r} dropped")
        start = stack[match_index][1]
        del stack[match_index:]
        spans.append((start, offset, label))
    for dropped_label, _ in stack:
        warnings.append(f"unmatched opening tag for {dropped_label!r} dropped")
    return spans


def _all_positions(text: str, needle: str) -> list[int]:
    positions = []
    start = 0
    while True:
        index = text.find(needle, start)
        if index == -1:
            return positions
        positions.append(index)
        start = index + 1


def _nonoverlapping_spans(text: str, needle: str) -> list[tuple[int, int]]:
    """All non-overlapping occurrences, left to right."""
    spans = []
    start = 0
    while True:
        index = text.find(needle, start)
        if index == -1:
            return spans
        spans.append((index, index + len(needle)))
        start = index + len(needle)


def parse_inline(
    completion: str,
    original: str,
    schema: EntitySchema,
    delimiters: tuple[str, str] | None = None,
) -> tuple[AnnotatedDocument, ParseReport]:
    """Recover annotations from a tag-annotated echo of ``original``.

    Tags are extracted with a stack-based scan: the default ``<label>``
    tags for every schema label, or, when ``delimiters`` is given, one
    custom open/close pair bound to the schema's single label. The stripped
    echo is aligned against the original and each span is kept only where
    it covers its mention verbatim; otherwise it is relocated by exact
    substring search or dropped with a warning. Never raises on model
    output, only on misuse (delimiters with a multi-label schema).
    """
    warnings: list[str] = []
    if delimiters is not None:
        if len(schema) != 1:
            raise ConfigError(
                "custom delimiters require a single-label schema, "
                f"got {list(schema.labels)}"
            )
        open_, close = delimiters
        stripped, events = _scan_delimiters(completion, open_, close, schema.labels[0])
    else:
        stripped, events = _scan_label_tags(completion, schema.labels)
    spans = _pair_tag_events(events, warnings)
    amap = align_texts(stripped, original)
    annotations: set[Annotation] = set()
    for start, end, label in spans:
        mention = stripped[start:end]
        if not mention:
            warnings.append(f"empty {label!r} tag pair dropped")
            continue
        mapped_start, mapped_end, quality = amap.map_span(start, end)
        if original[mapped_start:mapped_end] == mention:
            annotations.add(Annotation(mapped_start, mapped_end, label))
            continue
        positions = _all_positions(original, mention)
        if positions:
            best = min(positions, key=lambda p: (abs(p - mapped_start), p))
            annotations.add(Annotation(best, best + len(mention), label))
            warnings.append(
                f"mention {mention!r} relocated by exact search "
                f"(alignment quality {quality:.2f})"
            )
        else:
            warnings.append(
                f"mention {mention!r} not found in the original text; dropped"
            )
    document = AnnotatedDocument(original, frozenset(annotations))
    return document, ParseReport(document.annotations, tuple(warnings))


def extract_json_block(text: str) -> str | None:
    """The first balanced ``{...}`` block in ``text``, or None.

    Walks candidate opening braces left to right and returns the first one
    that closes, honouring JSON string literals and escapes.
    """
    for start in _all_positions(text, "{"):
        depth = 0
        in_string = False
        escaped = False
        for index in range(start, len(text)):
            char = text[index]
            if in_string:
                if escaped:
                    escaped = False
                elif char == "\\":
                    escaped = True
                elif char == '"':
                    in_string = False
                continue
            if char == '"':
                in_string = True
            elif char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth == 0:
                    return text[start : index + 1]
    return None


def parse_json_answer(
    completion: str,
    original: str,
    schema: EntitySchema,
    occurrences: str = "all",
) -> tuple[AnnotatedDocument, ParseReport]:
    """Recover annotations from a JSON object of label -> mention list.

    The first balanced ``{...}`` block in the completion is decoded, so
    prose around the object is fine. Each mention is located by exact,
    case-sensitive search in the original text; ``occurrences`` selects
    whether every non-overlapping occurrence is annotated ("all", the
    default) or only the first ("first"). Mentions that fail verbatim are
    retried with surrounding whitespace trimmed, then dropped with a
    warning. Unknown labels are dropped with a warning. A missing or
    undecodable JSON block raises ParseError.
    """
    if occurrences not in ("all", "first"):
        raise ConfigError(f"occurrences must be 'all' or 'first', got {occurrences!r}")
    block = extract_json_block(completion)
    if block is None:
        raise ParseError("no balanced JSON block found in the completion")
    try:
        data = json.loads(block)
    except json.JSONDecodeError as exc:
        raise ParseError(f"completion JSON is invalid: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("completion JSON is not an object")
    warnings: list[str] = []
    annotations: set[Annotation] = set()
    for key, value in data.items():
        if key not in schema:
            warnings.append(f"unknown label {key!r} dropped")
            continue
        if isinstance(value, str):
            warnings.append(f"single string for label {key!r} treated as one mention")
            value = [value]
        if not isinstance(value, list):
            warnings.append(f"value for label {key!r} is not a list; dropped")
            continue
        for mention in value:
            if not isinstance(mention, str):
                warnings.append(f"non-string mention {mention!r} for {key!r} dropped")
                continue
            if not mention:
                warnings.append(f"empty mention for {key!r} dropped")
                continue
            spans = _nonoverlapping_spans(original, mention)
            if not spans and mention.strip() and mention.strip() != mention:
                trimmed = mention.strip()
                spans = _nonoverlapping_spans(original, trimmed)
                if spans:
                    warnings.append(
                        f"mention {mention!r} matched after trimming whitespace"
                    )
                    mention = trimmed
            if not spans:
                warnings.append(
                    f"mention {mention!r} not found in the original text; dropped"
                )
                continue
            if occurrences == "first":
                spans = spans[:1]
            for start, end in spans:
                annotations.add(Annotation(start, end, key))
    document = AnnotatedDocument(original, frozenset(annotations))
    return document, ParseReport(document.annotations, tuple(warnings))


def merge_turn_annotations(
    per_turn: Iterable[Iterable[Annotation]],
) -> frozenset[Annotation]:
    """Set union of the annotations recovered by each turn."""
    merged: set[Annotation] = set()
    for annotations in per_turn:
        merged.update(annotations)
    return frozenset(merged)
