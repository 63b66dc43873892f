"""Completion parsing: tag scanning, alignment, JSON answers, merging."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chatner import (
    AnnotatedDocument,
    Annotation,
    ConfigError,
    EntitySchema,
    ParseError,
    align_texts,
    annotation_text,
    extract_json_block,
    merge_turn_annotations,
    parse_inline,
    parse_json_answer,
    render_inline,
    render_json,
)


@pytest.fixture
def pl_schema():
    return EntitySchema({"person": "People.", "location": "Places."})


@pytest.fixture
def country_schema():
    return EntitySchema({"person": "People.", "country": "Countries."})


class TestAlignTexts:
    def test_identity(self):
        amap = align_texts("abc def", "abc def")
        assert amap.map_offset(0) == (0, 1.0)
        assert amap.map_offset(7, prefer_end=True) == (7, 1.0)
        assert amap.map_span(0, 7) == (0, 7, 1.0)

    def test_single_token_replacement_flagged(self):
        amap = align_texts("abc deX", "abc def")
        for offset in range(5):
            mapped, quality = amap.map_offset(offset)
            assert mapped == offset
            assert quality == 1.0
        _, _, span_quality = amap.map_span(4, 7)
        assert span_quality < 1.0

    def test_empty_stripped_gives_empty_map(self):
        assert align_texts("", "abc").segments == ()

    def test_disjoint_texts_have_zero_quality(self):
        amap = align_texts("xyz", "abc")
        _, quality = amap.map_offset(1)
        assert quality == 0.0

    @given(st.text(max_size=60), st.text(max_size=60), st.data())
    @settings(max_examples=150, deadline=None)
    def test_monotone(self, stripped, original, data):
        amap = align_texts(stripped, original)
        if len(stripped) < 2:
            return
        a = data.draw(st.integers(0, len(stripped) - 2))
        b = data.draw(st.integers(a + 1, len(stripped) - 1))
        assert amap.map_offset(a)[0] <= amap.map_offset(b)[0]

    @given(st.text(max_size=60))
    @settings(max_examples=80, deadline=None)
    def test_identity_inputs_map_every_offset_identically(self, text):
        amap = align_texts(text, text)
        for offset in range(len(text) + 1):
            assert amap.map_offset(offset)[0] == offset


class TestParseInline:
    def test_tagged_echo_recovers_offsets(self, country_schema, golden_text):
        completion = (
            "<person>Fei-Fei Li</person> is a female scientist born in "
            "<country>China</country>"
        )
        doc, report = parse_inline(completion, golden_text, country_schema)
        assert doc.annotations == {
            Annotation(0, 10, "person"),
            Annotation(41, 46, "country"),
        }

    def test_untagged_echo_is_empty_and_clean(self, pl_schema):
        doc, report = parse_inline("Ana went home.", "Ana went home.", pl_schema)
        assert doc.annotations == frozenset()
        assert report.warnings == ()

    def test_custom_delimiters(self):
        schema = EntitySchema({"location": "Places."})
        doc, _ = parse_inline("@@Peru## is great", "Peru is great", schema, ("@@", "##"))
        assert doc.annotations == {Annotation(0, 4, "location")}

    def test_delimiters_need_single_label_schema(self, pl_schema):
        with pytest.raises(ConfigError):
            parse_inline("@@x##", "x", pl_schema, ("@@", "##"))

    def test_identical_open_close_delimiters(self):
        schema = EntitySchema({"location": "Places."})
        doc, _ = parse_inline("$$Peru$$ is great", "Peru is great", schema, ("$$", "$$"))
        assert doc.annotations == {Annotation(0, 4, "location")}

    def test_unknown_tags_stay_literal(self, pl_schema):
        doc, report = parse_inline("<b>Ana</b> Peru", "Ana Peru", pl_schema)
        assert doc.annotations == frozenset()
        assert report.warnings == ()

    def test_stray_closing_tag_warned(self, pl_schema):
        doc, report = parse_inline("Ana</person> Peru", "Ana Peru", pl_schema)
        assert doc.annotations == frozenset()
        assert any("stray closing" in w for w in report.warnings)

    def test_unmatched_open_tag_warned(self, pl_schema):
        doc, report = parse_inline("<person>Ana Peru", "Ana Peru", pl_schema)
        assert doc.annotations == frozenset()
        assert any("unmatched opening" in w for w in report.warnings)

    def test_empty_tag_pair_warned(self, pl_schema):
        doc, report = parse_inline("<person></person>Ana", "Ana", pl_schema)
        assert doc.annotations == frozenset()
        assert any("empty" in w for w in report.warnings)

    def test_nested_tags_give_multi_label_span(self, pl_schema):
        doc, report = parse_inline(
            "<person><location>Peru</location></person> is nice",
            "Peru is nice",
            pl_schema,
        )
        assert doc.annotations == {
            Annotation(0, 4, "person"),
            Annotation(0, 4, "location"),
        }
        assert report.warnings == ()

    def test_imperfect_echo_still_maps_exactly(self, country_schema, golden_text):
        # Echo drops the trailing period; alignment still pins both spans.
        completion = (
            "<person>Fei-Fei Li</person> is a female scientist born in "
            "<country>China</country>"
        )
        doc, _ = parse_inline(completion, golden_text, country_schema)
        assert annotation_text(doc, sorted(doc.annotations)[1]) == "China"

    def test_rewritten_mention_relocated_by_exact_search(self):
        schema = EntitySchema({"location": "Places."})
        original = "USA stocks rose; the United States announced tariffs"
        completion = "the <location>US</location> announced tariffs"
        doc, report = parse_inline(completion, original, schema)
        assert doc.annotations == {Annotation(0, 2, "location")}
        assert any("relocated" in w for w in report.warnings)

    def test_unlocatable_mention_dropped_with_warning(self):
        schema = EntitySchema({"location": "Places."})
        doc, report = parse_inline(
            "<location>Lima  Peru</location> border crossing",
            "Lima Peru border crossing",
            schema,
        )
        assert doc.annotations == frozenset()
        assert any("not found" in w for w in report.warnings)

    def test_never_raises_on_garbage(self, pl_schema):
        for completion in ["", "<<<>>>", "</person><person>", "{oops", "\x00\x01"]:
            doc, report = parse_inline(completion, "Ana Peru", pl_schema)
            assert isinstance(report.warnings, tuple)

    def test_annotations_stay_in_bounds(self, pl_schema):
        doc, _ = parse_inline(
            "<person>Ana</person> extra words beyond the original",
            "Ana",
            pl_schema,
        )
        for ann in doc.annotations:
            assert 0 <= ann.start < ann.end <= len(doc.text)


@st.composite
def nonoverlapping_docs(draw):
    labels = ("person", "location", "organization")
    words = draw(
        st.lists(
            st.text(
                alphabet=st.characters(
                    blacklist_categories=("Cs", "Zs", "Zl", "Zp", "Cc"),
                    blacklist_characters="<>/{}\"'\\",
                ),
                min_size=1,
                max_size=6,
            ),
            min_size=1,
            max_size=12,
        )
    )
    text = " ".join(words)
    annotations = []
    cursor = 0
    for word in words:
        start, end = cursor, cursor + len(word)
        cursor = end + 1
        if draw(st.booleans()):
            annotations.append(Annotation(start, end, draw(st.sampled_from(labels))))
    return AnnotatedDocument(text, annotations)


class TestInlineRoundTrip:
    SCHEMA = EntitySchema(
        {"person": "People.", "location": "Places.", "organization": "Orgs."}
    )

    @given(nonoverlapping_docs())
    @settings(max_examples=150, deadline=None)
    def test_parse_inverts_render(self, doc):
        completion = render_inline(doc)
        parsed, report = parse_inline(completion, doc.text, self.SCHEMA)
        assert parsed.annotations == doc.annotations
        assert report.warnings == ()


class TestExtractJsonBlock:
    def test_prose_wrapped_object(self):
        assert extract_json_block('Sure! {"a": [1]} hope that helps') == '{"a": [1]}'

    def test_braces_inside_strings_ignored(self):
        assert extract_json_block('{"a": "x{y}"} tail') == '{"a": "x{y}"}'

    def test_skips_unbalanced_prefix(self):
        assert extract_json_block('{broken {"person": []}') == '{"person": []}'

    def test_no_object_gives_none(self):
        assert extract_json_block("no braces here") is None
        assert extract_json_block("{never closed") is None


class TestParseJsonAnswer:
    def test_golden_object(self, country_schema, golden_text):
        completion = '{"person": ["Fei-Fei Li"], "country": ["China"]}'
        doc, _ = parse_json_answer(completion, golden_text, country_schema)
        assert doc.annotations == {
            Annotation(0, 10, "person"),
            Annotation(41, 46, "country"),
        }

    def test_empty_lists_give_empty_set(self, pl_schema):
        doc, report = parse_json_answer(
            '{"person": [], "location": []}', "anything", pl_schema
        )
        assert doc.annotations == frozenset()
        assert report.warnings == ()

    def test_all_nonoverlapping_occurrences(self):
        schema = EntitySchema({"x": "Xs."})
        doc, _ = parse_json_answer('{"x": ["aa"]}', "aaaa", schema)
        assert doc.annotations == {Annotation(0, 2, "x"), Annotation(2, 4, "x")}

    def test_first_occurrence_mode(self):
        schema = EntitySchema({"x": "Xs."})
        doc, _ = parse_json_answer('{"x": ["aa"]}', "aaaa", schema, occurrences="first")
        assert doc.annotations == {Annotation(0, 2, "x")}

    def test_occurrences_value_validated(self):
        schema = EntitySchema({"x": "Xs."})
        with pytest.raises(ConfigError):
            parse_json_answer('{"x": []}', "a", schema, occurrences="some")

    def test_prose_around_object_tolerated(self, pl_schema):
        completion = 'Here you go:\n{"person": ["Ana"], "location": []}\nDone.'
        doc, _ = parse_json_answer(completion, "Ana Peru", pl_schema)
        assert doc.annotations == {Annotation(0, 3, "person")}

    def test_unknown_key_dropped_with_warning(self, pl_schema):
        doc, report = parse_json_answer(
            '{"person": [], "location": [], "city": ["Lima"]}', "Lima", pl_schema
        )
        assert doc.annotations == frozenset()
        assert any("city" in w for w in report.warnings)

    def test_mention_search_is_case_sensitive(self, pl_schema):
        doc, report = parse_json_answer(
            '{"person": ["ana"], "location": []}', "Ana", pl_schema
        )
        assert doc.annotations == frozenset()
        assert any("ana" in w for w in report.warnings)

    def test_whitespace_trim_retry(self, pl_schema):
        doc, _ = parse_json_answer(
            '{"person": [" Ana "], "location": []}', "Ana Peru", pl_schema
        )
        assert doc.annotations == {Annotation(0, 3, "person")}

    def test_string_value_coerced_to_single_mention(self, pl_schema):
        doc, report = parse_json_answer(
            '{"person": "Ana", "location": []}', "Ana Peru", pl_schema
        )
        assert doc.annotations == {Annotation(0, 3, "person")}
        assert any("treated as one mention" in w for w in report.warnings)

    def test_missing_object_raises(self, pl_schema):
        with pytest.raises(ParseError):
            parse_json_answer("there is no object here", "Ana", pl_schema)

    def test_undecodable_object_raises(self, pl_schema):
        with pytest.raises(ParseError):
            parse_json_answer("{'person': [}", "Ana", pl_schema)


@st.composite
def unique_mention_docs(draw):
    labels = ("person", "location", "organization")
    count = draw(st.integers(0, 4))
    # Distinct alphabetic words guarantee each mention occurs exactly once.
    words = [f"w{index}x" for index in range(10)]
    mentions = draw(
        st.lists(st.sampled_from(words), min_size=count, max_size=count, unique=True)
    )
    filler = ["the", "and", "saw"]
    tokens: list[str] = []
    annotations = []
    cursor = 0
    for mention in mentions:
        pad = draw(st.sampled_from(filler))
        tokens.append(pad)
        cursor += len(pad) + 1
        tokens.append(mention)
        annotations.append(
            Annotation(cursor, cursor + len(mention), draw(st.sampled_from(labels)))
        )
        cursor += len(mention) + 1
    tokens.append("end")
    return AnnotatedDocument(" ".join(tokens), annotations)


class TestJsonRoundTrip:
    SCHEMA = EntitySchema(
        {"person": "People.", "location": "Places.", "organization": "Orgs."}
    )

    @given(unique_mention_docs())
    @settings(max_examples=150, deadline=None)
    def test_parse_inverts_render(self, doc):
        completion = render_json(doc, self.SCHEMA)
        parsed, report = parse_json_answer(completion, doc.text, self.SCHEMA)
        assert parsed.annotations == doc.annotations


class TestMergeTurnAnnotations:
    def test_union_keeps_multi_label_spans(self):
        merged = merge_turn_annotations(
            [{Annotation(0, 4, "loc")}, {Annotation(0, 4, "org")}]
        )
        assert merged == {Annotation(0, 4, "loc"), Annotation(0, 4, "org")}

    def test_empty_union(self):
        assert merge_turn_annotations([set(), set()]) == frozenset()

    def test_idempotent(self):
        merged = merge_turn_annotations([{Annotation(0, 2, "a")}, {Annotation(0, 2, "a")}])
        assert merged == {Annotation(0, 2, "a")}
