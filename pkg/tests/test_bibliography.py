import urllib.parse

import pytest
from hypothesis import given, strategies as st

from interlend import errors
from interlend.bibliography import (
    BibRef,
    FailingSource,
    check_open_access,
    dedupe_key,
    find_duplicate_requests,
    normalize_title,
    parse_openurl,
    resolve_identifier,
)


def render_openurl(ref: BibRef) -> str:
    """Test helper: serialize the mappable fields back to an OpenURL query."""
    pairs = [("genre", ref.kind if ref.kind != "chapter" else "bookitem")]
    if ref.kind == "article":
        if ref.title:
            pairs.append(("atitle", ref.title))
        if ref.container_title:
            pairs.append(("jtitle", ref.container_title))
    else:
        if ref.title:
            pairs.append(("btitle", ref.title))
    if ref.year is not None:
        pairs.append(("date", str(ref.year)))
    for key in ("volume", "issue", "doi", "pmid", "isbn", "issn"):
        value = getattr(ref, key)
        if value:
            pairs.append((key, value))
    if ref.pages:
        pairs.append(("spage", str(ref.pages[0])))
        pairs.append(("epage", str(ref.pages[1])))
    for author in ref.authors:
        pairs.append(("au", author))
    return urllib.parse.urlencode(pairs)


class TestParseOpenurl:
    def test_article_mapping(self):
        ref = parse_openurl("genre=article&atitle=On+X&jtitle=J.+Y&date=2019&doi=10.1/x")
        assert ref.kind == "article"
        assert ref.title == "On X"
        assert ref.container_title == "J. Y"
        assert ref.year == 2019
        assert ref.doi == "10.1/x"

    def test_rft_prefixed_book(self):
        ref = parse_openurl("rft.isbn=9781234567897&rft.btitle=B")
        assert ref.kind == "book"
        assert ref.isbn == "9781234567897"
        assert ref.title == "B"

    def test_empty_query_is_empty_citation(self):
        with pytest.raises(errors.EmptyCitation):
            parse_openurl("")

    def test_unmappable_keys_only(self):
        with pytest.raises(errors.EmptyCitation):
            parse_openurl("sid=abc&url_ver=Z39.88-2004")

    def test_undecodable_percent_escape(self):
        with pytest.raises(errors.MalformedQuery):
            parse_openurl("atitle=%ff%fe")

    def test_kind_inferred_from_atitle(self):
        assert parse_openurl("atitle=T&jtitle=J").kind == "article"

    def test_kind_defaults_to_book(self):
        assert parse_openurl("btitle=T").kind == "book"

    def test_pages_and_authors(self):
        ref = parse_openurl("atitle=T&jtitle=J&spage=10&epage=12&au=A&au=B")
        assert ref.pages == (10, 12)
        assert ref.authors == ("A", "B")

    @given(st.builds(
        BibRef,
        kind=st.sampled_from(["article", "book"]),
        title=st.text(
            alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd")),
            min_size=1, max_size=20,
        ),
        year=st.integers(min_value=1500, max_value=2100),
        doi=st.just("10.1/x"),
        issn=st.just("1234-5678"),
    ))
    def test_roundtrip_mappable_fields(self, ref):
        parsed = parse_openurl(render_openurl(ref))
        assert parsed.kind == ref.kind
        assert parsed.title == ref.title.strip()
        assert parsed.year == ref.year
        assert parsed.doi == ref.doi
        assert parsed.issn == ref.issn


class TestResolveIdentifier:
    def test_fixture_roundtrip(self, metadata_source):
        ref = resolve_identifier("10.5555/demo1", metadata_source)
        assert ref.title == "Measurement of Demo Effects"
        assert ref.pages == (101, 118)
        assert ref.kind == "article"

    def test_absent_identifier(self, metadata_source):
        with pytest.raises(errors.NotFound):
            resolve_identifier("10.5555/absent", metadata_source)

    def test_malformed_doi(self, metadata_source):
        with pytest.raises(errors.MalformedIdentifier):
            resolve_identifier("doi:banana", metadata_source)

    def test_pmid(self, metadata_source):
        assert resolve_identifier("pmid:31415926", metadata_source).pmid == "31415926"

    def test_isbn(self, metadata_source):
        assert resolve_identifier("isbn:9781234567897", metadata_source).kind == "book"


class TestCheckOpenAccess:
    def test_oa_hit(self, metadata_source):
        ref = resolve_identifier("10.5555/demo1", metadata_source)
        assert check_open_access(ref, metadata_source) == \
            "https://repository.example.org/demo1.pdf"

    def test_no_oa_copy(self, metadata_source):
        ref = resolve_identifier("10.5555/demo2", metadata_source)
        assert check_open_access(ref, metadata_source) is None

    def test_adapter_down(self, article_ref):
        with pytest.raises(errors.SourceUnavailable):
            check_open_access(article_ref, FailingSource())


class TestDedupeKey:
    def test_isbn_beats_title(self):
        a = BibRef(kind="book", title="First Title", isbn="978-1-2345-6789-7")
        b = BibRef(kind="book", title="Other Title!", isbn="9781234567897")
        assert dedupe_key(a) == dedupe_key(b)
        assert dedupe_key(a).key == "isbn:9781234567897"

    def test_title_normalization_by_hand(self):
        # normalization rule applied manually: lowercase, punctuation to
        # spaces, collapse -> "the art of x"
        a = BibRef(kind="book", title="The Art-of X!")
        b = BibRef(kind="book", title="the art of x")
        assert dedupe_key(a).key == "the art of x"
        assert dedupe_key(a) == dedupe_key(b)

    def test_issn_year_disambiguates(self):
        a = BibRef(kind="article", title="T", issn="1234-5678", year=2020)
        b = BibRef(kind="article", title="T", issn="1234-5678", year=2021)
        assert dedupe_key(a) != dedupe_key(b)
        assert dedupe_key(a).key == "issn:12345678|2020"

    @given(st.text(max_size=60))
    def test_normalization_idempotent(self, title):
        once = normalize_title(title)
        assert normalize_title(once) == once

    def test_key_stable_across_calls(self, article_ref):
        assert dedupe_key(article_ref) == dedupe_key(article_ref)


class TestFindDuplicates:
    def test_empty(self):
        assert find_duplicate_requests([]) == []

    def test_pair_by_isbn(self):
        refs = [
            BibRef(kind="book", title="A", isbn="111111111X"),
            BibRef(kind="book", title="B"),
            BibRef(kind="book", title="C", isbn="1-11111111-X"),
        ]
        assert find_duplicate_requests(refs) == [[0, 2]]

    @given(st.lists(
        st.builds(
            BibRef,
            kind=st.just("book"),
            title=st.sampled_from(["alpha", "beta", "gamma", "Alpha!", "BETA"]),
            isbn=st.sampled_from([None, "111111111X", "9781234567897"]),
        ),
        max_size=100,
    ))
    def test_matches_pairwise_oracle(self, refs):
        # O(n^2) oracle: same key iff duplicate
        keys = [dedupe_key(r).key for r in refs]
        oracle: dict[str, list[int]] = {}
        for i, key in enumerate(keys):
            oracle.setdefault(key, []).append(i)
        expected = [ixs for key, ixs in sorted(oracle.items()) if len(ixs) >= 2]
        assert find_duplicate_requests(refs) == expected

    @given(st.lists(
        st.builds(BibRef, kind=st.just("book"), title=st.text(min_size=1, max_size=8)),
        max_size=50,
    ))
    def test_partition_refinement(self, refs):
        seen: set[int] = set()
        for group in find_duplicate_requests(refs):
            for index in group:
                assert index not in seen
                seen.add(index)


class TestValidation:
    def test_needs_identifier_or_title(self):
        with pytest.raises(errors.InvalidBib):
            BibRef(kind="book", title="").validate()

    def test_bad_page_range(self):
        with pytest.raises(errors.InvalidBib):
            BibRef(kind="book", title="T", pages=(5, 2)).validate()

    def test_article_needs_container_or_issn(self):
        with pytest.raises(errors.InvalidBib):
            BibRef(kind="article", title="T").validate()
