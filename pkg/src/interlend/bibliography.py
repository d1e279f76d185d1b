"""Bibliographic citations: import, validation, deduplication, OA lookup.

Citations arrive three ways — OpenURL query strings from link resolvers,
identifier lookups against a metadata source, or hand-filled forms — and
converge on one :class:`BibRef` shape. Deduplication keys treat ISBN and
ISSN as unique identifiers and fall back to a normalized title for the
rest.
"""

from __future__ import annotations

import json
import re
import urllib.parse
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import (
    EmptyCitation,
    InvalidBib,
    MalformedIdentifier,
    MalformedQuery,
    NotFound,
    SourceUnavailable,
)

KINDS = ("article", "book", "chapter", "thesis")


@dataclass(frozen=True)
class BibRef:
    """One citation for an article, book, chapter or thesis."""

    kind: str = "article"
    title: str = ""
    authors: tuple[str, ...] = ()
    container_title: str | None = None
    year: int | None = None
    volume: str | None = None
    issue: str | None = None
    pages: tuple[int, int] | None = None
    doi: str | None = None
    pmid: str | None = None
    isbn: str | None = None
    issn: str | None = None
    publisher: str | None = None
    language: str | None = None

    def validate(self) -> "BibRef":
        if self.kind not in KINDS:
            raise InvalidBib(f"unknown kind {self.kind!r}")
        if not (self.title or self.doi or self.pmid or self.isbn):
            raise InvalidBib("need at least one of title, doi, pmid, isbn")
        if self.pages is not None:
            start, end = self.pages
            if not (1 <= start <= end):
                raise InvalidBib(f"bad page range {self.pages}")
        if self.kind == "article" and not (self.container_title or self.issn):
            raise InvalidBib("article needs container_title or issn")
        if self.kind == "chapter" and not (self.container_title or self.isbn):
            raise InvalidBib("chapter needs container_title or isbn")
        return self

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "title": self.title}
        if self.authors:
            out["authors"] = list(self.authors)
        for name in ("container_title", "year", "volume", "issue", "doi",
                     "pmid", "isbn", "issn", "publisher", "language"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.pages is not None:
            out["pages"] = f"{self.pages[0]}-{self.pages[1]}"
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BibRef":
        pages = data.get("pages")
        if isinstance(pages, str) and pages:
            start, _, end = pages.partition("-")
            pages = (int(start), int(end or start))
        elif isinstance(pages, (list, tuple)):
            pages = (int(pages[0]), int(pages[1]))
        else:
            pages = None
        year = data.get("year")
        return cls(
            kind=data.get("kind", "article"),
            title=data.get("title", ""),
            authors=tuple(data.get("authors", ())),
            container_title=data.get("container_title"),
            year=int(year) if year is not None else None,
            volume=data.get("volume"),
            issue=data.get("issue"),
            pages=pages,
            doi=data.get("doi"),
            pmid=data.get("pmid"),
            isbn=data.get("isbn"),
            issn=data.get("issn"),
            publisher=data.get("publisher"),
            language=data.get("language"),
        )


# -- OpenURL import ----------------------------------------------------------

_GENRE_KINDS = {
    "article": "article",
    "journal": "article",
    "issue": "article",
    "preprint": "article",
    "proceeding": "article",
    "conference": "article",
    "book": "book",
    "bookitem": "chapter",
    "chapter": "chapter",
    "thesis": "thesis",
    "dissertation": "thesis",
}

# keys recognized with or without the "rft." prefix; everything else ignored
_OPENURL_KEYS = ("genre", "atitle", "btitle", "jtitle", "date", "volume",
                 "issue", "spage", "epage", "doi", "pmid", "isbn", "issn", "au")


def parse_openurl(query_string: str) -> BibRef:
    """Map an OpenURL key-value query onto a BibRef.

    Both bare keys (``atitle=``) and rft-prefixed keys (``rft.atitle=``)
    are accepted; unrecognized keys are ignored. Raises EmptyCitation when
    nothing mappable is present and MalformedQuery on undecodable input.
    """
    try:
        pairs = urllib.parse.parse_qsl(
            query_string, keep_blank_values=False, errors="strict"
        )
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedQuery(str(exc)) from exc

    fields: dict[str, str] = {}
    authors: list[str] = []
    for raw_key, value in pairs:
        key = raw_key.lower()
        if key.startswith("rft."):
            key = key[4:]
        if key not in _OPENURL_KEYS or not value.strip():
            continue
        if key == "au":
            authors.append(value.strip())
        else:
            fields.setdefault(key, value.strip())

    if not fields and not authors:
        raise EmptyCitation("no mappable OpenURL field")

    genre = fields.get("genre", "").lower()
    kind = _GENRE_KINDS.get(genre)
    if kind is None:
        kind = "article" if "atitle" in fields else "book"

    if kind == "article":
        title = fields.get("atitle") or fields.get("btitle", "")
        container = fields.get("jtitle") or fields.get("btitle")
    elif kind == "chapter":
        title = fields.get("atitle") or fields.get("btitle", "")
        container = fields.get("btitle") or fields.get("jtitle")
    else:
        title = fields.get("btitle") or fields.get("atitle", "")
        container = fields.get("jtitle")
    if container == title:
        container = None

    year = None
    if "date" in fields:
        match = re.search(r"\d{4}", fields["date"])
        if match:
            year = int(match.group())

    pages = None
    if "spage" in fields:
        try:
            start = int(fields["spage"])
            end = int(fields.get("epage", fields["spage"]))
            if 1 <= start <= end:
                pages = (start, end)
        except ValueError:
            pass

    ref = BibRef(
        kind=kind,
        title=title,
        authors=tuple(authors),
        container_title=container,
        year=year,
        volume=fields.get("volume"),
        issue=fields.get("issue"),
        pages=pages,
        doi=fields.get("doi"),
        pmid=fields.get("pmid"),
        isbn=fields.get("isbn"),
        issn=fields.get("issn"),
    )
    if not (ref.title or ref.doi or ref.pmid or ref.isbn or ref.issn):
        raise EmptyCitation("query carries no identifying field")
    return ref


# -- identifier resolution and OA lookup -------------------------------------

_ID_SYNTAX = {
    "doi": re.compile(r"^10\.\S+/\S+"),
    "pmid": re.compile(r"^\d{1,10}$"),
    "isbn": re.compile(r"^[\d\-\s]{9,17}[\dXx]$"),
}


def split_identifier(identifier: str) -> tuple[str, str]:
    """Split 'doi:10.x/y' / '10.x/y' / 'pmid:123' into (scheme, value)."""
    text = identifier.strip()
    lowered = text.lower()
    for scheme in ("doi", "pmid", "isbn"):
        if lowered.startswith(scheme + ":"):
            return scheme, text[len(scheme) + 1:].strip()
    if text.startswith("10."):
        return "doi", text
    if text.replace("-", "").replace(" ", "").isdigit() and len(text) >= 9:
        return "isbn", text
    if text.isdigit():
        return "pmid", text
    return "doi", text  # most permissive default; syntax check decides


def validate_identifier(identifier: str) -> tuple[str, str]:
    scheme, value = split_identifier(identifier)
    pattern = _ID_SYNTAX[scheme]
    if not pattern.match(value):
        raise MalformedIdentifier(f"{scheme} {value!r}")
    return scheme, value


class FixtureMetadataSource:
    """Metadata adapter backed by a JSON fixture file.

    The fixture is an array of records with an ``identifier`` field plus
    BibRef fields (and optionally ``oa_url``); production deployments
    swap in networked adapters with the same two methods.
    """

    def __init__(self, records: list[dict]):
        self._by_id: dict[str, dict] = {}
        for record in records:
            ident = str(record["identifier"]).lower()
            self._by_id[ident] = record

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureMetadataSource":
        with open(path, encoding="utf-8") as handle:
            return cls(json.load(handle))

    def lookup(self, scheme: str, value: str) -> dict:
        record = self._by_id.get(f"{scheme}:{value}".lower())
        if record is None:
            record = self._by_id.get(value.lower())
        if record is None:
            raise NotFound(f"{scheme}:{value}")
        return record

    def resolve(self, scheme: str, value: str) -> BibRef:
        record = dict(self.lookup(scheme, value))
        record.pop("identifier", None)
        record.pop("oa_url", None)
        return BibRef.from_dict(record).validate()

    def oa_url(self, scheme: str, value: str) -> str | None:
        try:
            return self.lookup(scheme, value).get("oa_url")
        except NotFound:
            return None


class FailingSource:
    """Adapter stub that always fails; used to exercise SourceUnavailable."""

    def resolve(self, scheme: str, value: str) -> BibRef:
        raise SourceUnavailable("adapter down")

    def oa_url(self, scheme: str, value: str) -> str | None:
        raise SourceUnavailable("adapter down")


def resolve_identifier(identifier: str, source) -> BibRef:
    """Fill a BibRef from a tagged identifier via the metadata source."""
    scheme, value = validate_identifier(identifier)
    return source.resolve(scheme, value)


def check_open_access(ref: BibRef, source) -> str | None:
    """URL of a registered OA copy for the ref, or None.

    Adapter errors surface as SourceUnavailable — an outage is not the
    same answer as "no OA copy exists".
    """
    try:
        for scheme, value in (("doi", ref.doi), ("pmid", ref.pmid),
                              ("isbn", ref.isbn)):
            if value:
                url = source.oa_url(scheme, value)
                if url:
                    return url
        return None
    except SourceUnavailable:
        raise
    except Exception as exc:  # noqa: BLE001 - adapter fault barrier
        raise SourceUnavailable(str(exc)) from exc


# -- deduplication -----------------------------------------------------------

_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def normalize_title(title: str) -> str:
    """Lowercase, non-alphanumerics to spaces, collapsed whitespace."""
    return _NON_ALNUM.sub(" ", title.lower()).strip()


def _digits(value: str) -> str:
    return "".join(ch for ch in value.upper() if ch.isdigit() or ch == "X")


@dataclass(frozen=True)
class NormalizedKey:
    key: str

    def __str__(self) -> str:
        return self.key


def dedupe_key(ref: BibRef) -> NormalizedKey:
    """Stable identity key: ISBN, else ISSN+year, else normalized title."""
    if ref.isbn:
        return NormalizedKey(f"isbn:{_digits(ref.isbn)}")
    if ref.issn:
        year = ref.year if ref.year is not None else ""
        return NormalizedKey(f"issn:{_digits(ref.issn)}|{year}")
    return NormalizedKey(normalize_title(ref.title))


def find_duplicate_requests(refs: list[BibRef]) -> list[list[int]]:
    """Indices grouped by shared dedupe key; only groups of two or more."""
    groups: dict[str, list[int]] = defaultdict(list)
    for index, ref in enumerate(refs):
        groups[dedupe_key(ref).key].append(index)
    return [groups[key] for key in sorted(groups) if len(groups[key]) >= 2]


def with_kind(ref: BibRef, kind: str) -> BibRef:
    return replace(ref, kind=kind)
