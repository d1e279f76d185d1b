"""Licence and copyright gating, hardcopy packaging, delivery, purge.

Supply is gated before anything ships: per-container licence terms
decide which delivery methods are lawful, copyright policy caps
monograph excerpts and blocks digital copies of newsstand material.
Denials always carry the licence-or-copyright unfulfilment code so the
request engine records the right reason by construction.

The hardcopy pipeline produces an image package: a disclaimer page
followed by every source page at 200 dpi. The normative artifact is the
package manifest; rasterization itself is an adapter.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

from .bibliography import BibRef, normalize_title
from .errors import (
    EmptySource,
    InvalidPayload,
    MethodNotAllowed,
    MissingPageCounts,
    RasterizerFailure,
)

METHODS = ("SED", "ARTICLE_EXCHANGE", "URL", "POSTAL")
DIGITAL_METHODS = frozenset({"SED", "ARTICLE_EXCHANGE", "URL"})
STATUTORY_DEFAULT_METHODS = frozenset({"POSTAL", "SED"})

LICENCE_REASON_CODE = 5  # "ILL not permitted by licence or copyright law"

HARDCOPY_DPI = 200
RETENTION_DAYS = 7

DEFAULT_DISCLAIMER = (
    "Supplied for interlibrary document delivery. The receiving library "
    "must print one paper copy for the requesting patron and delete the "
    "electronic file after printing."
)


@dataclass(frozen=True)
class LicenceRecord:
    """Per-publisher/container supply permissions."""

    publisher: str
    container: str = ""  # ISSN or normalized title; empty = publisher-wide
    ill_digital_allowed: bool = True
    allowed_methods: frozenset[str] = frozenset(METHODS)
    cross_border_allowed: bool = True

    def __post_init__(self):
        if not self.ill_digital_allowed and not (
                self.allowed_methods <= {"POSTAL"}):
            raise ValueError(
                "digital ILL disallowed but digital methods listed")


@dataclass(frozen=True)
class CopyrightPolicy:
    """Statutory rules the node enforces regardless of licences."""

    monograph_excerpt_max_fraction: float = 0.10
    newsstand_digital_allowed: bool = False
    domestic_country: str = "IT"
    newsstand_containers: frozenset[str] = frozenset()

    def __post_init__(self):
        if not 0 < self.monograph_excerpt_max_fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")


class LicenceStore:
    """Read-mostly licence records, replaced wholesale on reload."""

    def __init__(self, records: list[LicenceRecord] | None = None):
        self._records: list[LicenceRecord] = list(records or [])

    def reload(self, records: list[LicenceRecord]) -> None:
        self._records = list(records)

    def records(self) -> list[LicenceRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def match(self, bib: BibRef) -> LicenceRecord | None:
        """Container-level record first, then a publisher-wide one."""
        container_keys = set()
        if bib.issn:
            container_keys.add("".join(ch for ch in bib.issn if ch.isalnum()).upper())
        if bib.container_title:
            container_keys.add(normalize_title(bib.container_title))
        publisher_fallback = None
        for record in self._records:
            if record.container and record.container in container_keys:
                return record
            if (not record.container and bib.publisher
                    and record.publisher == bib.publisher):
                publisher_fallback = publisher_fallback or record
        return publisher_fallback

    @classmethod
    def from_csv(cls, source: str | Path | io.TextIOBase) -> "LicenceStore":
        """`publisher,container,ill_digital_allowed,methods,cross_border`
        with the method list pipe-separated."""
        if isinstance(source, (str, Path)):
            with open(source, newline="", encoding="utf-8") as handle:
                return cls.from_csv(handle)
        records = []
        for row in csv.DictReader(source):
            methods = frozenset(
                m.strip().upper() for m in row["methods"].split("|") if m.strip())
            unknown = methods - set(METHODS)
            if unknown:
                raise ValueError(f"unknown delivery methods {sorted(unknown)}")
            records.append(LicenceRecord(
                publisher=row["publisher"].strip(),
                container=row["container"].strip(),
                ill_digital_allowed=row["ill_digital_allowed"].strip().lower()
                in ("1", "true", "yes"),
                allowed_methods=methods,
                cross_border_allowed=row["cross_border"].strip().lower()
                in ("1", "true", "yes"),
            ))
        return cls(records)


@dataclass(frozen=True)
class Allow:
    methods: frozenset[str]

    @property
    def allowed(self) -> bool:
        return True


@dataclass(frozen=True)
class Deny:
    detail: str
    reason_code: int = LICENCE_REASON_CODE

    @property
    def allowed(self) -> bool:
        return False


def check_supply_allowed(
    bib: BibRef,
    licences: LicenceStore,
    policy: CopyrightPolicy,
    excerpt_pages: int | None = None,
    total_pages: int | None = None,
    borrower_country: str | None = None,
    requested_methods: frozenset[str] | None = None,
) -> Allow | Deny:
    """Decide whether, and how, this supply may lawfully happen.

    Denials cover: monograph excerpts above the copyright fraction,
    digital copies of newsstand material, digital requests against a
    postal-only licence, and cross-border requests the licence forbids.
    Otherwise the answer is the intersection of requested and
    licence-permitted methods; with no licence on file the statutory
    default applies (postal plus secure electronic delivery).
    """
    requested = frozenset(requested_methods) if requested_methods is not None \
        else frozenset(METHODS)
    digital_requested = bool(requested & DIGITAL_METHODS)

    if (excerpt_pages is None) != (total_pages is None):
        raise MissingPageCounts("excerpt checks need both page counts")
    if excerpt_pages is not None and bib.kind in ("book", "chapter"):
        limit = policy.monograph_excerpt_max_fraction * total_pages
        if excerpt_pages > limit:
            return Deny(
                f"excerpt {excerpt_pages}pp exceeds "
                f"{policy.monograph_excerpt_max_fraction:.0%} of {total_pages}pp")

    container_key = normalize_title(bib.container_title or "")
    issn_key = "".join(ch for ch in (bib.issn or "") if ch.isalnum()).upper()
    is_newsstand = bool(
        policy.newsstand_containers
        and {container_key, issn_key} & policy.newsstand_containers)
    if is_newsstand and digital_requested and not policy.newsstand_digital_allowed:
        return Deny("newsstand material may not be delivered digitally")

    licence = licences.match(bib)
    if licence is None:
        permitted = STATUTORY_DEFAULT_METHODS
    else:
        if digital_requested and not licence.ill_digital_allowed:
            return Deny(f"licence for {licence.publisher!r} forbids digital ILL")
        if borrower_country and borrower_country != policy.domestic_country \
                and not licence.cross_border_allowed:
            return Deny(f"licence for {licence.publisher!r} forbids "
                        "cross-border supply")
        permitted = licence.allowed_methods

    methods = requested & permitted
    if not methods:
        return Deny("no permitted delivery method for this request")
    return Allow(frozenset(methods))


# -- hardcopy pipeline --------------------------------------------------------


class SyntheticRasterizer:
    """Test/default adapter: emits page descriptors without touching pixels."""

    def __init__(self, fail: bool = False):
        self.fail = fail

    def rasterize(self, page, dpi: int) -> dict:
        if self.fail:
            raise RuntimeError("rasterizer backend unavailable")
        return {"source": str(page), "format": "png", "dpi": dpi}


@dataclass
class DeliveryPackage:
    """A delivered hardcopy artifact plus its retention bookkeeping."""

    package_id: str
    page_count: int  # content pages + disclaimer
    dpi: int
    disclaimer_text: str
    created_at: datetime
    retention_until: datetime
    delete_after_first_download: bool = True
    downloaded: bool = False
    manifest: dict = field(default_factory=dict)


def make_hardcopy(source_pages: list, rasterizer, *, package_id: str,
                  now: datetime, disclaimer_text: str = DEFAULT_DISCLAIMER,
                  delete_after_first_download: bool = True,
                  retention_days: int = RETENTION_DAYS) -> DeliveryPackage:
    """Convert ordered page descriptors into a disclaimer-fronted package."""
    if not source_pages:
        raise EmptySource("no pages to package")
    entries = [{"ordinal": 0, "kind": "disclaimer"}]
    for ordinal, page in enumerate(source_pages, start=1):
        try:
            rendered = rasterizer.rasterize(page, HARDCOPY_DPI)
        except Exception as exc:  # noqa: BLE001 - adapter fault barrier
            raise RasterizerFailure(str(exc)) from exc
        entries.append({"ordinal": ordinal, "kind": "content", **rendered})
    retention_until = now + timedelta(days=retention_days)
    manifest = {
        "package_id": package_id,
        "dpi": HARDCOPY_DPI,
        "pages": entries,
        "created_at": now.isoformat(),
        "retention_until": retention_until.isoformat(),
        "delete_after_first_download": delete_after_first_download,
    }
    return DeliveryPackage(
        package_id=package_id,
        page_count=len(entries),
        dpi=HARDCOPY_DPI,
        disclaimer_text=disclaimer_text,
        created_at=now,
        retention_until=retention_until,
        delete_after_first_download=delete_after_first_download,
        manifest=manifest,
    )


def manifest_json(package: DeliveryPackage) -> str:
    """Canonical JSON form of the manifest; tests compare this byte-exact."""
    return json.dumps(package.manifest, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class DeliveryReceipt:
    method: str
    timestamp: datetime
    package_id: str | None = None
    url: str | None = None

    def to_dict(self) -> dict:
        out = {"method": self.method, "timestamp": self.timestamp.isoformat()}
        if self.package_id:
            out["package_id"] = self.package_id
        if self.url:
            out["url"] = self.url
        return out


def deliver(allowed_methods: frozenset[str], payload, method: str,
            now: datetime) -> DeliveryReceipt:
    """Hand over a package or URL via one allowed method."""
    if method not in METHODS:
        raise InvalidPayload(f"unknown method {method!r}")
    if method not in allowed_methods:
        raise MethodNotAllowed(f"{method} not in allowed set "
                               f"{sorted(allowed_methods)}")
    if method == "URL":
        if not isinstance(payload, str) or not payload.startswith(("http://", "https://")):
            raise InvalidPayload("URL delivery needs a resolvable URL")
        return DeliveryReceipt(method=method, timestamp=now, url=payload)
    if method == "POSTAL":
        if payload is not None and not isinstance(payload, DeliveryPackage):
            raise InvalidPayload("POSTAL delivery ships an item or a package")
        return DeliveryReceipt(
            method=method, timestamp=now,
            package_id=payload.package_id if payload else None)
    if not isinstance(payload, DeliveryPackage):
        raise InvalidPayload(f"{method} delivery needs a package")
    return DeliveryReceipt(method=method, timestamp=now,
                           package_id=payload.package_id)


class PackageRegistry:
    """Holds live packages; purge sweeps run on a snapshot."""

    def __init__(self):
        self._packages: dict[str, DeliveryPackage] = {}
        self.purge_log: list[str] = []

    def add(self, package: DeliveryPackage) -> None:
        self._packages[package.package_id] = package

    def get(self, package_id: str) -> DeliveryPackage | None:
        return self._packages.get(package_id)

    def __len__(self) -> int:
        return len(self._packages)

    def live_ids(self) -> list[str]:
        return sorted(self._packages)

    def mark_downloaded(self, package_id: str) -> None:
        package = self._packages.get(package_id)
        if package is not None:
            package.downloaded = True

    def remove(self, package_id: str) -> None:
        self._packages.pop(package_id, None)

    def purge_expired(self, now: datetime) -> list[str]:
        """Remove expired and spent single-shot packages; returns ids."""
        purged = []
        for package_id, package in sorted(self._packages.items()):
            if package.retention_until < now or (
                    package.delete_after_first_download and package.downloaded):
                purged.append(package_id)
        for package_id in purged:
            del self._packages[package_id]
        self.purge_log.extend(purged)
        return purged
