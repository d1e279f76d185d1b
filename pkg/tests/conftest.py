import json
from datetime import datetime, timezone

import pytest

from interlend.bibliography import BibRef, FixtureMetadataSource

FIXTURE_RECORDS = [
    {
        "identifier": "doi:10.5555/demo1",
        "kind": "article",
        "title": "Measurement of Demo Effects",
        "authors": ["Rivera, A.", "Chen, B."],
        "container_title": "Journal of Examples",
        "year": 2019,
        "volume": "12",
        "issue": "3",
        "pages": "101-118",
        "doi": "10.5555/demo1",
        "issn": "1234-5678",
        "publisher": "Example House",
        "oa_url": "https://repository.example.org/demo1.pdf",
    },
    {
        "identifier": "doi:10.5555/demo2",
        "kind": "article",
        "title": "Closed Access Findings",
        "container_title": "Journal of Examples",
        "year": 2021,
        "doi": "10.5555/demo2",
        "issn": "1234-5678",
        "publisher": "Example House",
    },
    {
        "identifier": "pmid:31415926",
        "kind": "article",
        "title": "Clinical Notes on Sample Cohorts",
        "container_title": "Annals of Cases",
        "year": 2020,
        "pmid": "31415926",
        "issn": "2345-6789",
    },
    {
        "identifier": "isbn:9781234567897",
        "kind": "book",
        "title": "Handbook of Borrowed Things",
        "year": 2018,
        "isbn": "9781234567897",
        "publisher": "Monograph Press",
    },
]


@pytest.fixture(scope="session")
def fixture_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("adapters") / "metadata.json"
    path.write_text(json.dumps(FIXTURE_RECORDS), encoding="utf-8")
    return path


@pytest.fixture()
def metadata_source(fixture_path):
    return FixtureMetadataSource.from_file(fixture_path)


@pytest.fixture()
def article_ref():
    return BibRef(
        kind="article",
        title="On X",
        container_title="J. Y",
        year=2019,
        doi="10.1/x",
        issn="1234-5678",
    ).validate()


@pytest.fixture()
def book_ref():
    return BibRef(kind="book", title="Handbook of Borrowed Things",
                  isbn="9781234567897", year=2018).validate()


class StepClock:
    """Deterministic injectable clock; advances only when told to."""

    def __init__(self, start: datetime | None = None):
        self.now = start or datetime(2023, 3, 1, 9, 0, tzinfo=timezone.utc)

    def __call__(self) -> datetime:
        return self.now

    def advance_hours(self, hours: float) -> None:
        from datetime import timedelta

        self.now += timedelta(hours=hours)

    def advance_days(self, days: float) -> None:
        self.advance_hours(days * 24)


@pytest.fixture()
def clock():
    return StepClock()
