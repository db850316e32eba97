"""Bundled data files: a 20-item, 3-round annotation fixture used by the
round-statistics examples and the annotation-service tests."""

from importlib import resources
from pathlib import Path


def fixture_items_path() -> Path:
    return Path(resources.files(__package__) / "fixture_items.jsonl")


def fixture_rounds_path() -> Path:
    return Path(resources.files(__package__) / "fixture_rounds.jsonl")


def load_fixture_corpus():
    """The bundled corpus with all three rounds applied."""
    from ..corpus import ingest_pairs, load_rounds

    corpus = ingest_pairs(fixture_items_path())
    load_rounds(corpus, fixture_rounds_path())
    return corpus
