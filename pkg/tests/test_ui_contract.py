"""Keeps the committed UI fixtures in lockstep with the live service: the
recorder is replayed into a temp directory and every file must match what
the frontend tests consume."""

import importlib.util
import json
import sys
from pathlib import Path

import pytest

REPO = Path(__file__).parent.parent
FIXTURES = REPO / "frontend" / "test" / "fixtures"


def _load_recorder():
    spec = importlib.util.spec_from_file_location(
        "record_fixtures", REPO / "frontend" / "scripts" / "record_fixtures.py"
    )
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="module")
def rerecorded(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    _load_recorder().main(out)
    return out


@pytest.mark.parametrize(
    "name",
    [
        "edit_distance_vectors.json",
        "task_response.json",
        "empty_queue_response.json",
        "submit_ok.json",
        "submit_prompt_err.json",
        "submit_checklist_err.json",
        "submit_conflict.json",
    ],
)
def test_fixture_matches_live_service(rerecorded, name):
    committed = json.loads((FIXTURES / name).read_text())
    fresh = json.loads((rerecorded / name).read_text())
    assert committed == fresh, f"{name} is stale; rerun frontend/scripts/record_fixtures.py"


def test_shared_vectors_match_server_edit_distance():
    from altogether.corpus import edit_distance

    vectors = json.loads((FIXTURES / "edit_distance_vectors.json").read_text())
    assert len(vectors) == 20
    for vec in vectors:
        assert edit_distance(vec["a"], vec["b"]) == vec["distance"]
