#!/usr/bin/env python3
"""Record annotation-service responses as JSON fixtures for the UI tests.

Run from the repository root after installing the Python package:

    python3 frontend/scripts/record_fixtures.py

Also emits the shared edit-distance vector set both test suites assert
against (the client re-implements the counter; parity is enforced here).
"""

import json
import sys
from pathlib import Path

from fastapi.testclient import TestClient

from altogether.annosvc import CHECKLIST_KEYS, AnnotationStore, create_app
from altogether.corpus import edit_distance
from altogether.data import fixture_items_path

DEFAULT_OUT = Path(__file__).parent.parent / "test" / "fixtures"

EDIT_VECTOR_PAIRS = [
    ("", ""),
    ("", "abc"),
    ("kitten", "sitting"),
    ("a photo of a dog", "a photo of a dog"),
    ("great gray owl", "a photo of a great gray owl"),
    ("flaw", "lawn"),
    ("intention", "execution"),
    ("Sunday", "Saturday"),
    ("alt text", "alt-text"),
    ("résumé", "resume"),
    ("日本語", "日本語です"),
    ("a  double  space", "a double space"),
    ("The cat sat.", "the cat sat"),
    ("abcdefghij", "jihgfedcba"),
    ("same", "same "),
    ("tab\there", "tab here"),
    ("🦉 owl", "owl 🦉"),
    ("one two three four five", "one three five"),
    ("x" * 40, "x" * 25 + "y" * 15),
    ("a product photo of a mug", "a photo of a product mug"),
]


def main(out: Path | None = None) -> None:
    OUT = Path(out) if out else DEFAULT_OUT
    OUT.mkdir(parents=True, exist_ok=True)

    vectors = [
        {"a": a, "b": b, "distance": edit_distance(a, b)} for a, b in EDIT_VECTOR_PAIRS
    ]
    (OUT / "edit_distance_vectors.json").write_text(
        json.dumps(vectors, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )

    store = AnnotationStore(None)
    client = TestClient(create_app(store))
    items = [json.loads(line) for line in fixture_items_path().read_text().splitlines()]
    project = client.post(
        "/projects",
        json={"name": "ui-fixture", "vendors": ["vendor-a", "vendor-b"], "items": items},
    ).json()
    pid = project["id"]
    client.post(f"/projects/{pid}/rounds", json={})

    task = client.get(f"/projects/{pid}/tasks/next", params={"annotator": "vendor-a"}).json()
    (OUT / "task_response.json").write_text(json.dumps(task, ensure_ascii=False, indent=1) + "\n")

    empty_queue = client.get(
        f"/projects/{pid}/tasks/next", params={"annotator": "vendor-nobody"}
    ).json()
    (OUT / "empty_queue_response.json").write_text(json.dumps(empty_queue, indent=1) + "\n")

    aid = task["task"]["assignment_id"]
    checklist_ok = {key: True for key in CHECKLIST_KEYS}

    bad_prompt = client.post(
        f"/assignments/{aid}/submit",
        json={"caption": "This is an image showing a dog",
              "checklist": checklist_ok, "annotator": "vendor-a"},
    )
    (OUT / "submit_prompt_err.json").write_text(
        json.dumps({"status": bad_prompt.status_code, "body": bad_prompt.json()}, indent=1) + "\n"
    )

    incomplete = dict(checklist_ok)
    incomplete["hallucination-removal"] = False
    bad_checklist = client.post(
        f"/assignments/{aid}/submit",
        json={"caption": "a photo of a dog", "checklist": incomplete, "annotator": "vendor-a"},
    )
    (OUT / "submit_checklist_err.json").write_text(
        json.dumps({"status": bad_checklist.status_code, "body": bad_checklist.json()}, indent=1) + "\n"
    )

    caption = "a photo of " + task["task"]["previous_caption"]
    ok = client.post(
        f"/assignments/{aid}/submit",
        json={"caption": caption, "checklist": checklist_ok, "annotator": "vendor-a"},
    )
    body = ok.json()
    (OUT / "submit_ok.json").write_text(
        json.dumps({"status": ok.status_code, "body": body}, ensure_ascii=False, indent=1) + "\n"
    )
    expected = edit_distance(task["task"]["previous_caption"], caption)
    assert body["edit_distance_to_prev"] == expected

    conflict = client.post(
        f"/assignments/{aid}/submit",
        json={"caption": caption, "checklist": checklist_ok, "annotator": "vendor-a"},
    )
    (OUT / "submit_conflict.json").write_text(
        json.dumps({"status": conflict.status_code, "body": conflict.json()}, indent=1) + "\n"
    )

    print(f"wrote fixtures to {OUT}", file=sys.stderr)


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else None)
