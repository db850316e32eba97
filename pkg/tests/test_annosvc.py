import json
import threading

import pytest
from fastapi.testclient import TestClient

from altogether.annosvc import CHECKLIST_KEYS, AnnotationStore, create_app
from altogether.data import fixture_items_path

CHECKLIST_OK = {key: True for key in CHECKLIST_KEYS}


def _items(n=4, alt_prefix="a photo of thing"):
    return [
        {
            "id": f"it{k}",
            "image_ref": f"https://x/{k}.jpg",
            "alt_text": f"{alt_prefix} {k}",
            "source": "other",
        }
        for k in range(n)
    ]


@pytest.fixture
def client(tmp_path):
    store = AnnotationStore(tmp_path / "events.jsonl")
    return TestClient(create_app(store))


def _create(client, n=4, name="proj", vendors=("vendor-a", "vendor-b")):
    response = client.post(
        "/projects", json={"name": name, "vendors": list(vendors), "items": _items(n)}
    )
    assert response.status_code == 201, response.text
    return response.json()


class TestProjects:
    def test_health(self, client):
        assert client.get("/health").json() == {"status": "ok"}

    def test_create_and_round1_exists(self, client):
        project = _create(client, n=10)
        assert project["n_items"] == 10
        stats = client.get(f"/projects/{project['id']}/stats").json()["rounds"]
        assert len(stats) == 1
        assert stats[0]["round"] == 1
        assert stats[0]["item_count"] == 10

    def test_zero_items_rejected(self, client):
        response = client.post(
            "/projects", json={"name": "p", "vendors": ["a"], "items": []}
        )
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "validation"

    def test_duplicate_name_conflict(self, client):
        _create(client, name="dup")
        response = client.post(
            "/projects", json={"name": "dup", "vendors": ["a"], "items": _items(1)}
        )
        assert response.status_code == 409
        assert response.json()["error"]["code"] == "conflict"

    def test_create_from_file(self, client):
        response = client.post(
            "/projects",
            json={
                "name": "fixture",
                "vendors": ["vendor-a", "vendor-b"],
                "items_path": str(fixture_items_path()),
            },
        )
        assert response.status_code == 201
        assert response.json()["n_items"] == 20

    def test_unknown_project_404(self, client):
        response = client.get("/projects/nope/stats")
        assert response.status_code == 404
        assert response.json()["error"]["code"] == "not_found"

    def test_body_validation_400(self, client):
        response = client.post("/projects", json={"name": "x"})
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "validation"


class TestRounds:
    def test_open_round_splits_vendors(self, client):
        project = _create(client, n=4)
        body = client.post(f"/projects/{project['id']}/rounds", json={}).json()
        assert body["round_no"] == 2
        vendors = [a["vendor"] for a in body["assignments"]]
        assert vendors == ["vendor-a", "vendor-b", "vendor-a", "vendor-b"]

    def test_wrong_round_number_rejected(self, client):
        project = _create(client)
        response = client.post(f"/projects/{project['id']}/rounds", json={"round_no": 3})
        assert response.status_code == 400

    def test_gate_lists_pending_items(self, client):
        project = _create(client, n=3)
        client.post(f"/projects/{project['id']}/rounds", json={})
        response = client.post(f"/projects/{project['id']}/rounds", json={})
        assert response.status_code == 409
        detail = response.json()["error"]["detail"]
        for item in ("it0", "it1", "it2"):
            assert item in detail

    def _submit_round(self, client, project_id, round_no, caption_fn):
        opened = []
        for vendor in ("vendor-a", "vendor-b", "vendor-c"):
            while True:
                task = client.get(
                    f"/projects/{project_id}/tasks/next", params={"annotator": vendor}
                ).json()["task"]
                if task is None:
                    break
                response = client.post(
                    f"/assignments/{task['assignment_id']}/submit",
                    json={
                        "caption": caption_fn(task),
                        "checklist": CHECKLIST_OK,
                        "annotator": vendor,
                    },
                )
                assert response.status_code == 200, response.text
                opened.append(task)
        return opened

    def test_two_vendor_swap(self, client):
        project = _create(client, n=2)
        pid = project["id"]
        round2 = client.post(f"/projects/{pid}/rounds", json={}).json()["assignments"]
        self._submit_round(client, pid, 2, lambda t: "a photo of round two content")
        round3 = client.post(f"/projects/{pid}/rounds", json={}).json()["assignments"]
        by_item_2 = {a["item_id"]: a["vendor"] for a in round2}
        by_item_3 = {a["item_id"]: a["vendor"] for a in round3}
        assert by_item_2 == {"it0": "vendor-a", "it1": "vendor-b"}
        assert by_item_3 == {"it0": "vendor-b", "it1": "vendor-a"}

    def test_three_vendor_rotation(self, client):
        response = client.post(
            "/projects",
            json={"name": "tri", "vendors": ["vendor-a", "vendor-b", "vendor-c"], "items": _items(3)},
        )
        pid = response.json()["id"]
        seen = {}
        for round_no in (2, 3, 4):
            assignments = client.post(f"/projects/{pid}/rounds", json={}).json()["assignments"]
            for a in assignments:
                seen.setdefault(a["item_id"], []).append(a["vendor"])
            self._submit_round(client, pid, round_no, lambda t: f"a photo of round {round_no}")
        for item_id, vendors in seen.items():
            assert len(vendors) == 3
            assert len(set(vendors)) == 3  # full rotation, never repeats
            for a, b in zip(vendors, vendors[1:]):
                assert a != b


class TestTasks:
    def test_round2_previous_caption_is_alt(self, client):
        project = _create(client)
        pid = project["id"]
        client.post(f"/projects/{pid}/rounds", json={})
        task = client.get(f"/projects/{pid}/tasks/next", params={"annotator": "vendor-a"}).json()["task"]
        assert task["previous_caption"] == task["alt_text"]
        assert task["round_no"] == 2
        assert [c["key"] for c in task["checklist"]] == list(CHECKLIST_KEYS)
        assert "a photo of" in task["starting_prompts"]

    def test_empty_queue_distinct_from_error(self, client):
        project = _create(client)
        response = client.get(
            f"/projects/{project['id']}/tasks/next", params={"annotator": "vendor-a"}
        )
        assert response.status_code == 200
        assert response.json() == {"task": None}

    def test_repeated_calls_same_task(self, client):
        project = _create(client)
        pid = project["id"]
        client.post(f"/projects/{pid}/rounds", json={})
        first = client.get(f"/projects/{pid}/tasks/next", params={"annotator": "vendor-a"}).json()
        second = client.get(f"/projects/{pid}/tasks/next", params={"annotator": "vendor-a"}).json()
        assert first == second


class TestSubmission:
    def _open_task(self, client, n=2):
        project = _create(client, n=n)
        pid = project["id"]
        client.post(f"/projects/{pid}/rounds", json={})
        task = client.get(f"/projects/{pid}/tasks/next", params={"annotator": "vendor-a"}).json()["task"]
        return pid, task

    def test_verbose_prompt_rejected(self, client):
        _, task = self._open_task(client)
        response = client.post(
            f"/assignments/{task['assignment_id']}/submit",
            json={"caption": "This image shows a dog", "checklist": CHECKLIST_OK, "annotator": "vendor-a"},
        )
        assert response.status_code == 400
        assert "starting prompt" in response.json()["error"]["detail"]

    def test_incomplete_checklist_names_keys(self, client):
        _, task = self._open_task(client)
        checklist = dict(CHECKLIST_OK)
        checklist["people-policy"] = False
        del checklist["theme-removal"]
        response = client.post(
            f"/assignments/{task['assignment_id']}/submit",
            json={"caption": "a photo of a dog", "checklist": checklist, "annotator": "vendor-a"},
        )
        assert response.status_code == 400
        detail = response.json()["error"]["detail"]
        assert "people-policy" in detail and "theme-removal" in detail

    def test_valid_submission_echoes_stats(self, client):
        _, task = self._open_task(client)
        response = client.post(
            f"/assignments/{task['assignment_id']}/submit",
            json={
                "caption": "a photo of a dog in a park",
                "checklist": CHECKLIST_OK,
                "annotator": "vendor-a",
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["length_words"] == 8
        assert body["edit_distance_to_prev"] > 0
        assert body["matched_prompt"] == "a photo of"

    def test_previous_caption_verbatim_distance_zero(self, client):
        # alt-texts in the fixture start with a recommended prompt, so the
        # copy-then-submit flow is accepted with edit distance 0
        _, task = self._open_task(client)
        response = client.post(
            f"/assignments/{task['assignment_id']}/submit",
            json={"caption": task["previous_caption"], "checklist": CHECKLIST_OK, "annotator": "vendor-a"},
        )
        assert response.status_code == 200
        assert response.json()["edit_distance_to_prev"] == 0

    def test_double_submit_conflict(self, client):
        _, task = self._open_task(client)
        body = {"caption": "a photo of a dog", "checklist": CHECKLIST_OK, "annotator": "vendor-a"}
        assert client.post(f"/assignments/{task['assignment_id']}/submit", json=body).status_code == 200
        response = client.post(f"/assignments/{task['assignment_id']}/submit", json=body)
        assert response.status_code == 409

    def test_unknown_assignment_404(self, client):
        response = client.post(
            "/assignments/a999999/submit",
            json={"caption": "a photo of x", "checklist": CHECKLIST_OK, "annotator": "v"},
        )
        assert response.status_code == 404


class TestStatsEndpoint:
    def test_stats_track_rounds(self, client):
        project = _create(client, n=2)
        pid = project["id"]
        client.post(f"/projects/{pid}/rounds", json={})
        for vendor in ("vendor-a", "vendor-b"):
            task = client.get(f"/projects/{pid}/tasks/next", params={"annotator": vendor}).json()["task"]
            client.post(
                f"/assignments/{task['assignment_id']}/submit",
                json={
                    "caption": "a photo of a dog walking in a large green park",
                    "checklist": CHECKLIST_OK,
                    "annotator": vendor,
                },
            )
        stats = client.get(f"/projects/{pid}/stats").json()["rounds"]
        assert [s["round"] for s in stats] == [1, 2]
        assert stats[1]["mean_length_words"] == 11


class TestPersistence:
    def test_replay_reconstructs_state(self, tmp_path):
        log = tmp_path / "events.jsonl"
        store = AnnotationStore(log)
        client = TestClient(create_app(store))
        project = _create(client, n=2)
        pid = project["id"]
        client.post(f"/projects/{pid}/rounds", json={})
        task = client.get(f"/projects/{pid}/tasks/next", params={"annotator": "vendor-a"}).json()["task"]
        client.post(
            f"/assignments/{task['assignment_id']}/submit",
            json={"caption": "a photo of replayed content", "checklist": CHECKLIST_OK, "annotator": "vendor-a"},
        )

        reborn = AnnotationStore(log)
        assert reborn.project(pid).current_round == 2
        rounds = reborn.project(pid).corpus.rounds_for(task["item_id"])
        assert rounds[-1].caption == "a photo of replayed content"
        assert reborn._assignments[task["assignment_id"]].state == "submitted"
        assert reborn.audit() == 1

    def test_audit_counts_submissions(self, tmp_path):
        store = AnnotationStore(tmp_path / "e.jsonl")
        client = TestClient(create_app(store))
        project = _create(client, n=2)
        pid = project["id"]
        client.post(f"/projects/{pid}/rounds", json={})
        for vendor in ("vendor-a", "vendor-b"):
            task = client.get(f"/projects/{pid}/tasks/next", params={"annotator": vendor}).json()["task"]
            client.post(
                f"/assignments/{task['assignment_id']}/submit",
                json={"caption": "a photo of content", "checklist": CHECKLIST_OK, "annotator": vendor},
            )
        assert store.audit() == 2


class TestConcurrency:
    def test_first_commit_wins(self, tmp_path):
        store = AnnotationStore(tmp_path / "e.jsonl")
        app = create_app(store)
        with TestClient(app) as seed_client:
            project = _create(seed_client, n=1)
            pid = project["id"]
            seed_client.post(f"/projects/{pid}/rounds", json={})
            task = seed_client.get(
                f"/projects/{pid}/tasks/next", params={"annotator": "vendor-a"}
            ).json()["task"]
        statuses = []
        lock = threading.Lock()

        def submit(idx):
            with TestClient(app) as client:
                response = client.post(
                    f"/assignments/{task['assignment_id']}/submit",
                    json={
                        "caption": f"a photo of race entry {idx}",
                        "checklist": CHECKLIST_OK,
                        "annotator": "vendor-a",
                    },
                )
            with lock:
                statuses.append(response.status_code)

        threads = [threading.Thread(target=submit, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(statuses) == [200, 409, 409, 409]
