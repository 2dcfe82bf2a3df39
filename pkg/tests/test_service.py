"""Service contract tests: one-shot verify semantics, case sensitivity,
answer secrecy, TTL, stats arithmetic; HTTP layer driven by a scripted
client against a live server on an ephemeral port."""

import base64
import io
import json
import threading
import urllib.request

import numpy as np
import pytest
from PIL import Image

from rtcaptcha.attacks import AttackConfig
from rtcaptcha.generate import GenerationConfig
from rtcaptcha.models import build_model
from rtcaptcha.service import CaptchaService, ServiceConfig, VerifyError, serve


def fast_config(**kw):
    # 2-iteration single-scale attack keeps challenge generation snappy
    return ServiceConfig(
        attack_cfg=AttackConfig(eps=0.1, iters=2, mu=1.0, sigma=1.0, scales=1, seed=1),
        generation=GenerationConfig(mode="pseudo"),
        **kw,
    )


class ManualClock:
    def __init__(self):
        self.t = 1000.0

    def __call__(self):
        return self.t


@pytest.fixture(scope="module")
def service():
    return CaptchaService(fast_config(), surrogate=build_model("tiny_lenet", seed=0))


class TestChallenges:
    def test_geometry_and_answer_length(self, service):
        out = service.create_challenge(4, session="s1")
        img = Image.open(io.BytesIO(base64.b64decode(out["image_base64"])))
        assert img.size == (256, 64)
        ch = service.store._live[out["id"]]
        assert len(ch.answer) == 4

    def test_ids_unique(self, service):
        ids = {service.create_challenge(1, session="s1")["id"] for _ in range(8)}
        assert len(ids) == 8

    def test_length_bounds(self, service):
        with pytest.raises(ValueError):
            service.create_challenge(0)
        with pytest.raises(ValueError):
            service.create_challenge(9)

    def test_excluded_chars_not_served(self, service):
        for _ in range(12):
            out = service.create_challenge(4, session="sX")
            answer = service.store._live[out["id"]].answer
            assert "l" not in answer and "I" not in answer

    def test_answer_not_in_response(self, service):
        out = service.create_challenge(4, session="s1")
        answer = service.store._live[out["id"]].answer
        assert answer not in json.dumps(out)


class TestVerify:
    def test_one_shot_semantics(self, service):
        out = service.create_challenge(2, session="v1")
        answer = service.store._live[out["id"]].answer
        assert service.verify_answer(out["id"], answer, 1200.0) == {"correct": True}
        with pytest.raises(VerifyError) as err:
            service.verify_answer(out["id"], answer, 1200.0)
        assert err.value.code == "consumed"

    def test_wrong_answer_also_consumes(self, service):
        out = service.create_challenge(2, session="v1")
        assert service.verify_answer(out["id"], "??", 10.0) == {"correct": False}
        with pytest.raises(VerifyError):
            service.verify_answer(out["id"], "??", 10.0)

    def test_case_sensitive(self, service):
        for _ in range(20):
            out = service.create_challenge(3, session="v2")
            answer = service.store._live[out["id"]].answer
            swapped = answer.swapcase()
            if swapped != answer and all(c in __import__("rtcaptcha.glyphs", fromlist=["ALPHABET"]).ALPHABET for c in swapped):
                assert service.verify_answer(out["id"], swapped, 5.0) == {"correct": False}
                return
            service.verify_answer(out["id"], answer, 5.0)
        pytest.fail("no case-swappable answer drawn")

    def test_unknown_id(self, service):
        with pytest.raises(VerifyError) as err:
            service.verify_answer("nope", "x", 0.0)
        assert err.value.code == "unknown_id"

    def test_expired_ttl(self):
        clock = ManualClock()
        svc = CaptchaService(fast_config(ttl=30.0), surrogate=build_model("tiny_lenet", seed=0), clock=clock)
        out = svc.create_challenge(1, session="t")
        clock.t += 31.0
        with pytest.raises(VerifyError) as err:
            svc.verify_answer(out["id"], "x", 0.0)
        assert err.value.code == "expired"

    def test_store_evicts_expired_and_bounds_size(self):
        clock = ManualClock()
        svc = CaptchaService(fast_config(ttl=30.0, max_live=3), surrogate=build_model("tiny_lenet", seed=0), clock=clock)
        first = svc.create_challenge(1, session="t")["id"]
        clock.t += 31.0
        svc.create_challenge(1, session="t")
        assert first not in svc.store._live
        for _ in range(5):
            svc.create_challenge(1, session="t")
        assert len(svc.store._live) <= 3


class TestStats:
    def test_accuracy_and_mean_time(self):
        svc = CaptchaService(fast_config(), surrogate=build_model("tiny_lenet", seed=0))
        for i, ok in enumerate([True, True, True, False]):
            out = svc.create_challenge(2, session="st")
            answer = svc.store._live[out["id"]].answer
            svc.verify_answer(out["id"], answer if ok else "!!", 1000.0 * (i + 1))
        stats = svc.stats("st")
        assert stats["attempts"] == 4
        assert stats["accuracy"] == pytest.approx(0.75)
        assert stats["mean_elapsed_ms"] == pytest.approx(2500.0)

    def test_empty_session_reports_null_accuracy(self):
        svc = CaptchaService(fast_config(), surrogate=build_model("tiny_lenet", seed=0))
        svc.create_challenge(2, session="empty")
        stats = svc.stats("empty")
        assert stats["attempts"] == 0
        assert stats["accuracy"] is None

    def test_unknown_session_rejected(self):
        svc = CaptchaService(fast_config(), surrogate=build_model("tiny_lenet", seed=0))
        with pytest.raises(VerifyError):
            svc.stats("ghost")

    def test_confusion_rows_sum_to_attempt_counts(self):
        svc = CaptchaService(fast_config(), surrogate=build_model("tiny_lenet", seed=0))
        truth_counts = {}
        for _ in range(6):
            out = svc.create_challenge(2, session="c")
            answer = svc.store._live[out["id"]].answer
            wrong = "".join("9" if ch != "9" else "8" for ch in answer)
            svc.verify_answer(out["id"], wrong, 100.0)
            for ch in answer:
                truth_counts[ch] = truth_counts.get(ch, 0) + 1
        conf = svc.stats("c")["confusion"]
        for ch, count in truth_counts.items():
            assert sum(conf[ch].values()) == count


class TestHttpEndToEnd:
    @pytest.fixture(scope="class")
    def server(self, tmp_path_factory):
        static = tmp_path_factory.mktemp("static")
        (static / "index.html").write_text("<html>ui</html>")
        cfg = fast_config(host="127.0.0.1", port=0, static_dir=str(static))
        srv = serve(cfg, surrogate=build_model("tiny_lenet", seed=0))
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        yield f"http://127.0.0.1:{srv.server_address[1]}", srv
        srv.shutdown()

    def _post(self, base, path, payload):
        req = urllib.request.Request(
            base + path, data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req) as resp:
                return resp.status, json.loads(resp.read())
        except urllib.error.HTTPError as e:
            return e.code, json.loads(e.read())

    def test_scripted_session(self, server):
        base, srv = server
        status, out = self._post(base, "/api/challenge", {"length": 4, "session": "webby"})
        assert status == 200
        assert set(out) == {"id", "image_base64"}
        answer = srv.service.store._live[out["id"]].answer
        assert answer not in json.dumps(out)

        status, verdict = self._post(base, "/api/verify",
                                     {"id": out["id"], "answer": answer, "elapsed_ms": 2300})
        assert status == 200 and verdict == {"correct": True}

        status, again = self._post(base, "/api/verify",
                                   {"id": out["id"], "answer": answer, "elapsed_ms": 1})
        assert status == 409 and again["error"] == "consumed"

        with urllib.request.urlopen(base + "/api/stats?session=webby") as resp:
            stats = json.loads(resp.read())
        assert stats["attempts"] == 1 and stats["accuracy"] == 1.0

    def test_error_codes_distinct(self, server):
        base, _ = server
        status, out = self._post(base, "/api/verify", {"id": "ghost", "answer": "x", "elapsed_ms": 0})
        assert status == 404 and out["error"] == "unknown_id"

    def test_static_ui_served(self, server):
        base, _ = server
        with urllib.request.urlopen(base + "/index.html") as resp:
            assert b"ui" in resp.read()

    def test_bad_json_is_400(self, server):
        base, _ = server
        req = urllib.request.Request(base + "/api/challenge", data=b"{not json",
                                     headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req) as resp:
                status = resp.status
        except urllib.error.HTTPError as e:
            status = e.code
        assert status == 400
