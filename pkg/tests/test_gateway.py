import json
import sys
import threading
from pathlib import Path

import pytest

from dialkb import KnowledgePipeline
from dialkb.dialogue import Dialogue, Speaker, Turn
from dialkb.errors import GeneratorUnavailable, ProtocolError, ScorerUnavailable
from dialkb.gateway import (
    GatewayClient, GatewayDetector, GatewayDomainModel, GatewayGenerator, GatewayRanker, GatewayRequest,
    batch_request, connect, parse_request, parse_response, request,
)
from dialkb.pipeline import TemplateGenerator
from dialkb.ranker import SEP, RankInput
from gateway_mock import MockServer, Script

ROOT = Path(__file__).resolve().parents[1]
CONFORMANCE = ROOT / "docs" / "gateway_conformance.jsonl"


def _reqs(conn, texts):
    return [GatewayRequest("score", conn.next_id(), {"text": t}) for t in texts]


def test_conformance_fixtures():
    cases = [json.loads(line) for line in CONFORMANCE.read_text().splitlines() if line.strip()]
    assert {c["direction"] for c in cases} == {"request", "response"}
    tasks = set()
    for c in cases:
        if c["direction"] == "request":
            req = parse_request(c["line"])
            tasks.add(req.task)
            assert req.to_line().decode().rstrip("\n") == c["line"]
        elif c["expect"] == "ok":
            resp = parse_response(c["line"])
            if "result" in c:
                assert resp.ok and resp.result == c["result"]
            if "error" in c:
                assert resp.error == c["error"]
        else:
            with pytest.raises(ProtocolError):
                parse_response(c["line"])
    assert tasks == {"score", "classify_domain", "generate"}


def test_request_round_trip_all_tasks():
    with MockServer() as srv, connect(srv.endpoint) as conn:
        assert request(conn, GatewayRequest("score", "1", {"text": "abc"})).result == 0.3
        ctx = [Turn(Speaker.USER, "hi").to_json()]
        assert request(conn, GatewayRequest("classify_domain", "2", {"context": ctx})).result == [0.2, 0.3, 0.5]
        gen = request(conn, GatewayRequest("generate", "3", {"context": ctx, "answer": "Yes."}))
        assert gen.id == "3" and gen.result == "Yes. Anything else?"


def test_out_of_order_replies_are_reordered():
    script = Script().rule("a", delay=0.3).rule("b", delay=0.15)
    with MockServer(script) as srv, connect(srv.endpoint) as conn:
        reqs = _reqs(conn, ["a", "b", "cc"])
        out = batch_request(conn, reqs, max_in_flight=3, timeout=5)
        assert [r.id for r in out] == [r.id for r in reqs]
        assert [r.result for r in out] == [0.1, 0.1, 0.2]
        assert script.sent == [reqs[2].id, reqs[1].id, reqs[0].id]


def test_max_in_flight_one_is_sequential():
    script = Script().rule("a", delay=0.05).rule("b", delay=0.05)
    with MockServer(script) as srv, connect(srv.endpoint) as conn:
        reqs = _reqs(conn, ["a", "b", "c", "a"])
        out = batch_request(conn, reqs, max_in_flight=1)
        assert all(r.ok for r in out)
        assert script.max_in_flight == 1 and script.sent == [r.id for r in reqs]
    with pytest.raises(ValueError):
        batch_request(conn, [], max_in_flight=0)


def test_timeout_isolated_and_late_reply_dropped():
    script = Script().rule("lost", drop=True).rule("late", delay=0.6)
    with MockServer(script) as srv, connect(srv.endpoint) as conn:
        out = batch_request(conn, _reqs(conn, ["x", "lost", "late", "yy"]), max_in_flight=4, timeout=0.3)
        assert out[0].ok and out[3].ok
        assert isinstance(out[1], ScorerUnavailable) and out[1].cause == "timeout"
        assert isinstance(out[2], ScorerUnavailable) and out[2].cause == "timeout"
        # the late reply for the abandoned id arrives and is dropped; the connection stays usable
        threading.Event().wait(0.5)
        assert request(conn, _reqs(conn, ["abc"])[0]).result == 0.3
        with pytest.raises(ScorerUnavailable) as info:
            request(conn, _reqs(conn, ["lost"])[0], timeout=0.1)
        assert info.value.cause == "timeout"


def test_server_error_is_per_request():
    script = Script().rule("bad", error={"code": "overloaded", "message": "try later"})
    with MockServer(script) as srv, connect(srv.endpoint) as conn:
        out = batch_request(conn, _reqs(conn, ["ok", "bad"]))
        assert out[0].ok and not out[1].ok and out[1].error["code"] == "overloaded"
    with MockServer(script) as srv, GatewayClient(srv.endpoint) as client:
        with pytest.raises(ScorerUnavailable, match="overloaded"):
            client.results("score", [{"text": "bad"}])


def test_malformed_reply_for_known_id_fails_only_that_request():
    script = Script().rule("weird", raw='{"id": "{id}", "result": 1, "error": {"code": "x", "message": "y"}}')
    with MockServer(script) as srv, connect(srv.endpoint) as conn:
        out = batch_request(conn, _reqs(conn, ["weird", "fine"]))
        assert isinstance(out[0], ScorerUnavailable) and out[1].ok


def test_unknown_reply_id_is_protocol_error():
    script = Script().rule("stray", reply_id="999", delay=0.05).rule("wait", delay=1.0)
    with MockServer(script) as srv, connect(srv.endpoint) as conn:
        out = batch_request(conn, _reqs(conn, ["wait", "stray"]), timeout=3)
        assert all(isinstance(o, ProtocolError) for o in out)


def test_close_mid_request_is_transport_error():
    script = Script().rule("hangup", close=True, delay=0.05).rule("slow", delay=1.0)
    with MockServer(script) as srv, connect(srv.endpoint) as conn:
        out = batch_request(conn, _reqs(conn, ["slow", "hangup"]), timeout=3)
        assert all(isinstance(o, ScorerUnavailable) and o.cause == "transport" for o in out)
        assert conn.closed
        late = batch_request(conn, _reqs(conn, ["x"]))
        assert isinstance(late[0], ScorerUnavailable)


def test_ids_unique_per_connection():
    with MockServer() as srv, connect(srv.endpoint) as conn:
        req = GatewayRequest("score", "5", {"text": "a"})
        request(conn, req)
        with pytest.raises(ValueError):
            conn.submit(req)
        assert "5" not in {conn.next_id() for _ in range(10)}


def test_connect_failures():
    with pytest.raises(ScorerUnavailable):
        connect("tcp://127.0.0.1:1")
    with pytest.raises(ValueError):
        connect("nonsense")
    with pytest.raises(ScorerUnavailable):
        connect("stdio:/nonexistent/model-server")


def test_stdio_transport_reorders():
    cmd = f"stdio:{sys.executable} {Path(__file__).with_name('gateway_mock.py')}"
    with connect(cmd) as conn:
        reqs = _reqs(conn, ["slow", "quick", "x"])
        out = batch_request(conn, reqs, max_in_flight=3)
        assert [r.id for r in out] == [r.id for r in reqs]
        assert [r.result for r in out] == [0.4, 0.5, 0.1]


def test_pool_serves_concurrent_callers():
    script = Script().rule("a", delay=0.1)
    with MockServer(script) as srv, GatewayClient(srv.endpoint, pool_size=2) as client:
        results = []

        def work():
            results.append(client.results("score", [{"text": "a"}, {"text": "bb"}]))

        threads = [threading.Thread(target=work) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == [[0.1, 0.2]] * 6
        assert 1 <= srv.connections <= 2


def test_gateway_generator_errors():
    script = Script(handler=lambda req: {"result": 42})
    with MockServer(script) as srv, GatewayClient(srv.endpoint) as client:
        with pytest.raises(GeneratorUnavailable):
            GatewayGenerator(client).generate(Dialogue.from_texts(["hi"]), "Yes.")
    client = GatewayClient("tcp://127.0.0.1:1")
    with pytest.raises(GeneratorUnavailable):
        GatewayGenerator(client).generate(Dialogue.from_texts(["hi"]), "Yes.")


def test_gateway_domain_model_normalizes_logits():
    script = Script(handler=lambda req: {"result": [1.0, 1.0, 1.0]})
    with MockServer(script) as srv, GatewayClient(srv.endpoint) as client:
        dist = GatewayDomainModel(client).predict_proba([Dialogue.from_texts(["hi"])])
        assert dist.tolist() == [[1 / 3, 1 / 3, 1 / 3]]
    script = Script(handler=lambda req: {"result": [0.5, 0.5]})
    with MockServer(script) as srv, GatewayClient(srv.endpoint) as client:
        with pytest.raises(ScorerUnavailable):
            GatewayDomainModel(client).predict_proba([Dialogue.from_texts(["hi"])])


def test_unreachable_detector_tags_stage(synth, trained):
    client = GatewayClient("tcp://127.0.0.1:1")
    pipe = KnowledgePipeline(synth.kb, GatewayDetector(client), trained["domain_model"], trained["tracker"],
                             trained["ranker"])
    with pytest.raises(ScorerUnavailable) as info:
        pipe.run_turn(synth.test.dialogues[0])
    assert info.value.stage == "detection"


def replay_handler(models):
    """Serve the built-in models' exact scores over the wire."""
    det, dom, ranker = models["detector"], models["domain_model"], models["ranker"]
    gen = TemplateGenerator()

    def handle(req):
        payload = req["payload"]
        if req["task"] == "score":
            text = payload["text"]
            if f" {SEP} " in text:
                return {"result": float(ranker.score_inputs([RankInput.from_flat(text)])[0])}
            return {"result": float(det.score_texts([text])[0])}
        ctx = Dialogue(Turn(Speaker(t["speaker"]), t["text"]) for t in payload["context"])
        if req["task"] == "classify_domain":
            return {"result": [float(x) for x in dom.predict_proba([ctx])[0]]}
        return {"result": gen.generate(ctx, payload["answer"])}

    return handle


def test_builtin_and_gateway_pipelines_agree(synth, trained):
    builtin = KnowledgePipeline(synth.kb, trained["detector"], trained["domain_model"], trained["tracker"],
                                trained["ranker"])
    expected = builtin.batch_run(synth.test)
    with MockServer(Script(replay_handler(trained))) as srv, GatewayClient(srv.endpoint, pool_size=3) as client:
        remote = KnowledgePipeline(
            synth.kb, GatewayDetector(client, trained["detector"].threshold_), GatewayDomainModel(client),
            trained["tracker"], GatewayRanker(client), GatewayGenerator(client))
        got = remote.batch_run(synth.test, workers=3)
    assert got.errors == []
    assert got.predictions() == expected.predictions()
    assert [r.selected for r in got.results] == [r.selected for r in expected.results]
    assert got.total_scorer_calls == expected.total_scorer_calls
