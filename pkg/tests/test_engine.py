from __future__ import annotations

import json
import random
import threading

import pytest

from backchain.engine import (
    ArtifactSet,
    Engine,
    EngineConfig,
    EngineError,
    ProtocolError,
    Worker,
    build_provers,
    decode_atom,
    decode_message,
    decode_term,
    encode_atom,
    encode_message,
    encode_term,
    message_to_reply,
    message_to_request,
    reply_to_message,
    request_to_message,
    serve_worker,
)
from backchain.provers import ExpansionParams
from backchain.session import ArtifactTexts, execute_query, make_config, render_solutions
from backchain.terms import Compound, Const, Var
from backchain.textio import parse_kb, parse_query

from helpers import forward_chain, ground_atom_space, random_ground_kb, random_var_kb


def q(text):
    return parse_query(text).value


class TestWireEncoding:
    def test_term_encodings_match_schema(self):
        assert encode_term(Var("x")) == {"v": "x"}
        assert encode_term(Const("Zoey")) == {"c": "Zoey"}
        assert encode_term(Compound("state", (Const("plant"), Const("Healthy")))) == {
            "f": "state",
            "args": [{"c": "plant"}, {"c": "Healthy"}],
        }

    def test_atom_round_trip(self):
        atom = q("motivates(Zoey, e3, ?goal)")
        assert decode_atom(encode_atom(atom)) == atom

    def test_frame_round_trip(self):
        req = message_to_request(
            {
                "t": "expand",
                "req": "req-1",
                "goal": encode_atom(q("p(?x)")),
                "params": ExpansionParams().to_wire(),
                "kb": "h",
            }
        )
        frame = encode_message(request_to_message(req))
        again = message_to_request(decode_message(frame.strip()))
        assert again == req

    def test_update_reply_round_trip(self):
        kb = parse_kb("p(a).\nr: s(?x) :- p(?x).").value
        worker = Worker("w0", kb, build_provers(ArtifactSet(kb=kb), EngineConfig()))
        reply = worker.handle(
            __import__("backchain.engine", fromlist=["ExpandRequest"]).ExpandRequest(
                "req-1", q("s(?v)"), ExpansionParams(), kb.content_hash
            )
        )
        msg = reply_to_message(reply)
        again = message_to_reply(decode_message(encode_message(msg).strip()), "w0")
        assert again.request_id == "req-1"
        assert set(again.derivation.support_nodes) == set(reply.derivation.support_nodes)

    def test_truncated_frame_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            decode_message(b'{"t":"expand include')

    def test_untagged_frame_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            decode_message(b'{"x": 1}')


class TestRunQueryBasics:
    def test_ground_query_matching_fact_succeeds_in_one_expansion(self):
        out = execute_query(ArtifactTexts(kb="put(e2)."), "put(e2)", make_config())
        assert out.exit_code == 0
        assert out.result.stats["expansions"] == 1
        assert out.result.solutions[0].score == pytest.approx(1.0)

    def test_query_over_empty_kb_fails(self):
        out = execute_query(ArtifactTexts(kb=""), "nosuch(x)", make_config())
        assert out.exit_code == 1
        assert out.result.stats["query_state"] == "Failure"

    def test_conjunction_query_joins_bindings(self):
        texts = ArtifactTexts(kb="p(a). p(b). r(b).")
        out = execute_query(texts, "p(?x), r(?x)", make_config())
        assert len(out.result.solutions) == 1
        assert out.result.solutions[0].bindings == {"?x": "b"}

    def test_stop_after_solutions(self):
        texts = ArtifactTexts(kb="p(a). p(b). p(c).")
        cfg = make_config(stop_after_solutions=1)
        out = execute_query(texts, "p(?x)", cfg)
        assert out.result.solutions

    def test_invalid_config_rejected(self):
        with pytest.raises(EngineError):
            EngineConfig(workers=0)

    def test_max_expansions_bounds_work(self):
        # left-recursive rule would loop forever without tabling + budgets
        texts = ArtifactTexts(kb="r: p(?x) :- p(?x).")
        cfg = make_config(max_expansions=20)
        out = execute_query(texts, "p(a)", cfg)
        assert out.result.stats["expansions"] <= 20
        assert out.result.solutions == []


class TestDeterminism:
    def test_single_worker_trace_is_byte_identical(self, zoey_texts):
        cfg = make_config(has_similarity=True, seed=3)
        a = execute_query(zoey_texts, "motivates(Zoey, e3, ?goal)", cfg)
        b = execute_query(zoey_texts, "motivates(Zoey, e3, ?goal)", cfg)
        ta = "\n".join(json.dumps(e, sort_keys=True) for e in a.result.trace)
        tb = "\n".join(json.dumps(e, sort_keys=True) for e in b.result.trace)
        assert ta == tb

    def test_trace_components_sum_to_priority(self, zoey_texts):
        out = execute_query(zoey_texts, "motivates(Zoey, e3, ?goal)", make_config(has_similarity=True))
        for entry in out.result.trace:
            total = entry["w_conf"] + entry["w_dist"] + entry["w_cplx"] + entry["w_plaus"]
            assert total == pytest.approx(entry["priority"], abs=1e-12)


class TestParallelInvariance:
    def _fingerprint(self, texts, query, workers, seed):
        cfg = make_config(workers=workers, seed=seed)
        out = execute_query(texts, query, cfg)
        return sorted(
            (tuple(sorted(s.bindings.items())), round(s.score, 9))
            for s in out.result.solutions
        )

    def test_one_vs_four_workers_small(self):
        rng = random.Random(5)
        for _ in range(4):
            kb, query = random_var_kb(rng)
            from backchain.textio import serialize_kb

            texts = ArtifactTexts(kb=serialize_kb(kb))
            from backchain.terms import atom_text

            qt = atom_text(query)
            assert self._fingerprint(texts, qt, 1, 0) == self._fingerprint(texts, qt, 4, 0)


class TestForwardChainAgreement:
    def test_ground_horn_kbs_match_fixpoint(self):
        rng = random.Random(42)
        constants = ["c0", "c1", "c2"]
        atoms = ground_atom_space(constants)
        for _ in range(5):
            kb = random_ground_kb(rng, constants, max_facts=12, max_rules=8)
            expected = forward_chain(kb)
            engine = Engine(ArtifactSet(kb=kb), make_config(use_drg=False, stop_after_solutions=1, max_depth=50))
            from backchain.terms import atom_text

            provable = {
                atom_text(a)
                for a in atoms
                if engine.run(a).solutions
            }
            assert provable == expected


class TestRemoteWorkers:
    def _start_worker(self, kb, provers, **kwargs):
        ready = threading.Event()
        bound = {}

        def on_bind(port: int) -> None:
            bound["port"] = port
            ready.set()

        thread = threading.Thread(
            target=serve_worker,
            args=("127.0.0.1", 0, kb, provers),
            kwargs={"on_bind": on_bind, "idle_timeout": 15.0, **kwargs},
            daemon=True,
        )
        thread.start()
        assert ready.wait(5)
        return bound["port"]

    def test_loopback_worker_matches_in_process(self, zoey_texts, zoey_artifacts):
        provers = build_provers(zoey_artifacts, EngineConfig(unifier="fuzzy"))
        port = self._start_worker(zoey_artifacts.kb, provers, max_connections=1)
        local = execute_query(zoey_texts, "motivates(Zoey, e3, ?goal)", make_config(has_similarity=True))
        remote = execute_query(
            zoey_texts,
            "motivates(Zoey, e3, ?goal)",
            make_config(has_similarity=True, remote_workers=(f"127.0.0.1:{port}",)),
        )
        assert render_solutions(local, "text") == render_solutions(remote, "text")

    def test_kb_hash_mismatch_excludes_worker(self, zoey_artifacts):
        other_kb = parse_kb("p(a).").value
        provers = build_provers(ArtifactSet(kb=other_kb), EngineConfig())
        port = self._start_worker(other_kb, provers, max_connections=1)
        cfg = make_config(remote_workers=(f"127.0.0.1:{port}",))
        engine = Engine(zoey_artifacts, cfg)
        with pytest.raises(EngineError):
            engine.run(q("motivates(Zoey, e3, ?goal)"))

    def test_worker_side_hash_check_errors(self):
        kb = parse_kb("p(a).").value
        worker = Worker("w0", kb, build_provers(ArtifactSet(kb=kb), EngineConfig()))
        from backchain.engine import ExpandRequest

        reply = worker.handle(ExpandRequest("r1", q("p(?x)"), ExpansionParams(), "bogus-hash"))
        assert reply.error == "kb hash mismatch"


class TestWorkerDegradation:
    def _rogue_server(self, kb_hash: str):
        """A worker that handshakes, then drops the connection on first use."""
        import socket as socket_mod

        srv = socket_mod.socket(socket_mod.AF_INET, socket_mod.SOCK_STREAM)
        srv.setsockopt(socket_mod.SOL_SOCKET, socket_mod.SO_REUSEADDR, 1)
        srv.bind(("127.0.0.1", 0))
        srv.listen(1)
        port = srv.getsockname()[1]

        def run():
            conn, _ = srv.accept()
            conn.sendall(encode_message({"t": "hello", "worker": "rogue", "kb": kb_hash}))
            conn.makefile("rb").readline()
            conn.close()
            srv.close()

        threading.Thread(target=run, daemon=True).start()
        return port

    def test_degrades_to_remaining_workers(self, zoey_texts, zoey_artifacts):
        provers = build_provers(zoey_artifacts, EngineConfig(unifier="fuzzy"))
        rogue_port = self._rogue_server(zoey_artifacts.kb.content_hash)
        ready = threading.Event()
        bound = {}

        def on_bind(port):
            bound["port"] = port
            ready.set()

        threading.Thread(
            target=serve_worker,
            args=("127.0.0.1", 0, zoey_artifacts.kb, provers),
            kwargs={"on_bind": on_bind, "idle_timeout": 20.0, "max_connections": 1},
            daemon=True,
        ).start()
        assert ready.wait(5)
        cfg = make_config(
            has_similarity=True,
            remote_workers=(f"127.0.0.1:{rogue_port}", f"127.0.0.1:{bound['port']}"),
        )
        out = execute_query(zoey_texts, "motivates(Zoey, e3, ?goal)", cfg)
        assert out.exit_code == 0
        assert any("worker" in w for w in out.result.stats["warnings"])

    def test_error_when_no_workers_remain(self, zoey_texts, zoey_artifacts):
        rogue_port = self._rogue_server(zoey_artifacts.kb.content_hash)
        cfg = make_config(has_similarity=True, remote_workers=(f"127.0.0.1:{rogue_port}",))
        with pytest.raises(EngineError):
            execute_query(zoey_texts, "motivates(Zoey, e3, ?goal)", cfg)


class TestServeWorkerLifecycle:
    def test_idle_timeout_shuts_down(self):
        kb = parse_kb("p(a).").value
        provers = build_provers(ArtifactSet(kb=kb), EngineConfig())
        import time

        start = time.monotonic()
        serve_worker("127.0.0.1", 0, kb, provers, idle_timeout=0.2)
        assert time.monotonic() - start < 5.0


class TestGroundMotivatesTarget:
    def test_ground_target_accepted_when_it_matches(self):
        texts = ArtifactTexts(
            kb="""
            hasGoal(Zoey, win).
            c: 0.9 [causal] :: win :- act(e3).
            act(e3).
            """
        )
        out = execute_query(texts, "motivates(Zoey, e3, win)", make_config())
        assert out.exit_code == 0
        assert out.result.solutions[0].bindings == {}

    def test_ground_target_rejected_when_it_differs(self):
        texts = ArtifactTexts(
            kb="""
            hasGoal(Zoey, win).
            c: 0.9 [causal] :: win :- act(e3).
            act(e3).
            """
        )
        out = execute_query(texts, "motivates(Zoey, e3, lose)", make_config())
        assert out.result.solutions == []


class TestSkolemDeterminismAcrossWorkers:
    KB = """
    owns(alice, chair1).
    owns(bob, chair1).
    hp: 0.9 :: hasPart(?o, ?p) :- owns(?a, ?o).
    u: usable(?o) :- hasPart(?o, ?p).
    """

    def test_same_skolem_term_for_one_and_four_workers(self):
        from backchain.terms import atom_text as at

        derived = []
        for workers in (1, 4):
            out = execute_query(
                ArtifactTexts(kb=self.KB), "usable(chair1)", make_config(workers=workers)
            )
            derived.append(sorted(at(f.atom) for f in out.result.graph.derived.values()))
        assert derived[0] == derived[1] == ["hasPart(chair1, sk$hp$p(chair1))"]
