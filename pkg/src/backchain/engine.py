"""Master event loop, workers, and the worker transports.

The master owns the proof graph and loops: merge pending worker updates,
fire propagation to fixpoint, pick the next-best subgoal, dispatch it to an
idle worker. Workers are stateless between requests: each holds a KB
snapshot (hash-checked on every request) and answers an expand request by
running every configured prover on the goal and unioning the derivations.

Three transports share identical message semantics:

  * a synchronous in-process pool (one worker, byte-deterministic),
  * a threaded in-process pool (N workers, arbitrary reply reordering),
  * TCP workers speaking newline-delimited JSON (one object per line).

Wire schema (UTF-8, LF-terminated):

    {"t":"hello","worker":"<id>","kb":"<hash>"}
    {"t":"expand","req":"<id>","goal":<atom>,"params":{...}}
    {"t":"update","req":"<id>","root":"g0","nodes":[...],"edges":[...],"done":true}
    {"t":"err","req":"<id>","msg":"..."}
    {"t":"bye"}

Atoms encode as {"p":"<pred>","args":[<term>...]}; terms as {"v":"x"} for
variables, {"c":"Zoey"} for constants, {"f":"state","args":[...]} for
compounds.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .derivations import (
    AGENTFUL_LEADSTO,
    PartialDerivation,
    SupportDescriptor,
    merge_derivations,
    validate_derivation,
)
from .graph import GoalSelectionStrategy, ProofGraph, SUCCESS
from .provers import (
    AgentfulProver,
    ExpansionParams,
    Prover,
    SldPlusProver,
    make_agentful_handler,
)
from .rulegen import CannedRuleGenerator, TemplateRuleGenerator
from .terms import (
    Atom,
    Compound,
    Const,
    Fact,
    KnowledgeBase,
    Rule,
    Substitution,
    Term,
    Var,
    atom_text,
)
from .textio import RuleTemplate, TypeTaxonomy
from .unify import (
    FuzzyUnifier,
    IdentitySimilarity,
    SimilarityProvider,
    SyntacticUnifier,
    UnificationResult,
    UnifierConfig,
)
from . import extraction


class EngineError(Exception):
    pass


class ProtocolError(EngineError):
    pass


@dataclass
class EngineConfig:
    workers: int = 1
    max_expansions: int = 500
    max_depth: int = 12
    stop_after_solutions: int = 0  # 0 = exhaust the budget
    strategy: GoalSelectionStrategy = field(default_factory=GoalSelectionStrategy)
    unifier: str = "exact"  # "exact" or "fuzzy"
    use_drg: bool = True
    seed: int = 0
    top_k: int = 3
    max_rule_matches: int = 64
    max_fact_matches: int = 64
    validation_k: int = 16
    unifier_config: UnifierConfig = field(default_factory=UnifierConfig)
    remote_workers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise EngineError("worker count must be >= 1")
        if self.max_expansions < 1 or self.max_depth < 1:
            raise EngineError("budgets must be positive")
        if self.unifier not in ("exact", "fuzzy"):
            raise EngineError(f"unknown unifier selection {self.unifier!r}")


@dataclass
class ArtifactSet:
    kb: KnowledgeBase
    templates: list[RuleTemplate] = field(default_factory=list)
    taxonomy: Optional[TypeTaxonomy] = None
    similarity: Optional[SimilarityProvider] = None
    canned_rules: list[Rule] = field(default_factory=list)


def build_provers(artifacts: ArtifactSet, config: EngineConfig) -> list[Prover]:
    unifiers = [SyntacticUnifier()]
    if config.unifier == "fuzzy":
        provider = artifacts.similarity or IdentitySimilarity()
        unifiers.append(FuzzyUnifier(provider, config.unifier_config))
    generators = []
    if artifacts.templates and artifacts.taxonomy is not None:
        generators.append(TemplateRuleGenerator(artifacts.templates, artifacts.taxonomy))
    if artifacts.canned_rules:
        generators.append(CannedRuleGenerator(artifacts.canned_rules))
    return [AgentfulProver(), SldPlusProver(unifiers, generators)]


# ---------------------------------------------------------------------------
# Messages and wire encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpandRequest:
    request_id: str
    goal: Atom
    params: ExpansionParams
    kb_hash: str


@dataclass(frozen=True)
class UpdateReply:
    request_id: str
    derivation: Optional[PartialDerivation]
    done: bool = True
    error: Optional[str] = None
    worker_id: str = ""


def encode_term(t: Term) -> dict:
    if isinstance(t, Var):
        return {"v": t.name}
    if isinstance(t, Const):
        return {"c": t.symbol}
    return {"f": t.functor, "args": [encode_term(a) for a in t.args]}


def decode_term(d: dict) -> Term:
    if "v" in d:
        return Var(d["v"])
    if "c" in d:
        return Const(d["c"])
    if "f" in d:
        return Compound(d["f"], tuple(decode_term(a) for a in d.get("args", [])))
    raise ProtocolError(f"bad term encoding {d!r}")


def encode_atom(a: Atom) -> dict:
    return {"p": a.predicate, "args": [encode_term(t) for t in a.args]}


def decode_atom(d: dict) -> Atom:
    if "p" not in d:
        raise ProtocolError(f"bad atom encoding {d!r}")
    return Atom(d["p"], tuple(decode_term(t) for t in d.get("args", [])))


def encode_substitution(s: Substitution) -> dict:
    return {
        "vars": {v: encode_term(t) for v, t in sorted(s.var_bindings.items())},
        "symbols": dict(sorted(s.symbol_map.items())),
    }


def decode_substitution(d: dict) -> Substitution:
    return Substitution(
        {v: decode_term(t) for v, t in d.get("vars", {}).items()},
        dict(d.get("symbols", {})),
    )


def encode_ur(u: UnificationResult) -> dict:
    return {
        "subst": encode_substitution(u.substitution),
        "score": u.score,
        "meta": dict(sorted(u.metadata.items())),
    }


def decode_ur(d: dict) -> UnificationResult:
    return UnificationResult(
        decode_substitution(d["subst"]), float(d["score"]), dict(d.get("meta", {}))
    )


def encode_rule(r: Rule) -> dict:
    return {
        "id": r.id,
        "head": encode_atom(r.head),
        "body": [encode_atom(b) for b in r.body],
        "conf": r.confidence,
        "tags": sorted(r.tags),
        "prov": r.provenance,
    }


def decode_rule(d: dict) -> Rule:
    return Rule(
        id=d["id"],
        head=decode_atom(d["head"]),
        body=tuple(decode_atom(b) for b in d.get("body", [])),
        confidence=float(d.get("conf", 1.0)),
        tags=frozenset(d.get("tags", [])),
        provenance=d.get("prov", "static"),
    )


def encode_descriptor(desc: SupportDescriptor) -> dict:
    out: dict = {"kind": desc.kind, "prover": desc.prover, "conf": desc.confidence}
    if desc.rule is not None:
        out["rule"] = encode_rule(desc.rule)
    if desc.fact is not None:
        out["fact"] = {
            "atom": encode_atom(desc.fact.atom),
            "conf": desc.fact.confidence,
            "prov": desc.fact.provenance,
        }
    if desc.unification is not None:
        out["ur"] = encode_ur(desc.unification)
    if desc.info:
        out["info"] = dict(sorted(desc.info.items()))
    return out


def decode_descriptor(d: dict) -> SupportDescriptor:
    fact = None
    if "fact" in d:
        fact = Fact(
            decode_atom(d["fact"]["atom"]),
            float(d["fact"]["conf"]),
            d["fact"].get("prov", "kb"),
        )
    return SupportDescriptor(
        kind=d["kind"],
        prover=d.get("prover", "?"),
        confidence=float(d["conf"]),
        rule=decode_rule(d["rule"]) if "rule" in d else None,
        fact=fact,
        unification=decode_ur(d["ur"]) if "ur" in d else None,
        info=dict(d.get("info", {})),
    )


def encode_derivation(pd: PartialDerivation) -> tuple[list, list]:
    nodes = []
    for gid in sorted(pd.goal_nodes):
        nodes.append({"id": gid, "role": "goal", "atom": encode_atom(pd.goal_nodes[gid])})
    for sid in sorted(pd.support_nodes):
        entry = {"id": sid, "role": "support"}
        entry.update(encode_descriptor(pd.support_nodes[sid]))
        nodes.append(entry)
    edges = [
        {"from": parent, "to": child, "vars": dict(sorted(vmap.items()))}
        for parent, child, vmap in pd.edges
    ]
    return nodes, edges


def decode_derivation(root: str, nodes: list, edges: list) -> PartialDerivation:
    pd = PartialDerivation(root=root)
    for n in nodes:
        if n.get("role") == "goal":
            pd.goal_nodes[n["id"]] = decode_atom(n["atom"])
        elif n.get("role") == "support":
            pd.support_nodes[n["id"]] = decode_descriptor(n)
        else:
            raise ProtocolError(f"bad node role in {n!r}")
    for e in edges:
        pd.edges.append((e["from"], e["to"], dict(e.get("vars", {}))))
    return pd


def encode_message(msg: dict) -> bytes:
    return (json.dumps(msg, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode_message(line: bytes) -> dict:
    try:
        out = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from exc
    if not isinstance(out, dict) or "t" not in out:
        raise ProtocolError("frame is not a tagged object")
    return out


def request_to_message(req: ExpandRequest) -> dict:
    return {
        "t": "expand",
        "req": req.request_id,
        "goal": encode_atom(req.goal),
        "params": req.params.to_wire(),
        "kb": req.kb_hash,
    }


def message_to_request(msg: dict) -> ExpandRequest:
    return ExpandRequest(
        request_id=msg["req"],
        goal=decode_atom(msg["goal"]),
        params=ExpansionParams.from_wire(msg.get("params", {})),
        kb_hash=msg.get("kb", ""),
    )


def reply_to_message(reply: UpdateReply) -> dict:
    if reply.error is not None:
        return {"t": "err", "req": reply.request_id, "msg": reply.error}
    nodes, edges = encode_derivation(reply.derivation)
    return {
        "t": "update",
        "req": reply.request_id,
        "root": reply.derivation.root,
        "nodes": nodes,
        "edges": edges,
        "done": reply.done,
    }


def message_to_reply(msg: dict, worker_id: str = "") -> UpdateReply:
    if msg["t"] == "err":
        return UpdateReply(msg.get("req", ""), None, error=msg.get("msg", "error"), worker_id=worker_id)
    pd = decode_derivation(msg["root"], msg.get("nodes", []), msg.get("edges", []))
    return UpdateReply(msg["req"], pd, done=bool(msg.get("done", True)), worker_id=worker_id)


# ---------------------------------------------------------------------------
# Workers
# ---------------------------------------------------------------------------

class Worker:
    """Stateless between requests; answers each goal with a local derivation."""

    def __init__(self, worker_id: str, kb: KnowledgeBase, provers: list[Prover]):
        self.worker_id = worker_id
        self.kb = kb
        self.provers = provers

    def handle(self, req: ExpandRequest) -> UpdateReply:
        if req.kb_hash and req.kb_hash != self.kb.content_hash:
            return UpdateReply(
                req.request_id, None, error="kb hash mismatch", worker_id=self.worker_id
            )
        parts = []
        for prover in self.provers:
            pd = prover.prove(req.goal, self.kb, req.params)
            if pd.is_empty():
                continue
            problems = validate_derivation(pd)
            if problems:
                return UpdateReply(
                    req.request_id,
                    None,
                    error=f"prover {prover.name} produced a malformed derivation: {problems[0]}",
                    worker_id=self.worker_id,
                )
            parts.append(pd)
        merged = merge_derivations(req.goal, parts)
        return UpdateReply(req.request_id, merged, done=True, worker_id=self.worker_id)


class SyncPool:
    """One in-process worker, executed inline: fully deterministic."""

    def __init__(self, worker: Worker):
        self.worker = worker
        self._replies: list[UpdateReply] = []

    def worker_count(self) -> int:
        return 1

    def idle_count(self) -> int:
        return 0 if self._replies else 1

    def pending(self) -> int:
        return len(self._replies)

    def submit(self, req: ExpandRequest) -> None:
        self._replies.append(self.worker.handle(req))

    def recv(self, timeout: Optional[float] = None) -> Optional[UpdateReply]:
        if self._replies:
            return self._replies.pop(0)
        return None

    def close(self) -> None:
        pass


class ThreadPool:
    """N in-process workers on threads; replies arrive in completion order."""

    def __init__(self, workers: list[Worker]):
        self.workers = workers
        self.jobs: "queue.Queue[Optional[ExpandRequest]]" = queue.Queue()
        self.replies: "queue.Queue[UpdateReply]" = queue.Queue()
        self.outstanding = 0
        self.threads = [
            threading.Thread(target=self._run, args=(w,), daemon=True) for w in workers
        ]
        for t in self.threads:
            t.start()

    def _run(self, worker: Worker) -> None:
        while True:
            req = self.jobs.get()
            if req is None:
                return
            try:
                self.replies.put(worker.handle(req))
            except Exception as exc:  # surface engine bugs on the master thread
                self.replies.put(exc)

    def worker_count(self) -> int:
        return len(self.workers)

    def idle_count(self) -> int:
        return max(0, len(self.workers) - self.outstanding)

    def pending(self) -> int:
        return self.outstanding

    def submit(self, req: ExpandRequest) -> None:
        self.outstanding += 1
        self.jobs.put(req)

    def recv(self, timeout: Optional[float] = None) -> Optional[UpdateReply]:
        try:
            reply = self.replies.get(timeout=timeout)
        except queue.Empty:
            return None
        self.outstanding -= 1
        if isinstance(reply, Exception):
            raise EngineError(f"worker crashed: {reply}") from reply
        return reply

    def close(self) -> None:
        for _ in self.threads:
            self.jobs.put(None)


class RemoteWorkerHandle:
    def __init__(self, address: str, expected_hash: str, timeout: float = 10.0):
        host, _, port = address.rpartition(":")
        if not host:
            raise EngineError(f"bad worker address {address!r} (want host:port)")
        self.address = address
        self.sock = socket.create_connection((host, int(port)), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        hello = decode_message(self._readline())
        if hello.get("t") != "hello":
            raise ProtocolError(f"worker {address} did not say hello")
        self.worker_id = hello.get("worker", address)
        if expected_hash and hello.get("kb") != expected_hash:
            self.send({"t": "err", "req": "", "msg": "kb hash mismatch"})
            self.sock.close()
            raise EngineError(f"worker {address} loaded a different KB; refusing")

    def _readline(self) -> bytes:
        line = self.rfile.readline()
        if not line:
            raise ProtocolError(f"worker {self.address} closed the connection")
        return line

    def send(self, msg: dict) -> None:
        self.sock.sendall(encode_message(msg))

    def read_reply(self) -> UpdateReply:
        msg = decode_message(self._readline())
        if msg.get("t") not in ("update", "err"):
            raise ProtocolError(f"unexpected message {msg.get('t')!r}")
        return message_to_reply(msg, worker_id=self.worker_id)

    def close(self) -> None:
        try:
            self.send({"t": "bye"})
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class RemotePool:
    """TCP workers; one outstanding request per worker.

    A worker that drops its connection or answers with an error is excluded;
    its outstanding request surfaces as an error reply so the master can
    re-dispatch to the remaining workers.
    """

    def __init__(self, addresses: list[str], expected_hash: str):
        self.handles = [RemoteWorkerHandle(a, expected_hash) for a in addresses]
        if not self.handles:
            raise EngineError("no remote workers available")
        self.busy: dict[str, RemoteWorkerHandle] = {}
        self.idle: list[RemoteWorkerHandle] = list(self.handles)
        self.replies: "queue.Queue[UpdateReply]" = queue.Queue()
        self._lock = threading.Lock()
        for h in self.handles:
            threading.Thread(target=self._reader, args=(h,), daemon=True).start()

    def _reader(self, handle: RemoteWorkerHandle) -> None:
        while True:
            try:
                reply = handle.read_reply()
            except (ProtocolError, OSError):
                self._drop(handle, "worker connection lost")
                return
            self.replies.put(reply)

    def _drop(self, handle: RemoteWorkerHandle, reason: str) -> None:
        with self._lock:
            if handle in self.handles:
                self.handles.remove(handle)
            if handle in self.idle:
                self.idle.remove(handle)
            orphaned = [rid for rid, h in self.busy.items() if h is handle]
            for rid in orphaned:
                del self.busy[rid]
        for rid in orphaned:
            self.replies.put(
                UpdateReply(rid, None, error=reason, worker_id=handle.worker_id)
            )
        handle.close()

    def worker_count(self) -> int:
        with self._lock:
            return len(self.handles)

    def idle_count(self) -> int:
        with self._lock:
            return len(self.idle)

    def pending(self) -> int:
        with self._lock:
            return len(self.busy) + self.replies.qsize()

    def submit(self, req: ExpandRequest) -> None:
        with self._lock:
            if not self.idle:
                raise EngineError("no idle remote worker")
            handle = self.idle.pop(0)
            self.busy[req.request_id] = handle
        try:
            handle.send(request_to_message(req))
        except OSError:
            self._drop(handle, "worker connection lost")

    def recv(self, timeout: Optional[float] = None) -> Optional[UpdateReply]:
        try:
            reply = self.replies.get(timeout=timeout)
        except queue.Empty:
            return None
        with self._lock:
            handle = self.busy.pop(reply.request_id, None)
        if handle is not None:
            if reply.error is not None:
                self._drop(handle, reply.error)
            else:
                with self._lock:
                    if handle in self.handles:
                        self.idle.append(handle)
        return reply

    def close(self) -> None:
        for h in list(self.handles):
            h.close()


def serve_worker(
    host: str,
    port: int,
    kb: KnowledgeBase,
    provers: list[Prover],
    worker_id: str = "worker",
    idle_timeout: Optional[float] = None,
    on_bind=None,
    max_connections: Optional[int] = None,
) -> int:
    """Serve expand requests over TCP until Bye (or idle timeout); returns port.

    `on_bind(port)` fires once the listening socket is bound (port 0 picks a
    free port, so callers need the callback to learn the real one).
    """
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(4)
    bound_port = server.getsockname()[1]
    if on_bind is not None:
        on_bind(bound_port)
    worker = Worker(worker_id, kb, provers)
    served = 0
    try:
        while True:
            if idle_timeout is not None:
                server.settimeout(idle_timeout)
            try:
                conn, _ = server.accept()
            except socket.timeout:
                return bound_port
            served += 1
            _serve_connection(conn, worker, idle_timeout)
            if max_connections is not None and served >= max_connections:
                return bound_port
    finally:
        server.close()


def _serve_connection(conn: socket.socket, worker: Worker, idle_timeout: Optional[float]) -> None:
    rfile = conn.makefile("rb")
    try:
        conn.sendall(
            encode_message(
                {"t": "hello", "worker": worker.worker_id, "kb": worker.kb.content_hash}
            )
        )
        while True:
            if idle_timeout is not None:
                conn.settimeout(idle_timeout)
            line = rfile.readline()
            if not line:
                return
            try:
                msg = decode_message(line)
            except ProtocolError as exc:
                conn.sendall(encode_message({"t": "err", "req": "", "msg": str(exc)}))
                return
            if msg["t"] == "bye":
                return
            if msg["t"] == "err":
                return
            if msg["t"] != "expand":
                conn.sendall(
                    encode_message({"t": "err", "req": msg.get("req", ""), "msg": "unexpected message"})
                )
                return
            try:
                reply = worker.handle(message_to_request(msg))
            except Exception as exc:
                conn.sendall(
                    encode_message({"t": "err", "req": msg.get("req", ""), "msg": str(exc)})
                )
                continue
            conn.sendall(encode_message(reply_to_message(reply)))
    except (socket.timeout, OSError):
        return
    finally:
        try:
            conn.close()
        except OSError:
            pass


# ---------------------------------------------------------------------------
# Master
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    bindings: dict[str, str]
    score: float
    trees: list[extraction.ProofTree]
    binding_key: str


@dataclass
class QueryResult:
    graph: ProofGraph
    solutions: list[Solution]
    trace: list[dict]
    stats: dict


class Engine:
    def __init__(self, artifacts: ArtifactSet, config: Optional[EngineConfig] = None):
        self.artifacts = artifacts
        self.config = config or EngineConfig()
        self.provers = build_provers(artifacts, self.config)

    def _make_pool(self):
        kb = self.artifacts.kb
        if self.config.remote_workers:
            return RemotePool(list(self.config.remote_workers), kb.content_hash)
        if self.config.workers == 1:
            return SyncPool(Worker("w0", kb, self.provers))
        workers = [
            Worker(f"w{i}", kb, self.provers) for i in range(self.config.workers)
        ]
        return ThreadPool(workers)

    def run(self, query: Atom) -> QueryResult:
        cfg = self.config
        start = time.monotonic()
        graph = ProofGraph(query, strategy=cfg.strategy)
        graph.agentful_handler = make_agentful_handler(cfg.validation_k)
        if cfg.unifier == "fuzzy":
            graph.fallback = self.artifacts.similarity or IdentitySimilarity()
            graph.fallback_min_score = cfg.unifier_config.min_score
        pool = self._make_pool()
        trace: list[dict] = []
        pending_meta: dict[str, tuple[str, int]] = {}
        expansions = 0
        merged = 0
        events: list[tuple] = []
        try:
            while True:
                graph.propagate(events)
                events = []
                query_node = graph.goals[graph.query_id]
                if (
                    cfg.stop_after_solutions
                    and len(query_node.solutions) >= cfg.stop_after_solutions
                ):
                    break
                dispatched = 0
                while pool.idle_count() > 0 and expansions < cfg.max_expansions:
                    nxt = graph.next_subgoal(cfg.max_depth)
                    if nxt is None:
                        break
                    gid, parts = nxt
                    if pool.worker_count() == 0:
                        raise EngineError("all workers failed with work remaining")
                    if gid in graph.in_flight:
                        raise EngineError(f"duplicate in-flight expansion for {gid}")
                    graph.in_flight.add(gid)
                    expansions += 1
                    req_id = f"req-{expansions}"
                    node = graph.goals[gid]
                    params = ExpansionParams(
                        depth=node.depth,
                        max_rule_matches=cfg.max_rule_matches,
                        max_fact_matches=cfg.max_fact_matches,
                        use_drg=cfg.use_drg,
                        unifier=cfg.unifier,
                    )
                    trace_entry = {
                        "seq": expansions,
                        "req": req_id,
                        "goal": atom_text(node.atom),
                        "key": node.key,
                        "depth": node.depth,
                        "worker": "",
                        **{k: parts[k] for k in sorted(parts)},
                    }
                    trace.append(trace_entry)
                    pending_meta[req_id] = (gid, len(trace) - 1)
                    pool.submit(
                        ExpandRequest(req_id, node.atom, params, self.artifacts.kb.content_hash)
                    )
                    dispatched += 1
                if pool.pending() == 0:
                    if dispatched == 0:
                        if pool.worker_count() == 0 and graph.next_subgoal(cfg.max_depth):
                            raise EngineError("all workers failed with work remaining")
                        # quiescent: give agentful validations one sweep over
                        # the completed graph; a ground candidate's solution
                        # set cannot grow, so proofs that finished after its
                        # first success are only seen here
                        events = self._revalidation_sweep(graph)
                        if events:
                            continue
                        break
                    continue
                reply = pool.recv(timeout=30.0)
                if reply is None:
                    raise EngineError("worker pool stalled")
                events.extend(self._merge_reply(graph, reply, pending_meta, trace))
                merged += 1
                while True:
                    extra = pool.recv(timeout=0.0) if pool.pending() else None
                    if extra is None:
                        break
                    events.extend(self._merge_reply(graph, extra, pending_meta, trace))
                    merged += 1
            graph.propagate(events)
        finally:
            pool.close()
        solutions = self._rank_solutions(graph)
        stats = {
            "expansions": expansions,
            "merged_updates": merged,
            "goal_nodes": len(graph.goals),
            "support_nodes": len(graph.supports),
            "solutions": len(solutions),
            "query_state": graph.goals[graph.query_id].state,
            "elapsed_s": round(time.monotonic() - start, 6),
            "warnings": list(graph.warnings),
        }
        return QueryResult(graph=graph, solutions=solutions, trace=trace, stats=stats)

    def _revalidation_sweep(self, graph: ProofGraph) -> list[tuple]:
        if graph.agentful_handler is None:
            return []
        events: list[tuple] = []
        for sid in sorted(graph.supports):
            support = graph.supports[sid]
            if support.kind != AGENTFUL_LEADSTO or len(support.children) < 2:
                continue
            candidate = support.children[1]
            if graph.goals[candidate].state != SUCCESS:
                continue
            events.extend(graph.agentful_handler(graph, sid, candidate, []))
        return events

    def _merge_reply(
        self,
        graph: ProofGraph,
        reply: UpdateReply,
        pending_meta: dict[str, tuple[str, int]],
        trace: list[dict],
    ) -> list[tuple]:
        meta = pending_meta.pop(reply.request_id, None)
        if meta is None:
            graph.warnings.append(f"reply for unknown request {reply.request_id!r}")
            return []
        gid, trace_idx = meta
        graph.in_flight.discard(gid)
        trace[trace_idx]["worker"] = reply.worker_id
        if reply.error is not None:
            # degrade: leave the goal selectable for the remaining workers
            graph.warnings.append(f"worker error on {reply.request_id}: {reply.error}")
            return []
        events = graph.merge_update(reply.derivation, gid)
        events.extend(graph.mark_expanded(gid))
        return events

    def _rank_solutions(self, graph: ProofGraph) -> list[Solution]:
        cfg = self.config
        node = graph.goals[graph.query_id]
        if node.state != SUCCESS:
            return []
        out: list[Solution] = []
        for ur in node.solutions.values():
            try:
                trees = extraction.top_k_proofs(
                    graph, graph.query_id, cfg.top_k, requirement=ur.substitution
                )
            except extraction.ExtractionError:
                trees = []
            if not trees:
                continue
            bindings = {
                f"?{v}": _term_text(t)
                for v, t in sorted(ur.substitution.var_bindings.items())
            }
            out.append(
                Solution(
                    bindings=bindings,
                    score=trees[0].score,
                    trees=trees,
                    binding_key=ur.key(),
                )
            )
        out.sort(key=lambda s: (-s.score, s.binding_key))
        return out


def _term_text(t: Term) -> str:
    from .terms import term_text

    return term_text(t)


def run_query(
    kb: KnowledgeBase, query: Atom, config: Optional[EngineConfig] = None, **artifact_kwargs
) -> QueryResult:
    """Convenience wrapper: build an engine around a bare KB and run one query."""
    artifacts = ArtifactSet(kb=kb, **artifact_kwargs)
    return Engine(artifacts, config).run(query)
