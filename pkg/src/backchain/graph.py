"""The master's proof graph: tabled goal nodes, supports, and propagation.

One goal node exists per alpha-equivalent atom (tabling); supports justify
goals and hold per-child solution tables. All mutation happens on the owner's
single event loop; propagation is idempotent at the table level, so the final
(solutions, states) fixpoint does not depend on event interleaving.

States move Unknown -> Success (first solution) or Unknown -> Failure
(expanded, every support failed, nothing in flight); Success is never
revoked within a query.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .derivations import (
    AGENTFUL_LEADSTO,
    AGENTFUL_PHASE1,
    CONJUNCTION,
    FACT,
    JoinedSolution,
    PartialDerivation,
    RULE,
    SupportDescriptor,
    join_solutions,
)
from .terms import (
    Atom,
    Compound,
    Fact,
    Substitution,
    Term,
    Var,
    atom_text,
    atom_vars,
    canonical_key,
    compose_substitutions,
    goal_complexity,
    skolem_bindings,
    skolemize_head,
    subst_term,
)
from .unify import SimilarityProvider, UnificationResult, syntactic_unify

UNKNOWN = "Unknown"
SUCCESS = "Success"
FAILURE = "Failure"


@dataclass
class GoalNode:
    id: str
    atom: Atom
    key: str
    state: str = UNKNOWN
    solutions: dict[str, UnificationResult] = field(default_factory=dict)
    expanded: bool = False
    depth: int = 0
    supports: list[str] = field(default_factory=list)
    # (support id, child slot) pairs this goal feeds into
    parents: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class TupleRec:
    part_keys: tuple[str, ...]
    joined: UnificationResult
    parent_ur: UnificationResult
    # fallback-merge factor: multiplies the support confidence in extraction
    penalty: float = 1.0


@dataclass
class ValidationRec:
    """A proof of a candidate goal accepted by the agentful check."""

    selection_key: str
    score: float
    parent_ur: UnificationResult
    hasgoal_req: Substitution
    frozen_goal_supports: dict[str, tuple[str, ...]]
    frozen_support_children: dict[str, tuple[str, ...]]
    frozen_log_conf: dict[str, float]
    frozen_meta: dict[str, object]
    frozen_root: str


@dataclass
class SupportNode:
    id: str
    descriptor: SupportDescriptor
    parent_goal: str
    children: list[str] = field(default_factory=list)
    var_maps: list[dict[str, str]] = field(default_factory=list)
    state: str = UNKNOWN
    tables: list[dict[str, UnificationResult]] = field(default_factory=list)
    tuples: list[TupleRec] = field(default_factory=list)
    tuple_keys: set[str] = field(default_factory=set)
    emitted: dict[str, UnificationResult] = field(default_factory=dict)
    # agentful bookkeeping
    phase2_seen: set[str] = field(default_factory=set)
    validations: list[ValidationRec] = field(default_factory=list)
    validation_keys: set[str] = field(default_factory=set)
    checked_tree_keys: set[str] = field(default_factory=set)

    @property
    def kind(self) -> str:
        return self.descriptor.kind

    @property
    def confidence(self) -> float:
        return self.descriptor.confidence


@dataclass(frozen=True)
class PropagationEvent:
    """Structured view of a propagation step: the triggering node, its new
    state, and any new unification results. Internally the queue carries
    lightweight tuples; this is the public shape for observers and tests."""

    trigger: str
    new_state: Optional[str] = None
    new_results: tuple[UnificationResult, ...] = ()

    @staticmethod
    def from_tuple(event: tuple, graph: "ProofGraph") -> "PropagationEvent":
        kind = event[0]
        if kind in ("support_emit", "solutions"):
            return PropagationEvent(event[1], None, tuple(event[2]))
        if kind == "goal_failed" or kind == "support_failed":
            return PropagationEvent(event[1], FAILURE)
        if kind == "reemit":
            sid, slot = event[1], event[2]
            child = graph.supports[sid].children[slot]
            return PropagationEvent(child, None, ())
        raise GraphError(f"unknown event {event!r}")


@dataclass
class GoalSelectionStrategy:
    w_conf: float = 1.0
    w_dist: float = 0.1
    w_cplx: float = 0.05
    w_plaus: float = 0.2
    plausibility: Optional[Callable[[str], float]] = None

    def plausibility_of(self, text: str) -> float:
        if self.plausibility is None:
            return 1.0
        return self.plausibility(text)


def normalize_solution(ur: UnificationResult, goal_vars: list[str]) -> UnificationResult:
    """Restrict a solution to the goal's variables with canonical free names.

    Solutions are identified by their bindings alone: symbol merges and
    unifier metadata stay on the supports/tuples that produced them, so a
    goal provable both exactly and through a fuzzy merge still tables as one
    solution (the score keeps the first derivation's value; extraction
    recomputes authoritative scores from the structure).
    """
    rename: dict[str, str] = {}

    def canon(t: Term) -> Term:
        if isinstance(t, Var):
            if t.name not in rename:
                rename[t.name] = f"${len(rename)}"
            return Var(rename[t.name])
        if isinstance(t, Compound):
            return Compound(t.functor, tuple(canon(a) for a in t.args))
        return t

    bindings = {}
    for v in goal_vars:
        value = subst_term(Var(v), ur.substitution)
        if value != Var(v):
            bindings[v] = canon(value)
    return UnificationResult(Substitution(bindings, {}), ur.score, {})


def alpha_map(from_atom: Atom, to_atom: Atom) -> dict[str, str]:
    """Variable renaming between two alpha-equivalent atoms."""
    mapping: dict[str, str] = {}

    def walk(a: Term, b: Term) -> None:
        if isinstance(a, Var) and isinstance(b, Var):
            mapping[a.name] = b.name
        elif isinstance(a, Compound) and isinstance(b, Compound):
            for x, y in zip(a.args, b.args):
                walk(x, y)

    for x, y in zip(from_atom.args, to_atom.args):
        walk(x, y)
    return mapping


AgentfulHandler = Callable[["ProofGraph", str, str, list[UnificationResult]], list[tuple]]


class GraphError(Exception):
    pass


class ProofGraph:
    """Exclusively owned by the master loop; never shared across threads."""

    def __init__(self, query: Atom, strategy: Optional[GoalSelectionStrategy] = None):
        self.goals: dict[str, GoalNode] = {}
        self.supports: dict[str, SupportNode] = {}
        self.key_index: dict[str, str] = {}
        self.support_index: set[tuple[str, str]] = set()
        self.derived: dict[str, Fact] = {}
        self.in_flight: set[str] = set()
        self.strategy = strategy or GoalSelectionStrategy()
        self.agentful_handler: Optional[AgentfulHandler] = None
        self.fallback: Optional[SimilarityProvider] = None
        self.fallback_min_score: float = 0.5
        self.warnings: list[str] = []
        self._seq = 0
        self.query_id = self.ensure_goal(query, depth=0)[0]

    # -- construction -------------------------------------------------------

    def _next_id(self, prefix: str) -> str:
        self._seq += 1
        return f"{prefix}{self._seq}"

    def ensure_goal(self, atom: Atom, depth: int) -> tuple[str, bool]:
        key = canonical_key(atom)
        gid = self.key_index.get(key)
        if gid is not None:
            node = self.goals[gid]
            if depth < node.depth:
                node.depth = depth
            return gid, False
        gid = self._next_id("n")
        self.goals[gid] = GoalNode(id=gid, atom=atom, key=key, depth=depth)
        self.key_index[key] = gid
        return gid, True

    def add_support(
        self,
        parent_gid: str,
        descriptor: SupportDescriptor,
        children: list[tuple[Atom, dict[str, str]]],
    ) -> tuple[Optional[str], list[tuple]]:
        """Attach a support under a goal; returns (sid, staged events).

        Duplicate supports (same kind/ref under the same parent) are dropped.
        """
        dedupe = (parent_gid, descriptor.ref_key())
        if dedupe in self.support_index:
            return None, []
        self.support_index.add(dedupe)
        parent = self.goals[parent_gid]
        sid = self._next_id("s")
        node = SupportNode(id=sid, descriptor=descriptor, parent_goal=parent_gid)
        self.supports[sid] = node
        parent.supports.append(sid)
        events: list[tuple] = []
        for atom, var_map in children:
            cid, created = self.ensure_goal(atom, depth=parent.depth + 1)
            child = self.goals[cid]
            slot = len(node.children)
            if created:
                # a brand-new goal may already be provable from an earlier
                # skolemized inference
                events.extend(self._match_derived(cid))
            mapped = var_map
            if child.atom != atom:
                # tabled against an alpha-equivalent node: retarget the edge
                # map onto the existing node's variable names
                rename = alpha_map(atom, child.atom)
                mapped = {sv: rename.get(cv, cv) for sv, cv in var_map.items()}
            node.children.append(cid)
            node.var_maps.append(dict(mapped))
            node.tables.append({})
            child.parents.append((sid, slot))
            if child.solutions:
                events.append(("reemit", sid, slot))
            if child.state == FAILURE:
                events.append(("support_failed", sid))
        if descriptor.kind == FACT:
            ur = descriptor.unification
            if ur is None:
                raise GraphError("fact support without a unification result")
            parent_ur = UnificationResult(ur.substitution, descriptor.confidence, ur.metadata)
            events.append(("support_emit", sid, [parent_ur]))
        elif descriptor.kind in (RULE, CONJUNCTION) and not node.children:
            unit = JoinedSolution(UnificationResult(Substitution({}, {}), 1.0, {}), ())
            events.extend(self._record_tuples(node, [unit]))
        return sid, events

    def _match_derived(self, gid: str) -> list[tuple]:
        node = self.goals[gid]
        events: list[tuple] = []
        for fact in self.derived.values():
            events.extend(self._attach_derived_fact(gid, fact))
        return events

    def _attach_derived_fact(self, gid: str, fact: Fact) -> list[tuple]:
        node = self.goals[gid]
        if node.state == FAILURE:
            # failure is final within a query; a later inference cannot
            # retroactively revive the node
            return []
        ur = syntactic_unify(node.atom, fact.atom)
        if ur is None:
            return []
        desc = SupportDescriptor(
            kind=FACT,
            prover="graph",
            confidence=fact.confidence * ur.score,
            fact=fact,
            unification=ur,
        )
        sid, events = self.add_support(gid, desc, [])
        return events

    def add_derived_fact(self, atom: Atom, confidence: float, source_rule: str) -> list[tuple]:
        """Record a skolemized inference and expose it to fact matching."""
        key = canonical_key(atom)
        if key in self.derived:
            return []
        fact = Fact(atom, min(max(confidence, 1e-12), 1.0), provenance=f"derived:{source_rule}")
        self.derived[key] = fact
        events: list[tuple] = []
        gid, created = self.ensure_goal(atom, depth=self._derived_depth())
        events.extend(self._attach_derived_fact(gid, fact))
        for other in list(self.goals):
            if other != gid:
                events.extend(self._attach_derived_fact(other, fact))
        return events

    def _derived_depth(self) -> int:
        return max((g.depth for g in self.goals.values()), default=0) + 1

    # -- merge --------------------------------------------------------------

    def merge_update(self, pd: PartialDerivation, root_gid: str) -> list[tuple]:
        """Merge a worker's local derivation; returns staged propagation events."""
        if root_gid not in self.goals:
            self.warnings.append(f"update for unknown goal node {root_gid!r} discarded")
            return []
        support_parent: dict[str, str] = {}
        support_children: dict[str, list[tuple[str, dict[str, str]]]] = {}
        for parent, child, vmap in pd.edges:
            if parent in pd.goal_nodes and child in pd.support_nodes:
                support_parent[child] = parent
            elif parent in pd.support_nodes and child in pd.goal_nodes:
                support_children.setdefault(parent, []).append((child, vmap))
        mapped: dict[str, str] = {pd.root: root_gid}
        events: list[tuple] = []
        pending = list(pd.support_nodes.items())
        progress = True
        while pending and progress:
            progress = False
            remaining = []
            for local_sid, desc in pending:
                parent_local = support_parent.get(local_sid)
                if parent_local is None:
                    self.warnings.append(f"support {local_sid} without a parent goal dropped")
                    progress = True
                    continue
                if parent_local not in mapped:
                    remaining.append((local_sid, desc))
                    continue
                child_specs = []
                for child_local, vmap in support_children.get(local_sid, []):
                    child_specs.append((pd.goal_nodes[child_local], vmap))
                sid, staged = self.add_support(mapped[parent_local], desc, child_specs)
                events.extend(staged)
                if sid is not None:
                    support = self.supports[sid]
                    for (child_local, _), cid in zip(
                        support_children.get(local_sid, []), support.children
                    ):
                        mapped.setdefault(child_local, cid)
                else:
                    # duplicate support: local children may still map to
                    # existing nodes for deeper layers
                    for child_local, _ in support_children.get(local_sid, []):
                        key = canonical_key(pd.goal_nodes[child_local])
                        known = self.key_index.get(key)
                        if known is not None:
                            mapped.setdefault(child_local, known)
                progress = True
            pending = remaining
        for local_sid, _ in pending:
            self.warnings.append(f"support {local_sid} unreachable from update root; dropped")
        self.check_invariants()
        return events

    def mark_expanded(self, gid: str) -> list[tuple]:
        node = self.goals[gid]
        node.expanded = True
        return self._recheck_goal_failure(gid)

    # -- propagation --------------------------------------------------------

    def propagate(self, events: list[tuple], pop: Optional[Callable[[int], int]] = None) -> int:
        """Run staged events to fixpoint; returns the number processed.

        `pop` picks the next queue index (tests use it to shuffle orders and
        check confluence); the default is FIFO.
        """
        queue = deque(events)
        processed = 0
        while queue:
            if pop is None:
                event = queue.popleft()
            else:
                idx = pop(len(queue)) % len(queue)
                queue.rotate(-idx)
                event = queue.popleft()
                queue.rotate(idx)
            processed += 1
            queue.extend(self._handle(event))
        return processed

    def _handle(self, event: tuple) -> list[tuple]:
        kind = event[0]
        if kind == "support_emit":
            return self._on_support_emit(event[1], event[2])
        if kind == "solutions":
            return self._on_goal_solutions(event[1], event[2])
        if kind == "reemit":
            sid, slot = event[1], event[2]
            support = self.supports[sid]
            child = self.goals[support.children[slot]]
            return self._absorb(sid, slot, list(child.solutions.values()))
        if kind == "goal_failed":
            return self._on_goal_failed(event[1])
        if kind == "support_failed":
            return self._on_support_failed(event[1])
        raise GraphError(f"unknown event {event!r}")

    def _on_support_emit(self, sid: str, urs: list[UnificationResult]) -> list[tuple]:
        support = self.supports[sid]
        goal = self.goals[support.parent_goal]
        gvars = atom_vars(goal.atom)
        fresh: list[UnificationResult] = []
        for ur in urs:
            norm = normalize_solution(ur, gvars)
            support.emitted.setdefault(norm.key(), norm)
            if norm.key() not in goal.solutions:
                goal.solutions[norm.key()] = norm
                fresh.append(norm)
            if support.state == UNKNOWN:
                support.state = SUCCESS
        if not fresh:
            return []
        if goal.state == UNKNOWN:
            goal.state = SUCCESS
        return [("solutions", goal.id, fresh)]

    def _on_goal_solutions(self, gid: str, urs: list[UnificationResult]) -> list[tuple]:
        events: list[tuple] = []
        for sid, slot in list(self.goals[gid].parents):
            events.extend(self._absorb(sid, slot, urs))
        return events

    def _absorb(self, sid: str, slot: int, urs: list[UnificationResult]) -> list[tuple]:
        support = self.supports[sid]
        if support.kind in (AGENTFUL_PHASE1, AGENTFUL_LEADSTO):
            if self.agentful_handler is None:
                return []
            return self.agentful_handler(self, sid, support.children[slot], urs)
        if support.kind == FACT:
            return []
        table = support.tables[slot]
        new = [u for u in urs if u.key() not in table]
        for u in new:
            table[u.key()] = u
        if not new:
            return []
        tables: list[list[UnificationResult]] = []
        part_key_lists: list[list[str]] = []
        for i, tbl in enumerate(support.tables):
            entries = new if i == slot else list(tbl.values())
            tables.append(entries)
            part_key_lists.append([u.key() for u in entries])
        joined = join_solutions(
            tables,
            var_maps=support.var_maps,
            fallback=self.fallback,
            min_score=self.fallback_min_score,
        )
        part_keys = [
            tuple(part_key_lists[i][idx] for i, idx in enumerate(j.parts)) for j in joined
        ]
        return self._record_tuples(support, joined, part_keys_override=part_keys)

    def _record_tuples(
        self,
        support: SupportNode,
        joined: list[JoinedSolution],
        part_keys_override: Optional[list[tuple[str, ...]]] = None,
    ) -> list[tuple]:
        events: list[tuple] = []
        fresh_urs: list[UnificationResult] = []
        for i, j in enumerate(joined):
            part_keys = part_keys_override[i] if part_keys_override else ()
            tuple_key = "&".join(part_keys) + "@" + j.ur.key()
            if tuple_key in support.tuple_keys:
                continue
            support.tuple_keys.add(tuple_key)
            parent_ur, derived_events = self._parent_solution(support, j.ur)
            events.extend(derived_events)
            if parent_ur is None:
                continue
            support.tuples.append(TupleRec(part_keys, j.ur, parent_ur, j.penalty))
            if parent_ur.key() not in support.emitted:
                support.emitted[parent_ur.key()] = parent_ur
                fresh_urs.append(parent_ur)
        if fresh_urs:
            events.append(("support_emit", support.id, fresh_urs))
        return events

    def _parent_solution(
        self, support: SupportNode, joined: UnificationResult
    ) -> tuple[Optional[UnificationResult], list[tuple]]:
        goal = self.goals[support.parent_goal]
        desc = support.descriptor
        events: list[tuple] = []
        if desc.kind == CONJUNCTION:
            score = joined.score * desc.confidence
            ur = UnificationResult(joined.substitution, min(score, 1.0), joined.metadata)
            return normalize_solution(ur, atom_vars(goal.atom)), events
        rule = desc.rule
        head_ur = desc.unification
        if rule is None or head_ur is None:
            raise GraphError(f"rule support {support.id} lacks rule/unification")
        combined = compose_substitutions(head_ur.substitution, joined.substitution)
        if combined is None:
            return None, events
        if rule.existentials:
            body_vars = {v for b in rule.body for v in atom_vars(b)}
            grounded = all(
                not _has_free_vars(subst_term(Var(v), combined)) for v in body_vars
            )
            if grounded:
                try:
                    sk = skolem_bindings(rule, combined)
                    sk_atom = skolemize_head(rule, combined)
                    conf = min(joined.score * desc.confidence, 1.0)
                    events.extend(self.add_derived_fact(sk_atom, conf, rule.id))
                    merged = compose_substitutions(combined, Substitution(sk, {}))
                    if merged is not None:
                        combined = merged
                except ValueError:
                    pass
        score = min(joined.score * desc.confidence, 1.0)
        metadata = {**head_ur.metadata, **joined.metadata}
        ur = UnificationResult(combined, score, metadata)
        return normalize_solution(ur, atom_vars(goal.atom)), events

    def _on_goal_failed(self, gid: str) -> list[tuple]:
        node = self.goals[gid]
        if node.state != UNKNOWN:
            return []
        node.state = FAILURE
        events: list[tuple] = []
        for sid, _ in node.parents:
            events.append(("support_failed", sid))
        return events

    def _on_support_failed(self, sid: str) -> list[tuple]:
        support = self.supports[sid]
        if support.state != UNKNOWN:
            return []
        support.state = FAILURE
        return self._recheck_goal_failure(support.parent_goal)

    def _recheck_goal_failure(self, gid: str) -> list[tuple]:
        node = self.goals[gid]
        if node.state != UNKNOWN or not node.expanded or gid in self.in_flight:
            return []
        if all(self.supports[sid].state == FAILURE for sid in node.supports):
            return self._on_goal_failed(gid)
        return []

    # -- goal selection -----------------------------------------------------

    def _reachability(self) -> tuple[dict[str, float], dict[str, int]]:
        C: dict[str, float] = {self.query_id: 1.0}
        D: dict[str, int] = {self.query_id: 0}
        for _ in range(len(self.goals) + 1):
            changed = False
            for sid in sorted(self.supports):
                support = self.supports[sid]
                g = support.parent_goal
                if g not in C:
                    continue
                for cid in support.children:
                    nc = C[g] * support.confidence
                    nd = D[g] + 1
                    if nc > C.get(cid, 0.0):
                        C[cid] = nc
                        changed = True
                    if nd < D.get(cid, 1 << 30):
                        D[cid] = nd
                        changed = True
            if not changed:
                break
        return C, D

    def priority_components(
        self, gid: str, C: dict[str, float], D: dict[str, int]
    ) -> Optional[dict[str, float]]:
        if gid not in C:
            return None
        node = self.goals[gid]
        s = self.strategy
        conf = C[gid]
        dist = float(D[gid])
        cplx = float(goal_complexity(node.atom))
        plaus = s.plausibility_of(atom_text(node.atom))
        priority = s.w_conf * conf - s.w_dist * dist - s.w_cplx * cplx + s.w_plaus * plaus
        return {
            "conf": conf,
            "dist": dist,
            "cplx": cplx,
            "plaus": plaus,
            "w_conf": s.w_conf * conf,
            "w_dist": -s.w_dist * dist,
            "w_cplx": -s.w_cplx * cplx,
            "w_plaus": s.w_plaus * plaus,
            "priority": priority,
        }

    def priority_score(self, gid: str) -> Optional[float]:
        C, D = self._reachability()
        parts = self.priority_components(gid, C, D)
        return None if parts is None else parts["priority"]

    def next_subgoal(self, max_depth: int) -> Optional[tuple[str, dict[str, float]]]:
        C, D = self._reachability()
        best: Optional[tuple[float, str, dict[str, float]]] = None
        for gid in self.goals:
            node = self.goals[gid]
            if node.state != UNKNOWN or node.expanded or gid in self.in_flight:
                continue
            if gid not in C or D[gid] > max_depth:
                continue
            parts = self.priority_components(gid, C, D)
            entry = (-parts["priority"], node.key, parts)
            if best is None or entry[:2] < best[:2]:
                best = entry
        if best is None:
            return None
        _, key, parts = best
        return self.key_index[key], parts

    # -- invariants & snapshot ----------------------------------------------

    def check_invariants(self) -> None:
        if len(self.key_index) != len(self.goals):
            raise GraphError("tabling index out of sync with goal nodes")
        for key, gid in self.key_index.items():
            if self.goals[gid].key != key:
                raise GraphError(f"tabling key mismatch for {gid}")

    def snapshot_records(self) -> dict:
        nodes = []
        for gid in sorted(self.goals, key=_id_order):
            g = self.goals[gid]
            nodes.append(
                {
                    "id": gid,
                    "type": "goal",
                    "atom": atom_text(g.atom),
                    "state": g.state,
                    "expanded": g.expanded,
                    "depth": g.depth,
                    "solutions": sorted(
                        ",".join(
                            f"?{v}={_term_str(t)}"
                            for v, t in sorted(u.substitution.var_bindings.items())
                        )
                        for u in g.solutions.values()
                    ),
                }
            )
        for sid in sorted(self.supports, key=_id_order):
            s = self.supports[sid]
            d = s.descriptor
            nodes.append(
                {
                    "id": sid,
                    "type": "support",
                    "kind": d.kind,
                    "prover": d.prover,
                    "confidence": d.confidence,
                    "rule": d.rule.id if d.rule else None,
                    "fact": atom_text(d.fact.atom) if d.fact else None,
                    "state": s.state,
                }
            )
        edges = []
        for sid in sorted(self.supports, key=_id_order):
            s = self.supports[sid]
            edges.append({"from": s.parent_goal, "to": sid, "var_map": {}})
            for cid, vmap in zip(s.children, s.var_maps):
                edges.append({"from": sid, "to": cid, "var_map": dict(sorted(vmap.items()))})
        return {"query": self.query_id, "nodes": nodes, "edges": edges}

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot_records(), sort_keys=True, indent=2)


def _has_free_vars(t: Term) -> bool:
    if isinstance(t, Var):
        return True
    if isinstance(t, Compound):
        return any(_has_free_vars(a) for a in t.args)
    return False


def _term_str(t: Term) -> str:
    from .terms import term_text

    return term_text(t)


def _id_order(node_id: str) -> tuple[str, int]:
    head = node_id.rstrip("0123456789")
    tail = node_id[len(head):]
    return (head, int(tail) if tail else 0)
