"""Partial derivations (prover output) and the solution-table join.

A prover answers a goal with a small local graph: the goal as root, support
nodes justifying it, and child goal atoms under each support. Goal and
support nodes strictly alternate, and every local graph is a DAG.

`join_solutions` is the binding join that rule and conjunction supports run
over their children's solution tables: a natural join on shared variables,
with an optional fuzzy fallback that can reconcile constant-constant clashes
at a score penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .terms import (
    Atom,
    Const,
    Fact,
    Rule,
    Substitution,
    Var,
    atom_text,
    atom_vars,
    compose_substitutions,
    rule_content_key,
    subst_term,
)
from .unify import SimilarityProvider, UnificationResult

FACT = "fact"
RULE = "rule"
CONJUNCTION = "conjunction-join"
AGENTFUL_PHASE1 = "agentful-phase1"
AGENTFUL_LEADSTO = "agentful-leadsTo"

SUPPORT_KINDS = (FACT, RULE, CONJUNCTION, AGENTFUL_PHASE1, AGENTFUL_LEADSTO)


@dataclass(frozen=True)
class SupportDescriptor:
    kind: str
    prover: str
    confidence: float
    rule: Optional[Rule] = None
    fact: Optional[Fact] = None
    unification: Optional[UnificationResult] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in SUPPORT_KINDS:
            raise ValueError(f"unknown support kind {self.kind!r}")
        if not (0.0 < self.confidence <= 1.0):
            raise ValueError(f"support confidence {self.confidence} outside (0, 1]")

    def ref_key(self) -> str:
        """Identity used to drop duplicate supports under one goal."""
        parts = [self.kind]
        if self.rule is not None:
            parts.append(rule_content_key(self.rule))
        if self.fact is not None:
            parts.append(atom_text(self.fact.atom))
            parts.append(self.fact.provenance)
        if self.unification is not None:
            parts.append(self.unification.key())
        for k in sorted(self.info):
            parts.append(f"{k}={self.info[k]}")
        return "|".join(parts)


@dataclass
class PartialDerivation:
    root: str
    goal_nodes: dict[str, Atom] = field(default_factory=dict)
    support_nodes: dict[str, SupportDescriptor] = field(default_factory=dict)
    # (parent local id, child local id, var map). Goal->support edges carry an
    # empty map; support->goal edges map support-scope vars to child vars.
    edges: list[tuple[str, str, dict[str, str]]] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.support_nodes


class DerivationBuilder:
    """Builds a well-formed single-prover derivation with stable local ids."""

    def __init__(self, root_atom: Atom, prefix: str = ""):
        self.prefix = prefix
        self.pd = PartialDerivation(root=f"{prefix}g0")
        self.pd.goal_nodes[self.pd.root] = root_atom
        self._g = 1
        self._s = 0

    def support(self, descriptor: SupportDescriptor, parent: Optional[str] = None) -> str:
        sid = f"{self.prefix}s{self._s}"
        self._s += 1
        self.pd.support_nodes[sid] = descriptor
        self.pd.edges.append((parent or self.pd.root, sid, {}))
        return sid

    def child_goal(self, support_id: str, atom: Atom, var_map: Optional[dict[str, str]] = None) -> str:
        gid = f"{self.prefix}g{self._g}"
        self._g += 1
        self.pd.goal_nodes[gid] = atom
        if var_map is None:
            var_map = {v: v for v in atom_vars(atom)}
        self.pd.edges.append((support_id, gid, dict(var_map)))
        return gid


def merge_derivations(root_atom: Atom, parts: list[PartialDerivation]) -> PartialDerivation:
    """Union several provers' derivations for the same goal under one root."""
    out = PartialDerivation(root="g0")
    out.goal_nodes["g0"] = root_atom
    for idx, pd in enumerate(parts):
        rename = {pd.root: "g0"}
        for local in pd.goal_nodes:
            if local != pd.root:
                rename[local] = f"p{idx}.{local}"
        for local in pd.support_nodes:
            rename[local] = f"p{idx}.{local}"
        for local, atom in pd.goal_nodes.items():
            if local != pd.root:
                out.goal_nodes[rename[local]] = atom
        for local, desc in pd.support_nodes.items():
            out.support_nodes[rename[local]] = desc
        for parent, child, vmap in pd.edges:
            out.edges.append((rename[parent], rename[child], dict(vmap)))
    return out


def validate_derivation(pd: PartialDerivation) -> list[str]:
    """Structural problems (empty when the derivation is well-formed)."""
    problems = []
    if pd.root not in pd.goal_nodes:
        problems.append("root is not a goal node")
    adjacency: dict[str, list[str]] = {}
    for parent, child, _ in pd.edges:
        adjacency.setdefault(parent, []).append(child)
        parent_is_goal = parent in pd.goal_nodes
        child_is_goal = child in pd.goal_nodes
        if parent_is_goal == child_is_goal:
            problems.append(f"edge {parent}->{child} is not goal/support interleaved")
        if parent not in pd.goal_nodes and parent not in pd.support_nodes:
            problems.append(f"edge from unknown node {parent}")
        if child not in pd.goal_nodes and child not in pd.support_nodes:
            problems.append(f"edge to unknown node {child}")
    # cycle check over local ids
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[str, int] = {}

    def visit(node: str) -> bool:
        color[node] = GRAY
        for nxt in adjacency.get(node, ()):
            c = color.get(nxt, WHITE)
            if c == GRAY or (c == WHITE and visit(nxt)):
                return True
        color[node] = BLACK
        return False

    for node in list(pd.goal_nodes) + list(pd.support_nodes):
        if color.get(node, WHITE) == WHITE and visit(node):
            problems.append("derivation contains a cycle")
            break
    return problems


# ---------------------------------------------------------------------------
# Solution joins
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JoinedSolution:
    ur: UnificationResult
    # one entry per child table: the index of the solution used
    parts: tuple[int, ...]
    # score factor from fallback merges, on top of the member-score product
    penalty: float = 1.0


def translate_solution(ur: UnificationResult, var_map: dict[str, str]) -> UnificationResult:
    """Bring a child-scope solution into the parent scope via the edge map."""
    bindings = {}
    for parent_var, child_var in var_map.items():
        value = ur.substitution.var_bindings.get(child_var)
        if value is not None:
            bindings[parent_var] = value
    return UnificationResult(
        Substitution(bindings, dict(ur.substitution.symbol_map)), ur.score, ur.metadata
    )


def join_solutions(
    child_tables: list[list[UnificationResult]],
    var_maps: Optional[list[dict[str, str]]] = None,
    fallback: Optional[SimilarityProvider] = None,
    min_score: float = 0.5,
    limit: int = 512,
) -> list[JoinedSolution]:
    """Natural join over per-child solution tables.

    Tuples whose standard join fails only on constant-constant clashes are
    retried through the fallback provider: a clash with similarity >= the
    threshold is kept at a score penalty and recorded as a symbol merge.
    The joined score is the product of the member scores (times penalties).
    """
    if var_maps is not None:
        child_tables = [
            [translate_solution(u, vm) for u in table]
            for table, vm in zip(child_tables, var_maps)
        ]
    partials: list[tuple[UnificationResult, tuple[int, ...], float]] = [
        (UnificationResult(Substitution({}, {}), 1.0, {}), (), 1.0)
    ]
    for table in child_tables:
        nxt: list[tuple[UnificationResult, tuple[int, ...], float]] = []
        for acc, parts, penalty in partials:
            for idx, candidate in enumerate(table):
                joined = _join_pair(acc, candidate, fallback, min_score)
                if joined is not None:
                    ur, step_penalty = joined
                    nxt.append((ur, parts + (idx,), penalty * step_penalty))
                    if len(nxt) >= limit:
                        break
            if len(nxt) >= limit:
                break
        partials = nxt
        if not partials:
            return []
    return [JoinedSolution(ur, parts, penalty) for ur, parts, penalty in partials]


def _join_pair(
    acc: UnificationResult,
    new: UnificationResult,
    fallback: Optional[SimilarityProvider],
    min_score: float,
) -> Optional[tuple[UnificationResult, float]]:
    composed = compose_substitutions(acc.substitution, new.substitution)
    penalty = 1.0
    merge_meta: dict[str, str] = {}
    if composed is None:
        if fallback is None:
            return None
        repaired: dict[str, str] = {}
        bindings = dict(new.substitution.var_bindings)
        for v, t2 in new.substitution.var_bindings.items():
            t1 = acc.substitution.var_bindings.get(v)
            if t1 is None or t1 == t2:
                continue
            t1r = subst_term(t1, acc.substitution)
            if isinstance(t1r, Const) and isinstance(t2, Const):
                sim = fallback.similarity(t1r.symbol, t2.symbol)
                if sim >= min_score:
                    bindings[v] = t1r
                    penalty *= sim
                    repaired[t2.symbol] = t1r.symbol
                    merge_meta[f"join:{t2.symbol}={t1r.symbol}"] = repr(sim)
                    continue
            return None
        if not repaired:
            return None
        merged_symbols = dict(new.substitution.symbol_map)
        for frm, to in repaired.items():
            if merged_symbols.get(frm, to) != to:
                return None
            merged_symbols[frm] = to
        composed = compose_substitutions(
            acc.substitution, Substitution(bindings, merged_symbols)
        )
        if composed is None:
            return None
    # only merges produced by this join are recorded; member metadata stays
    # with the member solutions
    metadata = {**acc.metadata, **merge_meta}
    return UnificationResult(composed, acc.score * new.score * penalty, metadata), penalty
