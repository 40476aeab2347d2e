"""Proof extraction: a 0-1 program over the proof graph, solved exactly.

Extraction runs in two stages. First the graph is instantiated against a
target goal and (optionally) a required binding: every (goal, binding)
demand becomes one model variable, and every support alternative that can
actually deliver that binding (a recorded join tuple, a fact match, or a
validated agentful proof) becomes a choice with the per-child demands it
imposes. This keeps structurally valid selections binding-consistent.

The model itself is the classic formulation: one binary per node,

  * the target goal is included,
  * an included goal includes exactly one of its supports,
  * an included support includes all of its child goals,
  * no goal may appear inside its own support subtree (acyclicity),

maximizing the product of confidences of the included nodes, linearized as a
sum of log-confidences (all coefficients <= 0, which also gives the solver
its bound). Top-k enumeration re-solves after adding a no-good cut that
excludes each optimum's exact support selection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .derivations import AGENTFUL_LEADSTO, AGENTFUL_PHASE1, CONJUNCTION, FACT, RULE
from .graph import (
    FAILURE,
    ProofGraph,
    SUCCESS,
    SupportNode,
    ValidationRec,
    normalize_solution,
)
from .terms import (
    Atom,
    Substitution,
    apply_substitution,
    atom_text,
    atom_vars,
    term_text,
)
from .unify import UnificationResult


class ExtractionError(Exception):
    pass


@dataclass
class IlpModel:
    root: str
    goal_supports: dict[str, tuple[str, ...]] = field(default_factory=dict)
    support_children: dict[str, tuple[str, ...]] = field(default_factory=dict)
    log_conf: dict[str, float] = field(default_factory=dict)
    meta: dict[str, dict] = field(default_factory=dict)

    def variables(self) -> list[str]:
        return sorted(set(self.goal_supports) | set(self.support_children))


@dataclass(frozen=True)
class Assignment:
    goals: frozenset[str]
    supports: frozenset[str]
    objective: float

    @property
    def nodes(self) -> frozenset[str]:
        return self.goals | self.supports

    def sort_key(self) -> tuple:
        return (-self.objective, tuple(sorted(self.nodes)))


# ---------------------------------------------------------------------------
# Instantiation: graph -> model
# ---------------------------------------------------------------------------

def _binding_key(ur_or_subst) -> str:
    subst = ur_or_subst.substitution if isinstance(ur_or_subst, UnificationResult) else ur_or_subst
    return ",".join(f"?{v}={term_text(t)}" for v, t in sorted(subst.var_bindings.items()))


def _requirement(subst: Substitution, goal_vars: list[str]) -> Substitution:
    ur = UnificationResult(subst, 1.0, {})
    return normalize_solution(ur, goal_vars).substitution


def build_ilp(
    graph: ProofGraph,
    target_gid: str,
    requirement: Optional[Substitution] = None,
) -> IlpModel:
    """Instantiate the proof graph into a choice model rooted at the target."""
    target = graph.goals[target_gid]
    if target.state != SUCCESS:
        raise ExtractionError(f"target goal {atom_text(target.atom)} is not Success")
    req = _requirement(requirement or Substitution({}, {}), atom_vars(target.atom))
    model = IlpModel(root="")
    model.root = _instantiate_goal(graph, model, target_gid, req, set())
    return model


def _instantiate_goal(
    graph: ProofGraph,
    model: IlpModel,
    gid: str,
    req: Substitution,
    building: set[str],
) -> str:
    node = graph.goals[gid]
    igoal = f"{gid}|{_binding_key(req)}"
    if igoal in model.goal_supports or igoal in building:
        return igoal
    building.add(igoal)
    model.meta[igoal] = {
        "type": "goal",
        "gid": gid,
        "atom": node.atom,
        "requirement": req,
    }
    choices: list[str] = []
    req_key = _binding_key(req)
    for sid in node.supports:
        support = graph.supports[sid]
        choices.extend(
            _instantiate_support(graph, model, support, req_key, building)
        )
    model.goal_supports[igoal] = tuple(sorted(choices))
    model.log_conf.setdefault(igoal, 0.0)
    building.discard(igoal)
    return igoal


def _instantiate_support(
    graph: ProofGraph,
    model: IlpModel,
    support: SupportNode,
    req_key: str,
    building: set[str],
) -> list[str]:
    kind = support.kind
    out: list[str] = []
    if kind == AGENTFUL_PHASE1:
        return out
    if kind == FACT:
        for ur in support.emitted.values():
            if _binding_key(ur) != req_key:
                continue
            isup = f"{support.id}|{ur.key()}"
            if isup not in model.support_children:
                model.support_children[isup] = ()
                model.log_conf[isup] = math.log(support.confidence)
                model.meta[isup] = {
                    "type": "support",
                    "sid": support.id,
                    "descriptor": support.descriptor,
                    "ur": ur,
                }
            out.append(isup)
        return out
    if kind in (RULE, CONJUNCTION):
        for index, rec in enumerate(support.tuples):
            if _binding_key(rec.parent_ur) != req_key:
                continue
            isup = f"{support.id}|t{index}"
            if isup in model.support_children:
                out.append(isup)
                continue
            model.support_children[isup] = ()
            model.log_conf[isup] = math.log(support.confidence * rec.penalty)
            model.meta[isup] = {
                "type": "support",
                "sid": support.id,
                "descriptor": support.descriptor,
                "ur": rec.parent_ur,
                "tuple": rec,
            }
            children = []
            for slot, part_key in enumerate(rec.part_keys):
                cid = support.children[slot]
                part_ur = support.tables[slot].get(part_key)
                if part_ur is None:
                    continue
                child_req = _requirement(
                    part_ur.substitution, atom_vars(graph.goals[cid].atom)
                )
                children.append(
                    _instantiate_goal(graph, model, cid, child_req, building)
                )
            model.support_children[isup] = tuple(children)
            out.append(isup)
        return out
    if kind == AGENTFUL_LEADSTO:
        for index, rec in enumerate(support.validations):
            if _binding_key(rec.parent_ur) != req_key:
                continue
            isup = f"{support.id}|v{index}"
            if isup in model.support_children:
                out.append(isup)
                continue
            model.support_children[isup] = ()
            model.log_conf[isup] = math.log(support.confidence)
            model.meta[isup] = {
                "type": "support",
                "sid": support.id,
                "descriptor": support.descriptor,
                "ur": rec.parent_ur,
                "validation": rec,
            }
            children = []
            hasgoal_gid = support.children[0]
            child_req = _requirement(
                rec.hasgoal_req, atom_vars(graph.goals[hasgoal_gid].atom)
            )
            children.append(
                _instantiate_goal(graph, model, hasgoal_gid, child_req, building)
            )
            children.append(_splice_validation(model, support, index, rec))
            model.support_children[isup] = tuple(children)
            out.append(isup)
        return out
    raise ExtractionError(f"cannot extract through support kind {kind!r}")


def _splice_validation(
    model: IlpModel, support: SupportNode, index: int, rec: ValidationRec
) -> str:
    """Graft a validated (pinned) proof of the candidate goal into the model."""
    prefix = f"{support.id}|v{index}:"
    for igoal, chosen in rec.frozen_goal_supports.items():
        model.goal_supports[prefix + igoal] = tuple(prefix + c for c in chosen)
        model.log_conf[prefix + igoal] = rec.frozen_log_conf.get(igoal, 0.0)
        model.meta[prefix + igoal] = rec.frozen_meta[igoal]
    for isup, children in rec.frozen_support_children.items():
        model.support_children[prefix + isup] = tuple(prefix + c for c in children)
        model.log_conf[prefix + isup] = rec.frozen_log_conf.get(isup, 0.0)
        model.meta[prefix + isup] = rec.frozen_meta[isup]
    return prefix + rec.frozen_root


def freeze_assignment(model: IlpModel, assignment: Assignment) -> dict:
    """Restrict a model to one assignment (used to pin validated proofs)."""
    goal_supports: dict[str, tuple[str, ...]] = {}
    support_children: dict[str, tuple[str, ...]] = {}
    log_conf: dict[str, float] = {}
    meta: dict[str, dict] = {}
    for igoal in assignment.goals:
        chosen = [s for s in model.goal_supports[igoal] if s in assignment.supports]
        goal_supports[igoal] = tuple(chosen[:1])
        log_conf[igoal] = model.log_conf[igoal]
        meta[igoal] = model.meta[igoal]
    for isup in assignment.supports:
        support_children[isup] = model.support_children[isup]
        log_conf[isup] = model.log_conf[isup]
        meta[isup] = model.meta[isup]
    return {
        "goal_supports": goal_supports,
        "support_children": support_children,
        "log_conf": log_conf,
        "meta": meta,
        "root": model.root,
    }


# ---------------------------------------------------------------------------
# Exact top-k solver
# ---------------------------------------------------------------------------

_EPS = 1e-12


def solve_top_k(model: IlpModel, k: int) -> list[Assignment]:
    """Best-first enumeration of proof selections via repeated exact solves.

    Each solve is a depth-first branch-and-bound over support choices; the
    running log-sum is a valid upper bound because every coefficient is <= 0.
    After an optimum is found its support selection is excluded (a no-good
    cut) and the search repeats, so results come out strictly ordered.
    """
    if k < 1:
        raise ExtractionError("k must be >= 1")
    cuts: set[frozenset[str]] = set()
    results: list[Assignment] = []
    for _ in range(k):
        best = _solve_once(model, cuts)
        if best is None:
            break
        results.append(best)
        cuts.add(best.supports)
    return results


def _solve_once(model: IlpModel, cuts: set[frozenset[str]]) -> Optional[Assignment]:
    best: Optional[Assignment] = None

    def consider(goals: set[str], supports: set[str], objective: float) -> None:
        nonlocal best
        if frozenset(supports) in cuts:
            return
        candidate = Assignment(frozenset(goals), frozenset(supports), objective)
        if not _acyclic(model, candidate):
            return
        if best is None or candidate.sort_key() < best.sort_key():
            best = candidate

    def search(
        pending: list[str],
        goals: set[str],
        supports: set[str],
        ancestors: dict[str, frozenset[str]],
        objective: float,
    ) -> None:
        if best is not None and objective < best.objective - _EPS:
            return
        if not pending:
            consider(goals, supports, objective)
            return
        igoal = pending[0]
        rest = pending[1:]
        for isup in model.goal_supports.get(igoal, ()):
            children = model.support_children[isup]
            if any(c in ancestors[igoal] or c == igoal for c in children):
                continue  # closes a goal cycle along this path
            new_goals = [c for c in children if c not in goals]
            if any(not model.goal_supports.get(c) for c in new_goals):
                continue  # unprovable child: infeasible branch
            gain = model.log_conf[isup] + sum(model.log_conf[c] for c in new_goals)
            next_ancestors = dict(ancestors)
            lineage = ancestors[igoal] | {igoal}
            for c in children:
                next_ancestors[c] = next_ancestors.get(c, frozenset()) | lineage
            goals.update(new_goals)
            supports.add(isup)
            search(rest + new_goals, goals, supports, next_ancestors, objective + gain)
            supports.discard(isup)
            goals.difference_update(new_goals)

    root = model.root
    if root not in model.goal_supports:
        return None
    search([root], {root}, set(), {root: frozenset()}, model.log_conf.get(root, 0.0))
    return best


def _acyclic(model: IlpModel, assignment: Assignment) -> bool:
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[str, int] = {}

    def visit(igoal: str) -> bool:
        color[igoal] = GRAY
        for isup in model.goal_supports.get(igoal, ()):
            if isup not in assignment.supports:
                continue
            for child in model.support_children[isup]:
                c = color.get(child, WHITE)
                if c == GRAY or (c == WHITE and visit(child)):
                    return True
        color[igoal] = BLACK
        return False

    return not visit(model.root)


def check_assignment(model: IlpModel, assignment: Assignment) -> list[str]:
    """Violations of the extraction constraints (empty when valid)."""
    problems = []
    if model.root not in assignment.goals:
        problems.append("root goal not included")
    for igoal in assignment.goals:
        chosen = [s for s in model.goal_supports.get(igoal, ()) if s in assignment.supports]
        if len(chosen) != 1:
            problems.append(f"goal {igoal} has {len(chosen)} chosen supports")
    for isup in assignment.supports:
        for child in model.support_children.get(isup, ()):
            if child not in assignment.goals:
                problems.append(f"support {isup} missing child {child}")
    if not _acyclic(model, assignment):
        problems.append("selection contains a goal cycle")
    return problems


# ---------------------------------------------------------------------------
# Proof trees
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    role: str  # "goal" or "support"
    label: str
    confidence: float
    children: list["TreeNode"] = field(default_factory=list)
    rule_id: Optional[str] = None
    provenance: Optional[str] = None
    kind: Optional[str] = None
    tags: tuple[str, ...] = ()
    fuzzy: tuple[tuple[str, str, float], ...] = ()


@dataclass
class ProofTree:
    root: TreeNode
    score: float
    bindings: dict[str, str]
    rule_supports: list[TreeNode]
    fact_supports: list[TreeNode]
    fuzzy_matches: list[tuple[str, str, float]]
    assignment: Assignment


def extract_proof_tree(graph: ProofGraph, model: IlpModel, assignment: Assignment) -> ProofTree:
    problems = check_assignment(model, assignment)
    if problems:
        raise ExtractionError("; ".join(problems))
    rule_supports: list[TreeNode] = []
    fact_supports: list[TreeNode] = []
    fuzzy: list[tuple[str, str, float]] = []

    def build_goal(igoal: str) -> TreeNode:
        meta = model.meta[igoal]
        req: Substitution = meta["requirement"]
        atom: Atom = meta["atom"]
        shown = apply_substitution(atom, req)
        node = TreeNode(role="goal", label=atom_text(shown), confidence=1.0)
        for isup in model.goal_supports[igoal]:
            if isup in assignment.supports:
                node.children.append(build_support(isup))
        return node

    def build_support(isup: str) -> TreeNode:
        meta = model.meta[isup]
        desc = meta["descriptor"]
        conf = math.exp(model.log_conf[isup])
        matches: list[tuple[str, str, float]] = []
        if desc.unification is not None:
            u = desc.unification
            for a, b in sorted(u.substitution.symbol_map.items()):
                matches.append((a, b, u.score))
        rec = meta.get("tuple")
        if rec is not None:
            for key, raw in sorted(rec.joined.metadata.items()):
                if key.startswith("join:") and "=" in key:
                    frm, to = key[len("join:"):].split("=", 1)
                    matches.append((frm, to, float(raw)))
        if desc.kind == FACT and desc.fact is not None:
            label = f"{atom_text(desc.fact.atom)} [{desc.fact.provenance}]"
        elif desc.rule is not None:
            label = f"{desc.rule.id} [{desc.rule.provenance}]"
        else:
            label = desc.kind
        node = TreeNode(
            role="support",
            label=label,
            confidence=conf,
            rule_id=desc.rule.id if desc.rule else None,
            provenance=desc.rule.provenance if desc.rule else (
                desc.fact.provenance if desc.fact else desc.prover
            ),
            kind=desc.kind,
            tags=tuple(sorted(desc.rule.tags)) if desc.rule else (),
            fuzzy=tuple(matches),
        )
        if desc.kind == FACT:
            fact_supports.append(node)
        elif desc.kind in (RULE, AGENTFUL_LEADSTO, AGENTFUL_PHASE1):
            rule_supports.append(node)
        fuzzy.extend(matches)
        for child in model.support_children[isup]:
            node.children.append(build_goal(child))
        return node

    root = build_goal(model.root)
    score = math.exp(assignment.objective)
    req = model.meta[model.root]["requirement"]
    bindings = {
        f"?{v}": term_text(t) for v, t in sorted(req.var_bindings.items())
    }
    seen = set()
    unique_fuzzy = []
    for m in fuzzy:
        if m not in seen:
            seen.add(m)
            unique_fuzzy.append(m)
    return ProofTree(
        root=root,
        score=score,
        bindings=bindings,
        rule_supports=rule_supports,
        fact_supports=fact_supports,
        fuzzy_matches=unique_fuzzy,
        assignment=assignment,
    )


def top_k_proofs(
    graph: ProofGraph,
    target_gid: str,
    k: int,
    requirement: Optional[Substitution] = None,
) -> list[ProofTree]:
    model = build_ilp(graph, target_gid, requirement)
    return [extract_proof_tree(graph, model, a) for a in solve_top_k(model, k)]


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_explanation(tree: ProofTree, fmt: str = "text", query_text: str = "") -> str:
    if fmt == "text":
        return _render_text(tree, query_text)
    if fmt == "json":
        return json.dumps(_tree_json(tree), sort_keys=True, indent=2)
    if fmt == "dot":
        return _render_dot(tree)
    raise ExtractionError(f"unknown explanation format {fmt!r}")


def _render_text(tree: ProofTree, query_text: str) -> str:
    lines = []
    if query_text:
        lines.append(f"Explanation for: {query_text}")
    if tree.bindings:
        shown = ", ".join(f"{v} = {t}" for v, t in tree.bindings.items())
        lines.append(f"Solution: {shown}")
    lines.append(f"Proof score: {tree.score:.6f}")
    lines.append("Rules used:")
    for n in tree.rule_supports:
        tags = f" [{', '.join(n.tags)}]" if n.tags else ""
        lines.append(f"  {n.rule_id or n.kind} ({n.provenance}, {n.confidence:.2f}){tags}")
    lines.append("Facts used:")
    for i, n in enumerate(tree.fact_supports, start=1):
        lines.append(f"  {i}. {n.label} ({n.confidence:.2f})")
    if tree.fuzzy_matches:
        lines.append("Fuzzy unifications:")
        for a, b, score in tree.fuzzy_matches:
            lines.append(f"  {a} ~ {b} (score {score:.2f})")
    lines.append("Derivation:")
    _render_tree_lines(tree.root, lines, indent=1)
    return "\n".join(lines) + "\n"


def _render_tree_lines(node: TreeNode, lines: list[str], indent: int) -> None:
    pad = "  " * indent
    if node.role == "goal":
        lines.append(f"{pad}{node.label}")
    else:
        lines.append(f"{pad}<= {node.label} ({node.confidence:.2f})")
    for child in node.children:
        _render_tree_lines(child, lines, indent + 1)


def _tree_json(tree: ProofTree) -> dict:
    def node_json(n: TreeNode) -> dict:
        return {
            "role": n.role,
            "label": n.label,
            "confidence": n.confidence,
            "kind": n.kind,
            "rule_id": n.rule_id,
            "provenance": n.provenance,
            "tags": list(n.tags),
            "fuzzy": [list(m) for m in n.fuzzy],
            "children": [node_json(c) for c in n.children],
        }

    return {
        "score": tree.score,
        "bindings": tree.bindings,
        "fuzzy_matches": [list(m) for m in tree.fuzzy_matches],
        "rules": [
            {
                "id": n.rule_id,
                "provenance": n.provenance,
                "confidence": n.confidence,
                "tags": list(n.tags),
            }
            for n in tree.rule_supports
        ],
        "facts": [
            {"label": n.label, "confidence": n.confidence} for n in tree.fact_supports
        ],
        "tree": node_json(tree.root),
    }


def _render_dot(tree: ProofTree) -> str:
    lines = ["digraph proof {", "  rankdir=TB;"]
    counter = [0]

    def emit(node: TreeNode) -> str:
        name = f"n{counter[0]}"
        counter[0] += 1
        shape = "box" if node.role == "support" else "ellipse"
        label = node.label.replace('"', "'")
        if node.role == "support":
            label = f"{label}\\n{node.confidence:.2f}"
        lines.append(f'  {name} [shape={shape}, label="{label}"];')
        for child in node.children:
            cname = emit(child)
            lines.append(f"  {name} -> {cname};")
        return name

    emit(tree.root)
    lines.append("}")
    return "\n".join(lines) + "\n"
