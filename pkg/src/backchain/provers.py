"""Provers: single-step local graph expanders.

`SldPlusProver` is the default backchainer: it matches the goal against KB
facts and rule heads through the configured unifiers, consults the dynamic
rule generators, and splits conjunctive goals into a join support. Each call
is a pure function of (goal, kb, params) and never needs the master graph.

`AgentfulProver` explains why an agent performed an action. It claims only
`motivates/3` goals with a ground agent and action, and enforces its phase
ordering through master-side propagation: first find the agent's goals, then
for each bound candidate check that proving it uses the action and at least
one cause-effect (`causal`-tagged) rule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Protocol

from . import extraction
from .derivations import (
    AGENTFUL_LEADSTO,
    AGENTFUL_PHASE1,
    CONJUNCTION,
    DerivationBuilder,
    FACT,
    PartialDerivation,
    RULE,
    SupportDescriptor,
    translate_solution,
)
from .graph import ProofGraph, SUCCESS, ValidationRec
from .rulegen import RuleGenerator
from .terms import (
    Atom,
    KnowledgeBase,
    Rule,
    Substitution,
    Var,
    apply_substitution,
    atom_text,
    atom_vars,
    canonical_key,
    atom_to_term,
    conjuncts,
    is_conjunction,
    is_ground_term,
    rule_content_key,
    standardize_apart,
    term_constants,
    term_text,
    term_to_atom,
)
from .unify import UnificationResult, Unifier, best_unifications

MOTIVATES = "motivates"

# absolute bound on candidate proofs inspected per goal while validating an
# agentful action, however often the search deepens
VALIDATION_HARD_CAP = 256

# The built-in motivation pattern enacted by the agentful prover; explanation
# output refers to it by this id.
MOTIVATION_RULE = Rule(
    id="R1",
    head=Atom(MOTIVATES, (Var("agent"), Var("action"), Var("goal"))),
    body=(
        Atom("hasGoal", (Var("agent"), Var("goal"))),
        Atom("leadsTo", (Var("action"), Var("goal"))),
    ),
    confidence=1.0,
    provenance="builtin-prover",
)


@dataclass(frozen=True)
class ExpansionParams:
    depth: int = 0
    max_rule_matches: int = 64
    max_fact_matches: int = 64
    use_drg: bool = True
    unifier: str = "exact"  # "exact" or "fuzzy"

    def __post_init__(self) -> None:
        if self.max_rule_matches < 1 or self.max_fact_matches < 1:
            raise ValueError("match bounds must be positive")

    def to_wire(self) -> dict:
        return {
            "depth": self.depth,
            "max_rule_matches": self.max_rule_matches,
            "max_fact_matches": self.max_fact_matches,
            "use_drg": self.use_drg,
            "unifier": self.unifier,
        }

    @staticmethod
    def from_wire(d: dict) -> "ExpansionParams":
        return ExpansionParams(
            depth=int(d.get("depth", 0)),
            max_rule_matches=int(d.get("max_rule_matches", 64)),
            max_fact_matches=int(d.get("max_fact_matches", 64)),
            use_drg=bool(d.get("use_drg", True)),
            unifier=str(d.get("unifier", "exact")),
        )


class Prover(Protocol):
    name: str

    def prove(self, goal: Atom, kb: KnowledgeBase, params: ExpansionParams) -> PartialDerivation: ...


class SldPlusProver:
    name = "sld+"

    def __init__(self, unifiers: list[Unifier], generators: Optional[list[RuleGenerator]] = None):
        self.unifiers = unifiers
        self.generators = generators or []

    def _active_unifiers(self, params: ExpansionParams) -> list[Unifier]:
        if params.unifier == "fuzzy":
            return self.unifiers
        return [u for u in self.unifiers if u.name == "exact"]

    def prove(self, goal: Atom, kb: KnowledgeBase, params: ExpansionParams) -> PartialDerivation:
        b = DerivationBuilder(goal)
        if is_conjunction(goal):
            parts = conjuncts(goal)
            desc = SupportDescriptor(
                kind=CONJUNCTION,
                prover=self.name,
                confidence=1.0,
                info={"conjuncts": str(len(parts))},
            )
            sid = b.support(desc)
            for part in parts:
                b.child_goal(sid, part)
            return b.pd
        unifiers = self._active_unifiers(params)
        fuzzy = any(u.name != "exact" for u in unifiers)
        self._match_facts(b, goal, kb, unifiers, fuzzy, params)
        self._match_rules(b, goal, kb, unifiers, fuzzy, params)
        return b.pd

    def _match_facts(
        self,
        b: DerivationBuilder,
        goal: Atom,
        kb: KnowledgeBase,
        unifiers: list[Unifier],
        fuzzy: bool,
        params: ExpansionParams,
    ) -> None:
        if fuzzy:
            candidates = kb.facts_with_arity(goal.arity)
        else:
            candidates = list(kb.facts_for(goal.predicate, goal.arity))
        matches: list[tuple[float, str, str, object, UnificationResult]] = []
        for fact in candidates:
            for ur in best_unifications(unifiers, goal, fact.atom, kb):
                conf = fact.confidence * ur.score
                matches.append((-conf, atom_text(fact.atom), ur.key(), fact, ur))
        matches.sort(key=lambda m: m[:3])
        for neg_conf, _, _, fact, ur in matches[: params.max_fact_matches]:
            b.support(
                SupportDescriptor(
                    kind=FACT,
                    prover=self.name,
                    confidence=-neg_conf,
                    fact=fact,
                    unification=ur,
                )
            )

    def _candidate_rules(
        self, goal: Atom, kb: KnowledgeBase, fuzzy: bool, params: ExpansionParams
    ) -> list[Rule]:
        """Static KB rules plus generated rules, deduped at max confidence."""
        chosen: dict[str, Rule] = {}

        def offer(rule: Rule) -> None:
            key = rule_content_key(rule)
            prev = chosen.get(key)
            if prev is None or rule.confidence > prev.confidence:
                chosen[key] = rule

        if fuzzy:
            static = [r for r in kb.rules if r.head.arity == goal.arity]
        else:
            static = list(kb.rules_for(goal.predicate, goal.arity))
        for r in static:
            offer(r)
        if params.use_drg:
            for gen in self.generators:
                for rule, _score in gen.generate(goal, kb):
                    offer(rule)
        return sorted(chosen.values(), key=lambda r: (-r.confidence, r.id))

    def _match_rules(
        self,
        b: DerivationBuilder,
        goal: Atom,
        kb: KnowledgeBase,
        unifiers: list[Unifier],
        fuzzy: bool,
        params: ExpansionParams,
    ) -> None:
        goal_vars = set(atom_vars(goal))
        counter = itertools.count(0)
        supports: list[tuple[float, str, str, Rule, UnificationResult]] = []
        for rule in self._candidate_rules(goal, kb, fuzzy, params):
            std = _standardize_disjoint(rule, goal_vars, counter)
            for ur in best_unifications(unifiers, goal, std.head, kb):
                conf = rule.confidence * ur.score
                supports.append((-conf, rule.id, ur.key(), std, ur))
        supports.sort(key=lambda s: s[:3])
        for neg_conf, _, _, std, ur in supports[: params.max_rule_matches]:
            desc = SupportDescriptor(
                kind=RULE,
                prover=self.name,
                confidence=-neg_conf,
                rule=std,
                unification=ur,
            )
            sid = b.support(desc)
            for body_atom in std.body:
                b.child_goal(sid, apply_substitution(body_atom, ur.substitution))


def _standardize_disjoint(rule: Rule, taken: set[str], counter) -> Rule:
    """Standardize apart, retrying until the fresh names avoid `taken`."""
    for _ in range(len(taken) + 2):
        std = standardize_apart(rule, counter)
        names = set(atom_vars(std.head))
        for b in std.body:
            names.update(atom_vars(b))
        if not (names & taken):
            return std
    raise RuntimeError("could not standardize apart")  # pragma: no cover


# ---------------------------------------------------------------------------
# Agentful action prover
# ---------------------------------------------------------------------------

class AgentfulProver:
    name = "agentful"

    def prove(self, goal: Atom, kb: KnowledgeBase, params: ExpansionParams) -> PartialDerivation:
        b = DerivationBuilder(goal)
        if goal.predicate != MOTIVATES or goal.arity != 3:
            return b.pd
        agent, action, target = goal.args
        if not is_ground_term(agent) or not is_ground_term(action):
            return b.pd
        goal_var = target.name if isinstance(target, Var) else ""
        aap_var = "goal$aap"
        if aap_var == goal_var:
            aap_var = "goal$aap2"
        info = {
            "agent": term_text(agent),
            "action": term_text(action),
            "goal_var": goal_var,
            "aap_var": aap_var,
            "target": "" if goal_var else term_text(target),
        }
        desc = SupportDescriptor(
            kind=AGENTFUL_PHASE1,
            prover=self.name,
            confidence=1.0,
            rule=MOTIVATION_RULE,
            info=info,
        )
        sid = b.support(desc)
        b.child_goal(sid, Atom("hasGoal", (agent, Var(aap_var))))
        return b.pd


def agentful_on_propagate(
    graph: ProofGraph,
    sid: str,
    child_gid: str,
    urs: list[UnificationResult],
    validation_k: int = 16,
) -> list[tuple]:
    """Master-side phases 2 and 3 of the agentful strategy.

    Phase 2: each new ground candidate flowing out of hasGoal gets its own
    goal node under a fresh leadsTo support (alongside the hasGoal child, so
    an extracted proof carries both subtrees). Phase 3: once a candidate goal
    succeeds, accept it iff some extracted proof of it mentions the action
    constant and uses a causal-tagged rule; acceptance pins that proof and
    emits the motivates solution scored by the accepted proof's product.
    """
    support = graph.supports[sid]
    if support.kind == AGENTFUL_PHASE1:
        return _phase2_spawn_candidates(graph, sid, child_gid, urs)
    if support.kind == AGENTFUL_LEADSTO:
        return _phase3_validate(graph, sid, validation_k)
    return []


def _phase2_spawn_candidates(
    graph: ProofGraph, sid: str, child_gid: str, urs: list[UnificationResult]
) -> list[tuple]:
    support = graph.supports[sid]
    info = support.descriptor.info
    slot = support.children.index(child_gid)
    var_map = support.var_maps[slot]
    hasgoal_node = graph.goals[child_gid]
    events: list[tuple] = []
    for ur in urs:
        translated = translate_solution(ur, var_map)
        candidate = translated.substitution.var_bindings.get(info["aap_var"])
        if candidate is None or not is_ground_term(candidate):
            continue
        try:
            candidate_atom = term_to_atom(candidate)
        except ValueError:
            continue
        ckey = canonical_key(candidate_atom)
        if ckey in support.phase2_seen:
            continue
        support.phase2_seen.add(ckey)
        if info["target"] and term_text(candidate) != info["target"]:
            continue
        desc = SupportDescriptor(
            kind=AGENTFUL_LEADSTO,
            prover="agentful",
            confidence=1.0,
            rule=MOTIVATION_RULE,
            info={**info, "candidate": term_text(candidate)},
        )
        identity = {v: v for v in atom_vars(hasgoal_node.atom)}
        _, staged = graph.add_support(
            support.parent_goal,
            desc,
            [(hasgoal_node.atom, identity), (candidate_atom, {})],
        )
        events.extend(staged)
    return events


def _phase3_validate(graph: ProofGraph, sid: str, validation_k: int) -> list[tuple]:
    support = graph.supports[sid]
    info = support.descriptor.info
    gstar_gid = support.children[1]
    gstar = graph.goals[gstar_gid]
    if gstar.state != SUCCESS:
        return []
    try:
        model = extraction.build_ilp(graph, gstar_gid)
    except extraction.ExtractionError:
        return []
    action_symbol = info["action"]
    events: list[tuple] = []
    # deepen past already-checked and freshly-rejected selections so a crowd
    # of unacceptable proofs cannot starve an acceptable one further down
    budget = validation_k + len(support.checked_tree_keys)
    while True:
        assignments = extraction.solve_top_k(model, budget)
        accepted_any = False
        for assignment in assignments:
            selection_key = ",".join(sorted(assignment.supports))
            if selection_key in support.checked_tree_keys:
                continue
            support.checked_tree_keys.add(selection_key)
            tree = extraction.extract_proof_tree(graph, model, assignment)
            if not _mentions_action(graph, model, assignment, action_symbol):
                continue
            if not any("causal" in n.tags for n in tree.rule_supports):
                continue
            support.validation_keys.add(selection_key)
            candidate_term = atom_to_term(gstar.atom)
            bindings = {info["goal_var"]: candidate_term} if info["goal_var"] else {}
            parent_ur = UnificationResult(
                Substitution(bindings, {}), min(tree.score, 1.0), {"leadsTo": info["candidate"]}
            )
            # the agent is ground by the prover's precondition, so the
            # hasGoal child carries exactly one variable: the goal slot
            hasgoal_vars = atom_vars(graph.goals[support.children[0]].atom)
            hasgoal_req = Substitution(
                {v: candidate_term for v in hasgoal_vars[:1]}, {}
            ) if hasgoal_vars else Substitution({}, {})
            frozen = extraction.freeze_assignment(model, assignment)
            support.validations.append(
                ValidationRec(
                    selection_key=selection_key,
                    score=tree.score,
                    parent_ur=parent_ur,
                    hasgoal_req=hasgoal_req,
                    frozen_goal_supports=frozen["goal_supports"],
                    frozen_support_children=frozen["support_children"],
                    frozen_log_conf=frozen["log_conf"],
                    frozen_meta=frozen["meta"],
                    frozen_root=frozen["root"],
                )
            )
            events.append(("support_emit", sid, [parent_ur]))
            accepted_any = True
        exhausted = len(assignments) < budget
        if accepted_any or exhausted or budget >= VALIDATION_HARD_CAP:
            return events
        budget = min(budget + validation_k, VALIDATION_HARD_CAP)


def _mentions_action(graph, model, assignment, action_symbol: str) -> bool:
    for node_id in assignment.nodes:
        meta = model.meta.get(node_id)
        if meta is None:
            continue
        if meta.get("type") == "goal":
            atom = apply_substitution(meta["atom"], meta["requirement"])
            symbols: set[str] = set()
            for t in atom.args:
                term_constants(t, symbols)
            if action_symbol in symbols:
                return True
        else:
            desc = meta.get("descriptor")
            if desc is not None and desc.fact is not None:
                symbols = set()
                for t in desc.fact.atom.args:
                    term_constants(t, symbols)
                if action_symbol in symbols:
                    return True
    return False


def make_agentful_handler(validation_k: int = 16):
    def handler(graph: ProofGraph, sid: str, child_gid: str, urs: list[UnificationResult]):
        return agentful_on_propagate(graph, sid, child_gid, urs, validation_k)

    return handler
