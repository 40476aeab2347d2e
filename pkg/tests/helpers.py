"""Independent oracles and random generators used across the test suite.

Everything here is deliberately naive: fixpoint iteration instead of
backward search, exhaustive enumeration instead of branch-and-bound, and
nested loops instead of the engine's incremental joins. The oracles must not
share code with the paths they check.
"""

from __future__ import annotations

import itertools
import math
import random

from backchain.extraction import IlpModel
from backchain.terms import (
    Atom,
    Const,
    Fact,
    KnowledgeBase,
    Rule,
    Var,
    atom_text,
    build_kb,
)

# ---------------------------------------------------------------------------
# Ground-Horn KBs and forward chaining
# ---------------------------------------------------------------------------

GROUND_PREDS = (("p", 1), ("q", 2), ("r", 1), ("s", 2))


def ground_atom_space(constants: list[str], preds=GROUND_PREDS) -> list[Atom]:
    atoms = []
    for pred, arity in preds:
        for combo in itertools.product(constants, repeat=arity):
            atoms.append(Atom(pred, tuple(Const(c) for c in combo)))
    return atoms


def random_ground_kb(
    rng: random.Random,
    constants: list[str],
    max_facts: int = 30,
    max_rules: int = 15,
    confidence: float = 1.0,
) -> KnowledgeBase:
    atoms = ground_atom_space(constants)
    n_facts = rng.randint(1, min(max_facts, len(atoms)))
    facts = [Fact(a, confidence) for a in rng.sample(atoms, n_facts)]
    rules = []
    n_rules = rng.randint(0, max_rules)
    for i in range(n_rules):
        head = rng.choice(atoms)
        body = tuple(rng.choice(atoms) for _ in range(rng.randint(1, 3)))
        rules.append(Rule(id=f"g{i}", head=head, body=body, confidence=confidence))
    return build_kb(facts, rules)


def forward_chain(kb: KnowledgeBase) -> set[str]:
    """Bottom-up fixpoint over a ground KB; returns canonical atom texts."""
    known = {atom_text(f.atom) for f in kb.facts}
    changed = True
    while changed:
        changed = False
        for rule in kb.rules:
            if atom_text(rule.head) in known:
                continue
            if all(atom_text(b) in known for b in rule.body):
                known.add(atom_text(rule.head))
                changed = True
    return known


# ---------------------------------------------------------------------------
# Small variable-rule KBs (for invariance checks)
# ---------------------------------------------------------------------------

def random_var_kb(rng: random.Random, n_constants: int = 3) -> tuple[KnowledgeBase, Atom]:
    constants = [f"k{i}" for i in range(n_constants)]
    base_preds = ["b0", "b1"]
    derived_preds = ["d0", "d1", "d2"]
    facts = []
    for pred in base_preds:
        for c in constants:
            if rng.random() < 0.6:
                facts.append(Fact(Atom(pred, (Const(c),)), round(rng.uniform(0.3, 1.0), 3)))
    rules = []
    idx = 0
    for pred in derived_preds:
        for src in base_preds + derived_preds:
            if src == pred or rng.random() < 0.55:
                continue
            rules.append(
                Rule(
                    id=f"v{idx}",
                    head=Atom(pred, (Var("x"),)),
                    body=(Atom(src, (Var("x"),)),),
                    confidence=round(rng.uniform(0.3, 1.0), 3),
                )
            )
            idx += 1
    if not facts:
        facts.append(Fact(Atom("b0", (Const(constants[0]),)), 0.9))
    query = Atom(rng.choice(derived_preds), (Var("q"),))
    return build_kb(facts, rules), query


# ---------------------------------------------------------------------------
# Random choice models and exhaustive proof enumeration
# ---------------------------------------------------------------------------

def random_model(rng: random.Random, max_goals: int = 12, max_supports: int = 3) -> IlpModel:
    n = rng.randint(2, max_goals)
    goals = [f"g{i}" for i in range(n)]
    model = IlpModel(root="g0")
    sid = 0
    for g in goals:
        model.goal_supports[g] = ()
        model.log_conf[g] = 0.0
    for g in goals:
        chosen = []
        for _ in range(rng.randint(0, max_supports)):
            name = f"s{sid}"
            sid += 1
            n_children = rng.randint(0, min(3, n - 1))
            children = tuple(rng.sample(goals, n_children)) if n_children else ()
            model.support_children[name] = children
            model.log_conf[name] = math.log(rng.uniform(0.3, 1.0))
            chosen.append(name)
        model.goal_supports[g] = tuple(chosen)
    return model


def _selection_acyclic(model: IlpModel, supports: frozenset[str]) -> bool:
    chosen_children: dict[str, tuple[str, ...]] = {}
    for g, sids in model.goal_supports.items():
        for s in sids:
            if s in supports:
                chosen_children.setdefault(g, ())
                chosen_children[g] = chosen_children[g] + model.support_children[s]
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[str, int] = {}

    def visit(g: str) -> bool:
        color[g] = GRAY
        for child in chosen_children.get(g, ()):
            c = color.get(child, WHITE)
            if c == GRAY or (c == WHITE and visit(child)):
                return True
        color[g] = BLACK
        return False

    return not any(
        color.get(g, WHITE) == WHITE and visit(g) for g in chosen_children
    )


def enumerate_proofs(model: IlpModel) -> list[tuple[frozenset[str], frozenset[str], float]]:
    """All feasible acyclic selections, best-first with the documented order."""
    results = []

    def rec(pending: list[str], goals: set[str], supports: set[str], obj: float) -> None:
        if not pending:
            sel = frozenset(supports)
            if _selection_acyclic(model, sel):
                results.append((frozenset(goals), sel, obj))
            return
        g = pending[0]
        for s in model.goal_supports.get(g, ()):
            children = model.support_children[s]
            new = [c for c in children if c not in goals]
            gain = model.log_conf[s] + sum(model.log_conf[c] for c in new)
            rec(pending[1:] + new, goals | set(new), supports | {s}, obj + gain)

    if model.root in model.goal_supports:
        rec([model.root], {model.root}, set(), model.log_conf.get(model.root, 0.0))
    results.sort(key=lambda r: (-r[2], tuple(sorted(r[0] | r[1]))))
    return results


# ---------------------------------------------------------------------------
# Brute-force natural join
# ---------------------------------------------------------------------------

def brute_force_join(tables: list[list[dict[str, str]]]) -> list[tuple[dict[str, str], tuple[int, ...]]]:
    """Nested-loop natural join over binding dicts (exact matching only)."""
    out = []
    for combo in itertools.product(*[range(len(t)) for t in tables]):
        merged: dict[str, str] = {}
        ok = True
        for table, idx in zip(tables, combo):
            for key, value in table[idx].items():
                if key in merged and merged[key] != value:
                    ok = False
                    break
                merged[key] = value
            if not ok:
                break
        if ok:
            out.append((merged, combo))
    return out
