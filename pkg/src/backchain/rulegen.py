"""Dynamic rule generation: produce scored, goal-relevant rules on demand.

Two generators implement the same interface:

  * TemplateRuleGenerator specializes over-general typed rule templates
    against the KB's constants, filtered by an isa taxonomy and suppressed
    by negative typed bindings.
  * CannedRuleGenerator serves rules from a plain rule file, keyed by head
    predicate/arity (a stand-in for a learned rule-suggestion model).

Every generated rule's head unifies syntactically with the triggering goal,
and generation is deterministic for a given (goal, kb, templates, taxonomy).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .terms import (
    Atom,
    Const,
    KnowledgeBase,
    Rule,
    Substitution,
    apply_substitution,
    atom_vars,
    is_ground_term,
    rule_content_key,
    rule_text,
    standardize_apart,
    subst_term,
    Var,
)
from .textio import RuleTemplate, TypeTaxonomy
from .unify import syntactic_unify


class RuleGenerator(Protocol):
    name: str

    def generate(self, goal: Atom, kb: KnowledgeBase) -> list[tuple[Rule, float]]: ...


@dataclass(frozen=True)
class DrgConfig:
    max_groundings: int = 1000
    # hook scoring a candidate rule's textual form in [0, 1]; 1.0 when absent
    plausibility: Optional[Callable[[str], float]] = None


def isa(taxonomy: TypeTaxonomy, x: str, t: str) -> bool:
    """True iff x equals t or a directed isa path leads from x to t."""
    return taxonomy.isa(x, t)


def template_generate(
    goal: Atom,
    kb: KnowledgeBase,
    templates: list[RuleTemplate],
    taxonomy: TypeTaxonomy,
    cfg: DrgConfig = DrgConfig(),
    warn: Optional[list[str]] = None,
) -> list[tuple[Rule, float]]:
    """Specialize each template whose head matches the goal.

    Free variables left after head unification are grounded with KB
    constants. A grounding survives when every type-constrained variable's
    value passes the isa check; constraints naming a type the taxonomy has
    never seen cannot be checked and instead cost a 0.9 factor each. A
    grounding matching any negative binding in full is dropped.
    """
    out: dict[str, tuple[Rule, float]] = {}
    counter = itertools.count(1)
    constants = kb.constants()
    for template in templates:
        pattern = standardize_apart(template.pattern, counter)
        renaming = _renaming(template.pattern, pattern)
        mgu = syntactic_unify(goal, pattern.head)
        if mgu is None:
            continue
        bound = mgu.substitution
        free = [
            v
            for a in (pattern.head, *pattern.body)
            for v in atom_vars(a)
            if not is_ground_term(subst_term(Var(v), bound))
        ]
        free = list(dict.fromkeys(free))
        groundings = _enumerate_groundings(
            free, renaming, template, taxonomy, constants, cfg, warn
        )
        accepted: list[tuple[Substitution, float]] = []
        for grounding in groundings:
            full = Substitution({**bound.var_bindings, **grounding}, {})
            ok, type_fit = _check_types(template, renaming, full, taxonomy)
            if not ok or _matches_negative(template, renaming, full, taxonomy):
                continue
            accepted.append((full, type_fit))
        for index, (full, type_fit) in enumerate(accepted, start=1):
            rule_id = template.id if len(accepted) == 1 else f"{template.id}#{index}"
            head = apply_substitution(pattern.head, full)
            body = tuple(apply_substitution(b, full) for b in pattern.body)
            confidence = template.base_confidence * type_fit
            if cfg.plausibility is not None:
                text = rule_text(Rule(rule_id, head, body))
                confidence *= max(0.0, min(1.0, cfg.plausibility(text)))
                if confidence <= 0.0:
                    continue
            rule = Rule(
                id=rule_id,
                head=head,
                body=body,
                confidence=confidence,
                tags=template.tags,
                provenance="drg:template",
            )
            score = rule.confidence
            key = rule_content_key(rule)
            prev = out.get(key)
            if prev is None or score > prev[1]:
                out[key] = (rule, score)
    return sorted(out.values(), key=lambda rs: (-rs[1], rs[0].id))


def _renaming(original: Rule, renamed: Rule) -> dict[str, str]:
    """Map the template's declared variable names onto the fresh copies."""
    olds: list[str] = []
    news: list[str] = []
    for a, b in zip((original.head, *original.body), (renamed.head, *renamed.body)):
        for v in atom_vars(a):
            if v not in olds:
                olds.append(v)
        for v in atom_vars(b):
            if v not in news:
                news.append(v)
    return dict(zip(olds, news))


def _enumerate_groundings(
    free: list[str],
    renaming: dict[str, str],
    template: RuleTemplate,
    taxonomy: TypeTaxonomy,
    constants: list[str],
    cfg: DrgConfig,
    warn: Optional[list[str]],
):
    """Deterministic cartesian product over per-variable candidate constants."""
    reverse = {fresh: declared for declared, fresh in renaming.items()}
    domains: list[list[str]] = []
    for v in free:
        declared = reverse.get(v, v)
        constraint = template.type_constraints.get(declared)
        if constraint is not None and taxonomy.knows(constraint):
            domain = taxonomy.members(constraint, constants)
        else:
            domain = constants
        domains.append(sorted(domain))
    total = 1
    for d in domains:
        total *= max(len(d), 1)
    if total > cfg.max_groundings and warn is not None:
        warn.append(
            f"template {template.id}: {total} groundings truncated to {cfg.max_groundings}"
        )
    produced = 0
    for combo in itertools.product(*domains):
        if produced >= cfg.max_groundings:
            return
        produced += 1
        yield {v: Const(c) for v, c in zip(free, combo)}


def _check_types(
    template: RuleTemplate,
    renaming: dict[str, str],
    binding: Substitution,
    taxonomy: TypeTaxonomy,
) -> tuple[bool, float]:
    type_fit = 1.0
    for declared, type_name in sorted(template.type_constraints.items()):
        fresh = renaming.get(declared, declared)
        value = subst_term(Var(fresh), binding)
        if not taxonomy.knows(type_name):
            type_fit *= 0.9
            continue
        if not isinstance(value, Const) or not taxonomy.isa(value.symbol, type_name):
            return False, 0.0
    return True, type_fit


def _matches_negative(
    template: RuleTemplate,
    renaming: dict[str, str],
    binding: Substitution,
    taxonomy: TypeTaxonomy,
) -> bool:
    """A grounding is suppressed when every pair of some negative group holds."""
    for group in template.negative_bindings:
        hit = True
        for declared, type_name in group.items():
            fresh = renaming.get(declared, declared)
            value = subst_term(Var(fresh), binding)
            if not isinstance(value, Const) or not taxonomy.isa(value.symbol, type_name):
                hit = False
                break
        if hit and group:
            return True
    return False


class TemplateRuleGenerator:
    name = "template"

    def __init__(
        self,
        templates: list[RuleTemplate],
        taxonomy: TypeTaxonomy,
        cfg: DrgConfig = DrgConfig(),
    ):
        self.templates = templates
        self.taxonomy = taxonomy
        self.cfg = cfg
        self.warnings: list[str] = []

    def generate(self, goal: Atom, kb: KnowledgeBase) -> list[tuple[Rule, float]]:
        return template_generate(goal, kb, self.templates, self.taxonomy, self.cfg, self.warnings)


def canned_generate(goal: Atom, rules: list[Rule]) -> list[tuple[Rule, float]]:
    """Stored rules whose head syntactically unifies with the goal."""
    out = []
    for r in rules:
        if r.head.predicate != goal.predicate or r.head.arity != goal.arity:
            continue
        if syntactic_unify(goal, r.head) is None:
            continue
        tagged = Rule(
            id=r.id,
            head=r.head,
            body=r.body,
            confidence=r.confidence,
            tags=r.tags,
            provenance="drg:canned",
        )
        out.append((tagged, r.confidence))
    return sorted(out, key=lambda rs: (-rs[1], rs[0].id))


class CannedRuleGenerator:
    name = "canned"

    def __init__(self, rules: list[Rule]):
        self.rules = list(rules)

    def generate(self, goal: Atom, kb: KnowledgeBase) -> list[tuple[Rule, float]]:
        return canned_generate(goal, self.rules)
