"""Unifiers: exact syntactic unification and context-boosted fuzzy matching.

A unifier takes two atoms (plus the knowledge base as context) and returns
scored unification results. The fuzzy unifier relaxes symbol equality to a
pluggable similarity provider and boosts the score when the two atoms' key
terms play the same roles in the KB (same agent, same theme, ...).

Fuzzy score for an arity-matched pair:

    base  = geometric mean of the similarity factors (predicate pair plus
            every constant/functor pair walked in lockstep; variables bind
            freely and contribute no factor)
    boost = context_boost_per_role * |shared roles of the two key terms|
    score = min(1, base + boost)

Results with a zero factor or score below `min_score` are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol

from .terms import (
    Atom,
    Compound,
    Const,
    KnowledgeBase,
    Substitution,
    Term,
    Var,
    deref,
    is_ground_term,
    subst_term,
    unify_terms,
)


class SimilarityProvider(Protocol):
    name: str

    def similarity(self, a: str, b: str) -> float: ...


class TableSimilarity:
    """Symmetric symbol similarity backed by a TSV table.

    Missing pairs score 0.0; identical symbols always score 1.0.
    """

    name = "table"

    def __init__(self, pairs: Optional[dict[tuple[str, str], float]] = None):
        self.pairs = dict(pairs or {})

    def similarity(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        return self.pairs.get((a, b)) or self.pairs.get((b, a)) or 0.0


class IdentitySimilarity:
    """1.0 iff the symbols are equal, else 0.0 (degenerates to exact matching)."""

    name = "identity"

    def similarity(self, a: str, b: str) -> float:
        return 1.0 if a == b else 0.0


@dataclass(frozen=True)
class UnificationResult:
    substitution: Substitution
    score: float
    metadata: Mapping[str, str] = field(default_factory=dict)

    def key(self) -> str:
        """Identity for set semantics: bindings + symbol map, score excluded."""
        return self.substitution.key()


@dataclass(frozen=True)
class UnifierConfig:
    min_score: float = 0.5
    context_boost_per_role: float = 0.05
    max_results: int = 5

    def __post_init__(self) -> None:
        if not (0.0 < self.min_score <= 1.0):
            raise ValueError("min_score must lie in (0, 1]")
        if self.context_boost_per_role < 0:
            raise ValueError("context_boost_per_role must be >= 0")
        if self.max_results < 1:
            raise ValueError("max_results must be >= 1")


def syntactic_unify(a1: Atom, a2: Atom) -> Optional[UnificationResult]:
    """Most-general unifier with occurs check; score 1.0, no symbol renames."""
    if a1.predicate != a2.predicate or a1.arity != a2.arity:
        return None
    bindings: dict[str, Term] = {}
    for t1, t2 in zip(a1.args, a2.args):
        if unify_terms(t1, t2, bindings) is None:
            return None
    return UnificationResult(Substitution(dict(bindings), {}), 1.0, {})


def fuzzy_unify(
    a1: Atom,
    a2: Atom,
    kb: Optional[KnowledgeBase],
    provider: SimilarityProvider,
    cfg: UnifierConfig = UnifierConfig(),
) -> list[UnificationResult]:
    if a1.arity != a2.arity:
        return []
    factors: list[tuple[str, str, float]] = []

    pred_sim = provider.similarity(a1.predicate, a2.predicate)
    factors.append((a1.predicate, a2.predicate, pred_sim))
    bindings: dict[str, Term] = {}
    ok = True
    for t1, t2 in zip(a1.args, a2.args):
        if not _fuzzy_walk(t1, t2, bindings, provider, factors):
            ok = False
            break
    if not ok or any(sim == 0.0 for _, _, sim in factors):
        return []

    base = math.exp(sum(math.log(sim) for _, _, sim in factors) / len(factors))
    shared = _shared_roles(a1, a2, bindings, kb, provider, cfg)
    score = min(1.0, base + cfg.context_boost_per_role * len(shared))
    if score < cfg.min_score:
        return []

    symbol_map = {x: y for x, y, _ in factors if x != y}
    metadata: dict[str, str] = {}
    for x, y, sim in factors:
        if x != y:
            metadata[f"sim:{x}={y}"] = repr(sim)
    metadata["base"] = repr(base)
    if shared:
        metadata["roles"] = ",".join(sorted(shared))
        metadata["boost"] = repr(cfg.context_boost_per_role * len(shared))
    result = UnificationResult(
        Substitution(dict(bindings), symbol_map), score, metadata
    )
    return [result][: cfg.max_results]


def _fuzzy_walk(
    t1: Term,
    t2: Term,
    bindings: dict[str, Term],
    provider: SimilarityProvider,
    factors: list[tuple[str, str, float]],
) -> bool:
    """Walk two terms in lockstep, binding variables and scoring symbol pairs."""
    t1 = deref(t1, bindings)
    t2 = deref(t2, bindings)
    if isinstance(t1, Var) or isinstance(t2, Var):
        return unify_terms(t1, t2, bindings) is not None
    if isinstance(t1, Const) and isinstance(t2, Const):
        factors.append((t1.symbol, t2.symbol, provider.similarity(t1.symbol, t2.symbol)))
        return True
    if isinstance(t1, Compound) and isinstance(t2, Compound):
        if len(t1.args) != len(t2.args):
            return False
        factors.append((t1.functor, t2.functor, provider.similarity(t1.functor, t2.functor)))
        return all(
            _fuzzy_walk(x, y, bindings, provider, factors)
            for x, y in zip(t1.args, t2.args)
        )
    return False


def _shared_roles(
    a1: Atom,
    a2: Atom,
    bindings: dict[str, Term],
    kb: Optional[KnowledgeBase],
    provider: SimilarityProvider,
    cfg: UnifierConfig,
) -> set[str]:
    """Role predicates the two key terms share in the KB context.

    The key term is an atom's first argument after the candidate bindings are
    applied; a role is shared when some predicate r has r(t1, v) and r(t2, v')
    in the KB with v and v' identical or similar above the threshold.
    """
    if kb is None or not a1.args or not a2.args:
        return set()
    s = Substitution(bindings, {})
    t1 = subst_term(a1.args[0], s)
    t2 = subst_term(a2.args[0], s)
    if not is_ground_term(t1) or not is_ground_term(t2):
        return set()
    roles1: dict[str, list[Term]] = {}
    for pred, value in kb.role_facts(t1):
        roles1.setdefault(pred, []).append(value)
    shared: set[str] = set()
    for pred, v2 in kb.role_facts(t2):
        for v1 in roles1.get(pred, ()):
            if v1 == v2:
                shared.add(pred)
            elif isinstance(v1, Const) and isinstance(v2, Const):
                if provider.similarity(v1.symbol, v2.symbol) >= cfg.min_score:
                    shared.add(pred)
    return shared


# ---------------------------------------------------------------------------
# The unifier interface used by provers
# ---------------------------------------------------------------------------

class Unifier(Protocol):
    name: str

    def unify(
        self, a1: Atom, a2: Atom, kb: Optional[KnowledgeBase]
    ) -> list[UnificationResult]: ...


class SyntacticUnifier:
    """Degenerate unifier: at most one exact result."""

    name = "exact"

    def unify(self, a1: Atom, a2: Atom, kb: Optional[KnowledgeBase]) -> list[UnificationResult]:
        r = syntactic_unify(a1, a2)
        return [r] if r is not None else []


class FuzzyUnifier:
    name = "fuzzy"

    def __init__(self, provider: SimilarityProvider, cfg: UnifierConfig = UnifierConfig()):
        self.provider = provider
        self.cfg = cfg

    def unify(self, a1: Atom, a2: Atom, kb: Optional[KnowledgeBase]) -> list[UnificationResult]:
        return fuzzy_unify(a1, a2, kb, self.provider, self.cfg)


def best_unifications(
    unifiers: list[Unifier], a1: Atom, a2: Atom, kb: Optional[KnowledgeBase]
) -> list[UnificationResult]:
    """Union the unifiers' results, keeping the best score per distinct mapping."""
    by_key: dict[str, UnificationResult] = {}
    for u in unifiers:
        for r in u.unify(a1, a2, kb):
            prev = by_key.get(r.key())
            if prev is None or r.score > prev.score:
                by_key[r.key()] = r
    return sorted(by_key.values(), key=lambda r: (-r.score, r.key()))
