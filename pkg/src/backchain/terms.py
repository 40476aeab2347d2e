"""Core logical vocabulary: terms, atoms, clauses, substitutions, skolemization.

Everything here is an immutable value. Variables are written `?name` in text
form; constants are bare identifiers (capitalization carries no meaning).
Compound terms cover reified propositions (a goal used as an argument) and
skolem terms; skolem functors are the only place the reserved `sk$` prefix
appears.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

SKOLEM_PREFIX = "sk$"
CONJUNCTION = "and$"


# ---------------------------------------------------------------------------
# Terms and atoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    symbol: str


@dataclass(frozen=True)
class Compound:
    functor: str
    args: tuple["Term", ...]


Term = Union[Var, Const, Compound]


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[Term, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.args)


def term_text(t: Term) -> str:
    if isinstance(t, Var):
        return "?" + t.name
    if isinstance(t, Const):
        return t.symbol
    if not t.args:
        return t.functor
    return f"{t.functor}({', '.join(term_text(a) for a in t.args)})"


def atom_text(a: Atom) -> str:
    if not a.args:
        return a.predicate
    return f"{a.predicate}({', '.join(term_text(t) for t in a.args)})"


def term_vars(t: Term, acc: Optional[list[str]] = None) -> list[str]:
    """Variable names in first-occurrence order."""
    if acc is None:
        acc = []
    if isinstance(t, Var):
        if t.name not in acc:
            acc.append(t.name)
    elif isinstance(t, Compound):
        for a in t.args:
            term_vars(a, acc)
    return acc


def atom_vars(a: Atom) -> list[str]:
    acc: list[str] = []
    for t in a.args:
        term_vars(t, acc)
    return acc


def term_constants(t: Term, acc: Optional[set[str]] = None) -> set[str]:
    if acc is None:
        acc = set()
    if isinstance(t, Const):
        acc.add(t.symbol)
    elif isinstance(t, Compound):
        for a in t.args:
            term_constants(a, acc)
    return acc


def is_ground_term(t: Term) -> bool:
    if isinstance(t, Var):
        return False
    if isinstance(t, Compound):
        return all(is_ground_term(a) for a in t.args)
    return True


def is_ground(a: Atom) -> bool:
    return all(is_ground_term(t) for t in a.args)


def atom_to_term(a: Atom) -> Term:
    """Reify an atom as a term (0-ary atoms become constants)."""
    if not a.args:
        return Const(a.predicate)
    return Compound(a.predicate, a.args)


def term_to_atom(t: Term) -> Atom:
    """Read a reified proposition back as an atom."""
    if isinstance(t, Const):
        return Atom(t.symbol, ())
    if isinstance(t, Compound):
        return Atom(t.functor, t.args)
    raise ValueError(f"cannot treat variable {term_text(t)} as a proposition")


def is_conjunction(a: Atom) -> bool:
    return a.predicate == CONJUNCTION


def conjuncts(a: Atom) -> list[Atom]:
    if not is_conjunction(a):
        return [a]
    return [term_to_atom(t) for t in a.args]


def goal_complexity(a: Atom) -> int:
    """Number of conjuncts plus the maximum nesting depth of compound args."""

    def depth(t: Term) -> int:
        if isinstance(t, Compound):
            return 1 + max((depth(x) for x in t.args), default=0)
        return 0

    parts = conjuncts(a) if is_conjunction(a) else [a]
    nesting = max((depth(t) for p in parts for t in p.args), default=0)
    return len(parts) + nesting


# ---------------------------------------------------------------------------
# Facts, rules, substitutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fact:
    atom: Atom
    confidence: float = 1.0
    provenance: str = "kb"

    def __post_init__(self) -> None:
        if not is_ground(self.atom):
            raise ValueError(f"fact {atom_text(self.atom)} contains variables")
        _check_confidence(self.confidence)


@dataclass(frozen=True)
class Rule:
    id: str
    head: Atom
    body: tuple[Atom, ...] = ()
    confidence: float = 1.0
    tags: frozenset[str] = frozenset()
    provenance: str = "static"
    # Head variables absent from the body; computed, never declared.
    existentials: frozenset[str] = field(default=frozenset(), compare=False)
    # Standardize-apart renaming back to the declared names; keeps skolem
    # terms a pure function of (rule id, binding) whatever the fresh names.
    declared_names: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        _check_confidence(self.confidence)
        body_vars = {v for b in self.body for v in atom_vars(b)}
        ex = frozenset(v for v in atom_vars(self.head) if v not in body_vars)
        object.__setattr__(self, "existentials", ex)

    @property
    def universal_head_vars(self) -> list[str]:
        """Head variables that also occur in the body, in head order."""
        return [v for v in atom_vars(self.head) if v not in self.existentials]

    def declared_name(self, var: str) -> str:
        return self.declared_names.get(var, var)


def _check_confidence(c: float) -> None:
    if not (0.0 < c <= 1.0):
        raise ValueError(f"confidence {c} outside (0, 1]")


def rule_text(r: Rule) -> str:
    head = atom_text(r.head)
    if not r.body:
        return head
    return f"{head} :- {', '.join(atom_text(b) for b in r.body)}"


@dataclass(frozen=True)
class Substitution:
    """Variable bindings plus constant/predicate renamings.

    symbol_map entries rename predicates and constants (a fuzzy unifier may
    map `put` to `place`); its values are never themselves keys.
    """

    var_bindings: Mapping[str, Term] = field(default_factory=dict)
    symbol_map: Mapping[str, str] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.var_bindings and not self.symbol_map

    def key(self) -> str:
        vb = ",".join(f"?{v}={term_text(t)}" for v, t in sorted(self.var_bindings.items()))
        sm = ",".join(f"{a}>{b}" for a, b in sorted(self.symbol_map.items()))
        return vb + "|" + sm


EMPTY_SUBST = Substitution({}, {})


def subst_term(t: Term, s: Substitution) -> Term:
    if isinstance(t, Var):
        bound = s.var_bindings.get(t.name)
        if bound is None:
            return t
        # Bindings are idempotent, but tolerate one level of chaining.
        return subst_term(bound, s) if bound != t else t
    if isinstance(t, Const):
        renamed = s.symbol_map.get(t.symbol)
        return Const(renamed) if renamed is not None else t
    functor = s.symbol_map.get(t.functor, t.functor)
    return Compound(functor, tuple(subst_term(a, s) for a in t.args))


def apply_substitution(a: Atom, s: Substitution) -> Atom:
    pred = s.symbol_map.get(a.predicate, a.predicate)
    return Atom(pred, tuple(subst_term(t, s) for t in a.args))


# ---------------------------------------------------------------------------
# Term unification (shared by substitution composition and the unifiers)
# ---------------------------------------------------------------------------

def deref(t: Term, bindings: Mapping[str, Term]) -> Term:
    while isinstance(t, Var) and t.name in bindings:
        t = bindings[t.name]
    return t


def _occurs(name: str, t: Term, bindings: Mapping[str, Term]) -> bool:
    t = deref(t, bindings)
    if isinstance(t, Var):
        return t.name == name
    if isinstance(t, Compound):
        return any(_occurs(name, a, bindings) for a in t.args)
    return False


def unify_terms(t1: Term, t2: Term, bindings: dict[str, Term]) -> Optional[dict[str, Term]]:
    """Extend `bindings` so t1 and t2 become equal; None if impossible.

    Standard most-general unification with occurs check. Mutates and returns
    `bindings` on success; the caller should pass a scratch copy.
    """
    t1 = deref(t1, bindings)
    t2 = deref(t2, bindings)
    if isinstance(t1, Var):
        if isinstance(t2, Var) and t1.name == t2.name:
            return bindings
        if _occurs(t1.name, t2, bindings):
            return None
        bindings[t1.name] = t2
        return bindings
    if isinstance(t2, Var):
        if _occurs(t2.name, t1, bindings):
            return None
        bindings[t2.name] = t1
        return bindings
    if isinstance(t1, Const) and isinstance(t2, Const):
        return bindings if t1.symbol == t2.symbol else None
    if isinstance(t1, Compound) and isinstance(t2, Compound):
        if t1.functor != t2.functor or len(t1.args) != len(t2.args):
            return None
        for a, b in zip(t1.args, t2.args):
            if unify_terms(a, b, bindings) is None:
                return None
        return bindings
    return None


def resolve_bindings(bindings: Mapping[str, Term]) -> Optional[dict[str, Term]]:
    """Chase bindings to an idempotent map; None when resolution diverges."""
    out: dict[str, Term] = dict(bindings)
    for _ in range(len(out) + 2):
        s = Substitution(out, {})
        nxt = {v: subst_term(t, s) for v, t in out.items()}
        nxt = {v: t for v, t in nxt.items() if t != Var(v)}
        if nxt == out:
            return out
        out = nxt
    return None


def compose_substitutions(s1: Substitution, s2: Substitution) -> Optional[Substitution]:
    """Merge two substitutions; None when a variable is bound inconsistently.

    Applying the result is equivalent to applying s1 then s2. Unlike plain
    sequential composition this also joins bindings: the same variable bound
    to non-unifiable terms is a conflict, not a silent override.
    """
    merged: dict[str, Term] = {}
    for v, t in s1.var_bindings.items():
        merged[v] = subst_term(t, s2)
    for v, t in s2.var_bindings.items():
        if v in merged:
            if unify_terms(merged[v], t, merged) is None:
                return None
        else:
            merged[v] = t
    resolved = resolve_bindings(merged)
    if resolved is None:
        return None

    symbols: dict[str, str] = {}
    for k, val in s1.symbol_map.items():
        symbols[k] = s2.symbol_map.get(val, val)
    for k, val in s2.symbol_map.items():
        if k in symbols and symbols[k] != val:
            return None
        symbols.setdefault(k, val)
    flattened = _flatten_symbol_map(symbols)
    if flattened is None:
        return None
    return Substitution(resolved, flattened)


def _flatten_symbol_map(m: dict[str, str]) -> Optional[dict[str, str]]:
    out: dict[str, str] = {}
    for k, v in m.items():
        seen = {k}
        while v in m and v not in seen:
            seen.add(v)
            v = m[v]
        if v in seen and v != k and m.get(v) in seen:
            return None
        if v != k:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# Standardize-apart, canonical keys, skolemization
# ---------------------------------------------------------------------------

def standardize_apart(r: Rule, counter: Iterator[int]) -> Rule:
    """Rename the rule's variables with a fresh suffix from `counter`."""
    names = set(atom_vars(r.head))
    for b in r.body:
        names.update(atom_vars(b))
    if not names:
        return r
    n = next(counter)
    s = Substitution({v: Var(f"{v}_{n}") for v in names}, {})
    return Rule(
        id=r.id,
        head=apply_substitution(r.head, s),
        body=tuple(apply_substitution(b, s) for b in r.body),
        confidence=r.confidence,
        tags=r.tags,
        provenance=r.provenance,
        declared_names={f"{v}_{n}": r.declared_name(v) for v in names},
    )


def _canonical_term(t: Term, varmap: dict[str, str]) -> str:
    if isinstance(t, Var):
        if t.name not in varmap:
            varmap[t.name] = f"_{len(varmap)}"
        return varmap[t.name]
    if isinstance(t, Const):
        return t.symbol
    return f"{t.functor}({','.join(_canonical_term(a, varmap) for a in t.args)})"


def canonical_key(a: Atom) -> str:
    """Alpha-canonical tabling key: equal iff atoms are alpha-equivalent."""
    varmap: dict[str, str] = {}
    if not a.args:
        return f"{a.predicate}/0"
    inner = ",".join(_canonical_term(t, varmap) for t in a.args)
    return f"{a.predicate}/{len(a.args)}({inner})"


def clause_key(head: Atom, body: tuple[Atom, ...]) -> str:
    """Alpha-canonical identity of a whole clause (shared variable numbering)."""
    varmap: dict[str, str] = {}

    def render(a: Atom) -> str:
        if not a.args:
            return f"{a.predicate}/0"
        return f"{a.predicate}/{len(a.args)}({','.join(_canonical_term(t, varmap) for t in a.args)})"

    return render(head) + ":-" + ";".join(render(b) for b in body)


def rule_content_key(r: Rule) -> str:
    return clause_key(r.head, r.body)


def skolem_bindings(r: Rule, binding: Substitution) -> dict[str, Term]:
    """Skolem terms for the rule's existentials under the given bindings.

    Each existential maps to a term parameterized by the bound universal head
    variables (in head order), so re-derivations of the same inference
    collapse to one value.
    """
    universals = r.universal_head_vars
    uargs = []
    for v in universals:
        bound = subst_term(Var(v), binding)
        if not is_ground_term(bound):
            raise ValueError(f"universal head variable ?{v} of rule {r.id} is unbound")
        uargs.append(bound)
    sk: dict[str, Term] = {}
    for v in r.existentials:
        functor = f"{SKOLEM_PREFIX}{r.id}${r.declared_name(v)}"
        sk[v] = Compound(functor, tuple(uargs)) if uargs else Const(functor)
    return sk


def skolemize_head(r: Rule, binding: Substitution) -> Atom:
    """Ground the rule head, naming each existential by rule id and bindings."""
    sk = skolem_bindings(r, binding)
    full = Substitution({**binding.var_bindings, **sk}, {})
    out = apply_substitution(r.head, full)
    if not is_ground(out):
        raise ValueError(f"skolemized head of rule {r.id} is not ground: {atom_text(out)}")
    return out


# ---------------------------------------------------------------------------
# Knowledge base
# ---------------------------------------------------------------------------

@dataclass
class KnowledgeBase:
    facts: tuple[Fact, ...]
    rules: tuple[Rule, ...]
    fact_index: dict[tuple[str, int], tuple[Fact, ...]]
    rule_index: dict[tuple[str, int], tuple[Rule, ...]]
    content_hash: str

    def facts_for(self, predicate: str, arity: int) -> tuple[Fact, ...]:
        return self.fact_index.get((predicate, arity), ())

    def facts_with_arity(self, arity: int) -> list[Fact]:
        return [f for f in self.facts if f.atom.arity == arity]

    def rules_for(self, predicate: str, arity: int) -> tuple[Rule, ...]:
        return self.rule_index.get((predicate, arity), ())

    def constants(self) -> list[str]:
        out: set[str] = set()
        for f in self.facts:
            for t in f.atom.args:
                term_constants(t, out)
        return sorted(out)

    def role_facts(self, subject: Term) -> list[tuple[str, Term]]:
        """(predicate, value) pairs of binary facts whose first arg is `subject`."""
        out = []
        for f in self.facts:
            if f.atom.arity == 2 and f.atom.args[0] == subject:
                out.append((f.atom.predicate, f.atom.args[1]))
        return out


def build_kb(facts: list[Fact], rules: list[Rule]) -> KnowledgeBase:
    fact_index: dict[tuple[str, int], list[Fact]] = {}
    for f in facts:
        fact_index.setdefault((f.atom.predicate, f.atom.arity), []).append(f)
    rule_index: dict[tuple[str, int], list[Rule]] = {}
    for r in rules:
        rule_index.setdefault((r.head.predicate, r.head.arity), []).append(r)
    lines = sorted(f"{f.confidence!r}::{atom_text(f.atom)}" for f in facts)
    lines += sorted(f"{r.confidence!r}::{sorted(r.tags)!r}::{r.id}::{rule_text(r)}" for r in rules)
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return KnowledgeBase(
        facts=tuple(facts),
        rules=tuple(rules),
        fact_index={k: tuple(v) for k, v in fact_index.items()},
        rule_index={k: tuple(v) for k, v in rule_index.items()},
        content_hash=digest,
    )
