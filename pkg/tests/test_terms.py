from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backchain.terms import (
    Atom,
    Compound,
    Const,
    Fact,
    Rule,
    Substitution,
    Var,
    apply_substitution,
    atom_text,
    canonical_key,
    compose_substitutions,
    skolemize_head,
    standardize_apart,
)
from backchain.textio import parse_query


def q(text: str) -> Atom:
    res = parse_query(text)
    assert res.ok, res.diagnostics
    return res.value


class TestApplySubstitution:
    def test_binds_variables_recursively(self):
        s = Substitution({"x": Const("Zoey"), "y": Const("plant")}, {})
        out = apply_substitution(q("hasPossession(?x, ?y)"), s)
        assert atom_text(out) == "hasPossession(Zoey, plant)"

    def test_empty_substitution_is_identity(self):
        a = q("hasGoal(Zoey, state(plant, Healthy))")
        assert apply_substitution(a, Substitution({}, {})) == a

    def test_symbol_map_renames_predicate_and_constants(self):
        s = Substitution({}, {"put": "place", "e1": "e2"})
        assert atom_text(apply_substitution(q("put(e1)"), s)) == "place(e2)"

    def test_applies_inside_compound_args(self):
        s = Substitution({"p": Const("plant")}, {})
        out = apply_substitution(q("hasGoal(Zoey, state(?p, Healthy))"), s)
        assert atom_text(out) == "hasGoal(Zoey, state(plant, Healthy))"


class TestComposeSubstitutions:
    def test_chained_binding(self):
        s1 = Substitution({"x": Var("y")}, {})
        s2 = Substitution({"y": Const("plant")}, {})
        out = compose_substitutions(s1, s2)
        assert out.var_bindings == {"x": Const("plant"), "y": Const("plant")}

    def test_identity(self):
        s = Substitution({"x": Const("a")}, {"p": "r"})
        out = compose_substitutions(Substitution({}, {}), s)
        assert out.var_bindings == dict(s.var_bindings)
        assert out.symbol_map == dict(s.symbol_map)

    def test_constant_clash_conflicts(self):
        s1 = Substitution({"x": Const("Zoey")}, {})
        s2 = Substitution({"x": Const("plant")}, {})
        assert compose_substitutions(s1, s2) is None

    def test_symbol_map_disagreement_conflicts(self):
        s1 = Substitution({}, {"put": "place"})
        s2 = Substitution({}, {"put": "sing"})
        assert compose_substitutions(s1, s2) is None


class TestStandardizeApart:
    def test_renames_consistently(self):
        rule = Rule("r", q("p(?x)"), (q("q(?x)"),))
        out = standardize_apart(rule, iter([17]))
        assert atom_text(out.head) == "p(?x_17)"
        assert atom_text(out.body[0]) == "q(?x_17)"

    def test_ground_rule_unchanged(self):
        rule = Rule("r", q("p(a)"), (q("q(b)"),))
        assert standardize_apart(rule, itertools.count()) == rule

    def test_successive_calls_are_disjoint(self):
        rule = Rule("r", q("p(?x, ?y)"), ())
        counter = itertools.count()
        a = standardize_apart(rule, counter)
        b = standardize_apart(rule, counter)
        vars_a = {t.name for t in a.head.args}
        vars_b = {t.name for t in b.head.args}
        assert not (vars_a & vars_b)


class TestCanonicalKey:
    def test_alpha_equivalent_atoms_share_a_key(self):
        assert canonical_key(q("p(?a, ?b)")) == canonical_key(q("p(?x, ?y)"))

    def test_repeated_variable_pattern_differs(self):
        assert canonical_key(q("p(?a, ?a)")) != canonical_key(q("p(?x, ?y)"))

    def test_rendering(self):
        assert canonical_key(q("put(e1)")) == "put/1(e1)"


class TestSkolemizeHead:
    def test_existential_becomes_parameterized_term(self):
        rule = Rule("r9", q("state(?o, ?s)"), (q("hasPossession(?a, ?o)"),))
        out = skolemize_head(rule, Substitution({"o": Const("plant"), "a": Const("Zoey")}, {}))
        assert atom_text(out) == "state(plant, sk$r9$s(plant))"

    def test_no_existentials_is_plain_application(self):
        rule = Rule("r", q("p(?x)"), (q("q(?x)"),))
        out = skolemize_head(rule, Substitution({"x": Const("a")}, {}))
        assert atom_text(out) == "p(a)"

    def test_deterministic_across_calls(self):
        rule = Rule("r9", q("state(?o, ?s)"), (q("q(?o)"),))
        binding = Substitution({"o": Const("plant")}, {})
        assert skolemize_head(rule, binding) == skolemize_head(rule, binding)

    def test_unbound_universal_is_an_error(self):
        rule = Rule("r9", q("state(?o, ?s)"), (q("q(?o)"),))
        with pytest.raises(ValueError):
            skolemize_head(rule, Substitution({}, {}))


class TestInvariants:
    def test_rule_existentials_are_computed(self):
        rule = Rule("r", q("p(?x, ?y)"), (q("q(?x)"),))
        assert rule.existentials == frozenset({"y"})

    def test_fact_rejects_variables(self):
        with pytest.raises(ValueError):
            Fact(q("p(?x)"), 0.9)

    def test_confidence_range(self):
        with pytest.raises(ValueError):
            Fact(q("p(a)"), 0.0)
        with pytest.raises(ValueError):
            Rule("r", q("p(a)"), (), confidence=1.5)


# -- property tests ----------------------------------------------------------

idents = st.sampled_from(["a", "b", "c", "f", "g", "p"])
var_names = st.sampled_from(["x", "y", "z", "w"])


def terms(depth: int = 2):
    base = st.one_of(var_names.map(Var), idents.map(Const))
    if depth == 0:
        return base
    return st.one_of(
        base,
        st.builds(
            Compound, idents, st.lists(terms(depth - 1), min_size=1, max_size=2).map(tuple)
        ),
    )


atoms = st.builds(Atom, idents, st.lists(terms(), min_size=0, max_size=3).map(tuple))

ground_terms = st.one_of(
    idents.map(Const),
    st.builds(Compound, idents, st.lists(idents.map(Const), min_size=1, max_size=2).map(tuple)),
)

idempotent_substs = st.dictionaries(var_names, ground_terms, max_size=3).map(
    lambda d: Substitution(d, {})
)


@settings(max_examples=100, deadline=None)
@given(atoms, idempotent_substs)
def test_apply_idempotent_substitution_twice_is_once(a, s):
    once = apply_substitution(a, s)
    assert apply_substitution(once, s) == once


@settings(max_examples=100, deadline=None)
@given(atoms, st.permutations(["x", "y", "z", "w"]))
def test_canonical_key_invariant_under_renaming(a, perm):
    rename = {v: Var(f"n{i}") for i, v in enumerate(perm)}
    renamed = apply_substitution(a, Substitution(rename, {}))
    assert canonical_key(a) == canonical_key(renamed)
