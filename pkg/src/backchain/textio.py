"""Textual frontend: parsers and serializers for every on-disk artifact.

Knowledge-base grammar (one statement per `.`, `//` line comments):

    statement := [ident ":"] [conf [tags] "::"] [tags] clause "."
    conf      := decimal in (0, 1]
    tags      := "[" ident ("," ident)* "]"
    clause    := atom [":-" atom ("," atom)*]
    atom      := ident "(" term ("," term)* ")" | ident
    term      := "?" ident | ident | ident "(" term ("," term)* ")"

Tags may sit on either side of the `::` separator. The optional leading
`ident ":"` names a rule (explanations refer to rules by these names);
unnamed rules get sequential ids r1, r2, ...

Template grammar:

    template := "template" ident conf [tags] ":" clause
                ["where" constraint (";" constraint)*]
                ["except" "(" constraint ("," constraint)* ")"]* "."
    constraint := "?" ident ":" ident

Taxonomy files hold `X isa Y.` lines; similarity files are TSV rows
`sym1 <TAB> sym2 <TAB> score`.

Parsers never raise on bad input: they return diagnostics with 1-based
line/column positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .terms import (
    Atom,
    CONJUNCTION,
    Const,
    Compound,
    Fact,
    KnowledgeBase,
    Rule,
    Term,
    Var,
    atom_text,
    atom_to_term,
    atom_vars,
    build_kb,
    conjuncts,
    is_conjunction,
    rule_text,
)
from .unify import TableSimilarity


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def render(self, source: str = "") -> str:
        prefix = f"{source}:" if source else ""
        return f"{prefix}{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass
class ParseResult:
    value: object = None
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.value is not None and not any(
            d.severity == "error" for d in self.diagnostics
        )


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_PUNCT = {
    "::": "DCOLON",
    ":-": "ARROW",
    ":": "COLON",
    "(": "LPAREN",
    ")": "RPAREN",
    "[": "LBRACK",
    "]": "RBRACK",
    ",": "COMMA",
    ";": "SEMI",
    ".": "DOT",
    "?": "QMARK",
}


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT, NUMBER, punctuation kinds, EOF
    text: str
    line: int
    column: int


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident_char(c: str) -> bool:
    return c.isalnum() or c in "_$"


def _tokenize(text: str) -> tuple[list[_Token], list[ParseDiagnostic]]:
    tokens: list[_Token] = []
    diags: list[ParseDiagnostic] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c.isdigit():
            start = i
            while i < n and text[i].isdigit():
                i += 1
            if i < n and text[i] == "." and i + 1 < n and text[i + 1].isdigit():
                i += 1
                while i < n and text[i].isdigit():
                    i += 1
            tokens.append(_Token("NUMBER", text[start:i], line, col))
            col += i - start
            continue
        if _is_ident_start(c):
            start = i
            while i < n and _is_ident_char(text[i]):
                i += 1
            tokens.append(_Token("IDENT", text[start:i], line, col))
            col += i - start
            continue
        two = text[i : i + 2]
        if two in _PUNCT:
            tokens.append(_Token(_PUNCT[two], two, line, col))
            i += 2
            col += 2
            continue
        if c in _PUNCT:
            tokens.append(_Token(_PUNCT[c], c, line, col))
            i += 1
            col += 1
            continue
        diags.append(ParseDiagnostic(line, col, f"unexpected character {c!r}"))
        i += 1
        col += 1
    last_line = line
    tokens.append(_Token("EOF", "", last_line, col))
    return tokens, diags


class _Parser:
    def __init__(self, text: str):
        self.tokens, self.diags = _tokenize(text)
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.peek()
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def at(self, kind: str) -> bool:
        return self.peek().kind == kind

    def error(self, message: str, tok: Optional[_Token] = None) -> None:
        tok = tok or self.peek()
        self.diags.append(ParseDiagnostic(tok.line, tok.column, message))

    def expect(self, kind: str, what: str) -> Optional[_Token]:
        if self.at(kind):
            return self.advance()
        got = self.peek()
        shown = got.text or "end of input"
        self.error(f"expected {what}, found {shown!r}", got)
        return None

    def skip_to_dot(self) -> None:
        while not self.at("EOF"):
            if self.advance().kind == "DOT":
                return

    # -- grammar pieces ----------------------------------------------------

    def term(self) -> Optional[Term]:
        if self.at("QMARK"):
            self.advance()
            name = self.expect("IDENT", "variable name")
            return Var(name.text) if name else None
        ident = self.expect("IDENT", "a term")
        if ident is None:
            return None
        if self.at("LPAREN"):
            self.advance()
            args = self.term_list()
            if args is None or self.expect("RPAREN", "')'") is None:
                return None
            return Compound(ident.text, tuple(args))
        return Const(ident.text)

    def term_list(self) -> Optional[list[Term]]:
        args = []
        t = self.term()
        if t is None:
            return None
        args.append(t)
        while self.at("COMMA"):
            self.advance()
            t = self.term()
            if t is None:
                return None
            args.append(t)
        return args

    def atom(self) -> Optional[Atom]:
        ident = self.expect("IDENT", "a predicate")
        if ident is None:
            return None
        if self.at("LPAREN"):
            self.advance()
            args = self.term_list()
            if args is None or self.expect("RPAREN", "')'") is None:
                return None
            return Atom(ident.text, tuple(args))
        return Atom(ident.text, ())

    def confidence_and_tags(self) -> tuple[Optional[float], Optional[list[str]]]:
        """Leading `conf [tags] ::` / `conf :: [tags]` / bare `[tags]` prefix.

        Tags are accepted on either side of the `::` separator.
        """
        conf = 1.0
        tags: list[str] = []
        if self.at("NUMBER"):
            tok = self.advance()
            value = float(tok.text)
            if not (0.0 < value <= 1.0):
                self.error(f"confidence {tok.text} outside (0, 1]", tok)
                return None, None
            conf = value
            before = self.tag_list()
            if before is None or self.expect("DCOLON", "'::'") is None:
                return None, None
            tags.extend(before)
        after = self.tag_list()
        if after is None:
            return None, None
        tags.extend(after)
        return conf, tags

    def tag_list(self) -> Optional[list[str]]:
        if not self.at("LBRACK"):
            return []
        self.advance()
        tags = []
        tok = self.expect("IDENT", "a tag")
        if tok is None:
            return None
        tags.append(tok.text)
        while self.at("COMMA"):
            self.advance()
            tok = self.expect("IDENT", "a tag")
            if tok is None:
                return None
            tags.append(tok.text)
        if self.expect("RBRACK", "']'") is None:
            return None
        return tags


# ---------------------------------------------------------------------------
# Knowledge base
# ---------------------------------------------------------------------------

def parse_kb(text: str, source: str = "kb") -> ParseResult:
    try:
        return _parse_kb_inner(text, source)
    except Exception as exc:  # defensive: a parser must never crash
        return ParseResult(None, [ParseDiagnostic(1, 1, f"internal parse failure: {exc}")])


def _parse_kb_inner(text: str, source: str) -> ParseResult:
    p = _Parser(text)
    facts: list[Fact] = []
    rules: list[Rule] = []
    seen_ids: dict[str, int] = {}
    auto = 0
    while not p.at("EOF"):
        start_errors = len([d for d in p.diags if d.severity == "error"])
        label = None
        if p.at("IDENT") and p.peek(1).kind == "COLON":
            label = p.advance().text
            p.advance()
        conf, tags = p.confidence_and_tags()
        head = p.atom() if conf is not None and tags is not None else None
        body: list[Atom] = []
        ok = head is not None
        if ok and p.at("ARROW"):
            p.advance()
            while True:
                b = p.atom()
                if b is None:
                    ok = False
                    break
                body.append(b)
                if p.at("COMMA"):
                    p.advance()
                    continue
                break
        if ok and p.expect("DOT", "'.'") is None:
            ok = False
        if not ok or len([d for d in p.diags if d.severity == "error"]) > start_errors:
            p.skip_to_dot()
            continue
        line = p.tokens[p.pos - 1].line
        if not body and label is None:
            try:
                facts.append(Fact(head, conf, provenance=f"{source}:{line}"))
            except ValueError as exc:
                p.diags.append(ParseDiagnostic(line, 1, str(exc)))
            continue
        if label is None:
            auto += 1
            label = f"r{auto}"
        if label in seen_ids:
            p.diags.append(ParseDiagnostic(line, 1, f"duplicate rule id {label!r}"))
            continue
        seen_ids[label] = line
        rules.append(
            Rule(
                id=label,
                head=head,
                body=tuple(body),
                confidence=conf,
                tags=frozenset(tags),
                provenance="static",
            )
        )
    if any(d.severity == "error" for d in p.diags):
        return ParseResult(None, p.diags)
    return ParseResult(build_kb(facts, rules), p.diags)


def parse_query(text: str) -> ParseResult:
    """A single atom, or a `,`-joined conjunction reified under `and$`."""
    try:
        p = _Parser(text)
        atoms: list[Atom] = []
        a = p.atom()
        if a is None:
            return ParseResult(None, p.diags)
        atoms.append(a)
        while p.at("COMMA"):
            p.advance()
            a = p.atom()
            if a is None:
                return ParseResult(None, p.diags)
            atoms.append(a)
        if not p.at("EOF") and p.peek().kind != "DOT":
            p.error(f"unexpected {p.peek().text!r} after query")
        if any(d.severity == "error" for d in p.diags):
            return ParseResult(None, p.diags)
        if len(atoms) == 1:
            return ParseResult(atoms[0], p.diags)
        return ParseResult(Atom(CONJUNCTION, tuple(atom_to_term(x) for x in atoms)), p.diags)
    except Exception as exc:
        return ParseResult(None, [ParseDiagnostic(1, 1, f"internal parse failure: {exc}")])


# ---------------------------------------------------------------------------
# Rule templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RuleTemplate:
    id: str
    pattern: Rule
    type_constraints: dict[str, str] = field(default_factory=dict)
    negative_bindings: tuple[dict[str, str], ...] = ()
    base_confidence: float = 1.0
    tags: frozenset[str] = frozenset()


def parse_templates(text: str, source: str = "templates") -> ParseResult:
    try:
        return _parse_templates_inner(text, source)
    except Exception as exc:
        return ParseResult(None, [ParseDiagnostic(1, 1, f"internal parse failure: {exc}")])


def _parse_templates_inner(text: str, source: str) -> ParseResult:
    p = _Parser(text)
    templates: list[RuleTemplate] = []
    seen: set[str] = set()
    while not p.at("EOF"):
        start_errors = len([d for d in p.diags if d.severity == "error"])
        kw = p.expect("IDENT", "'template'")
        if kw is None or kw.text != "template":
            if kw is not None:
                p.error(f"expected 'template', found {kw.text!r}", kw)
            p.skip_to_dot()
            continue
        name = p.expect("IDENT", "template name")
        conf_tok = p.expect("NUMBER", "template confidence")
        conf = None
        if conf_tok is not None:
            conf = float(conf_tok.text)
            if not (0.0 < conf <= 1.0):
                p.error(f"confidence {conf_tok.text} outside (0, 1]", conf_tok)
                conf = None
        tags = p.tag_list()
        head = body = None
        if p.expect("COLON", "':'") is not None:
            head = p.atom()
            body = []
            if head is not None and p.at("ARROW"):
                p.advance()
                while True:
                    b = p.atom()
                    if b is None:
                        body = None
                        break
                    body.append(b)
                    if p.at("COMMA"):
                        p.advance()
                        continue
                    break
        constraints: dict[str, str] = {}
        negatives: list[dict[str, str]] = []
        ok = head is not None and body is not None and conf is not None and name is not None
        while ok and p.at("IDENT") and p.peek().text in ("where", "except"):
            word = p.advance().text
            if word == "where":
                ok = _parse_constraints(p, constraints, sep="SEMI")
            else:
                if p.expect("LPAREN", "'('") is None:
                    ok = False
                    break
                group: dict[str, str] = {}
                ok = _parse_constraints(p, group, sep="COMMA")
                if ok and p.expect("RPAREN", "')'") is None:
                    ok = False
                if ok:
                    negatives.append(group)
        if ok and p.expect("DOT", "'.'") is None:
            ok = False
        if not ok or len([d for d in p.diags if d.severity == "error"]) > start_errors:
            p.skip_to_dot()
            continue
        if name.text in seen:
            p.diags.append(ParseDiagnostic(kw.line, kw.column, f"duplicate template id {name.text!r}"))
            continue
        seen.add(name.text)
        pattern = Rule(
            id=name.text,
            head=head,
            body=tuple(body),
            confidence=conf,
            tags=frozenset(tags or []),
            provenance="drg:template",
        )
        pattern_vars = set()
        for a in (head, *body):
            pattern_vars.update(atom_vars(a))
        for group in [constraints] + negatives:
            for v in group:
                if v not in pattern_vars:
                    p.diags.append(
                        ParseDiagnostic(
                            kw.line, kw.column,
                            f"constraint on unknown variable ?{v} in template {name.text!r}",
                        )
                    )
        templates.append(
            RuleTemplate(
                id=name.text,
                pattern=pattern,
                type_constraints=dict(constraints),
                negative_bindings=tuple(negatives),
                base_confidence=conf,
                tags=frozenset(tags or []),
            )
        )
    if any(d.severity == "error" for d in p.diags):
        return ParseResult(None, p.diags)
    return ParseResult(templates, p.diags)


def _parse_constraints(p: _Parser, into: dict[str, str], sep: str) -> bool:
    while True:
        if p.expect("QMARK", "'?'") is None:
            return False
        var = p.expect("IDENT", "variable name")
        if var is None or p.expect("COLON", "':'") is None:
            return False
        typ = p.expect("IDENT", "type name")
        if typ is None:
            return False
        if var.text in into:
            p.error(f"variable ?{var.text} constrained twice", var)
            return False
        into[var.text] = typ.text
        if p.at(sep):
            p.advance()
            continue
        return True


# ---------------------------------------------------------------------------
# Taxonomy
# ---------------------------------------------------------------------------

class TypeTaxonomy:
    """Acyclic `isa` edges with reflexive-transitive reachability."""

    def __init__(self, edges: list[tuple[str, str]]):
        self.edges = sorted(set(edges))
        self.parents: dict[str, set[str]] = {}
        for child, parent in self.edges:
            self.parents.setdefault(child, set()).add(parent)
        self._names = {n for e in self.edges for n in e}

    def knows(self, name: str) -> bool:
        return name in self._names

    def isa(self, x: str, t: str) -> bool:
        if x == t:
            return True
        seen = set()
        stack = [x]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            for parent in self.parents.get(cur, ()):
                if parent == t:
                    return True
                stack.append(parent)
        return False

    def members(self, t: str, candidates: list[str]) -> list[str]:
        return [c for c in candidates if self.isa(c, t)]


def parse_taxonomy(text: str, source: str = "taxonomy") -> ParseResult:
    try:
        p = _Parser(text)
        edges: list[tuple[str, str]] = []
        while not p.at("EOF"):
            start_errors = len([d for d in p.diags if d.severity == "error"])
            child = p.expect("IDENT", "a type or instance name")
            kw = p.expect("IDENT", "'isa'")
            if kw is not None and kw.text != "isa":
                p.error(f"expected 'isa', found {kw.text!r}", kw)
                kw = None
            parent = p.expect("IDENT", "a type name")
            dot = p.expect("DOT", "'.'")
            if None in (child, kw, parent, dot) or len(
                [d for d in p.diags if d.severity == "error"]
            ) > start_errors:
                p.skip_to_dot()
                continue
            edges.append((child.text, parent.text))
        taxonomy = TypeTaxonomy(edges)
        cycle = _find_cycle(taxonomy)
        if cycle:
            p.diags.append(ParseDiagnostic(1, 1, f"isa cycle through {cycle!r}"))
        if any(d.severity == "error" for d in p.diags):
            return ParseResult(None, p.diags)
        return ParseResult(taxonomy, p.diags)
    except Exception as exc:
        return ParseResult(None, [ParseDiagnostic(1, 1, f"internal parse failure: {exc}")])


def _find_cycle(t: TypeTaxonomy) -> Optional[str]:
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[str, int] = {}

    def visit(node: str) -> Optional[str]:
        color[node] = GRAY
        for parent in t.parents.get(node, ()):
            c = color.get(parent, WHITE)
            if c == GRAY:
                return parent
            if c == WHITE:
                found = visit(parent)
                if found:
                    return found
        color[node] = BLACK
        return None

    for child, _ in t.edges:
        if color.get(child, WHITE) == WHITE:
            found = visit(child)
            if found:
                return found
    return None


# ---------------------------------------------------------------------------
# Similarity table
# ---------------------------------------------------------------------------

def parse_similarity_table(text: str, source: str = "similarity") -> ParseResult:
    diags: list[ParseDiagnostic] = []
    pairs: dict[tuple[str, str], float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        cols = raw.split("\t")
        if len(cols) < 3:
            diags.append(ParseDiagnostic(lineno, 1, "expected 'sym1<TAB>sym2<TAB>score'"))
            continue
        a, b, raw_score = cols[0].strip(), cols[1].strip(), cols[2].strip()
        try:
            score = float(raw_score)
        except ValueError:
            diags.append(ParseDiagnostic(lineno, 1, f"bad similarity score {raw_score!r}"))
            continue
        if not (0.0 <= score <= 1.0):
            diags.append(ParseDiagnostic(lineno, 1, f"similarity {score} outside [0, 1]"))
            continue
        if not a or not b:
            diags.append(ParseDiagnostic(lineno, 1, "empty symbol in similarity row"))
            continue
        pairs[(a, b)] = score
    if any(d.severity == "error" for d in diags):
        return ParseResult(None, diags)
    return ParseResult(TableSimilarity(pairs), diags)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def serialize_atom(a: Atom) -> str:
    return atom_text(a)


def serialize_fact(f: Fact) -> str:
    if f.confidence == 1.0:
        return f"{atom_text(f.atom)}."
    return f"{_fmt_conf(f.confidence)} :: {atom_text(f.atom)}."


def serialize_rule(r: Rule) -> str:
    parts = [f"{r.id}:"]
    if r.confidence != 1.0:
        parts.append(f"{_fmt_conf(r.confidence)} ::")
    if r.tags:
        parts.append("[" + ", ".join(sorted(r.tags)) + "]")
    parts.append(rule_text(r))
    return " ".join(parts) + "."


def serialize_kb(kb: KnowledgeBase) -> str:
    lines = [serialize_fact(f) for f in kb.facts]
    lines += [serialize_rule(r) for r in kb.rules]
    return "\n".join(lines) + ("\n" if lines else "")


def serialize_query(a: Atom) -> str:
    if is_conjunction(a):
        return ", ".join(atom_text(c) for c in conjuncts(a))
    return atom_text(a)


def _fmt_conf(c: float) -> str:
    s = f"{c:.6f}".rstrip("0")
    return s + "0" if s.endswith(".") else s
