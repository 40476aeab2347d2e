"""Artifact loading and query execution shared by the CLI and the service.

The CLI hands in file paths, the HTTP service hands in file contents; both
funnel through `parse_artifacts` and `execute_query`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .engine import ArtifactSet, Engine, EngineConfig, QueryResult
from .extraction import render_explanation
from .graph import GoalSelectionStrategy
from .terms import Atom
from .textio import (
    ParseDiagnostic,
    parse_kb,
    parse_query,
    parse_similarity_table,
    parse_taxonomy,
    parse_templates,
    serialize_query,
)


@dataclass
class ArtifactTexts:
    kb: str
    templates: Optional[str] = None
    taxonomy: Optional[str] = None
    similarity: Optional[str] = None
    canned_rules: Optional[str] = None


@dataclass
class Diagnostics:
    entries: list[tuple[str, ParseDiagnostic]] = field(default_factory=list)

    def extend(self, source: str, diags: list[ParseDiagnostic]) -> None:
        self.entries.extend((source, d) for d in diags)

    @property
    def has_errors(self) -> bool:
        return any(d.severity == "error" for _, d in self.entries)

    def render(self) -> list[str]:
        return [d.render(source) for source, d in self.entries]


def parse_artifacts(texts: ArtifactTexts) -> tuple[Optional[ArtifactSet], Diagnostics]:
    diags = Diagnostics()
    kb_res = parse_kb(texts.kb, source="kb")
    diags.extend("kb", kb_res.diagnostics)
    templates = []
    taxonomy = None
    similarity = None
    canned = []
    if texts.templates is not None:
        res = parse_templates(texts.templates, source="templates")
        diags.extend("templates", res.diagnostics)
        if res.ok:
            templates = res.value
    if texts.taxonomy is not None:
        res = parse_taxonomy(texts.taxonomy, source="taxonomy")
        diags.extend("taxonomy", res.diagnostics)
        if res.ok:
            taxonomy = res.value
    if texts.similarity is not None:
        res = parse_similarity_table(texts.similarity, source="similarity")
        diags.extend("similarity", res.diagnostics)
        if res.ok:
            similarity = res.value
    if texts.canned_rules is not None:
        res = parse_kb(texts.canned_rules, source="canned-rules")
        diags.extend("canned-rules", res.diagnostics)
        if res.ok:
            if res.value.facts:
                diags.entries.append(
                    (
                        "canned-rules",
                        ParseDiagnostic(1, 1, "facts in a canned-rule file are ignored", "warning"),
                    )
                )
            canned = list(res.value.rules)
    if diags.has_errors or not kb_res.ok:
        return None, diags
    if templates and taxonomy is None:
        # templates without a taxonomy can only type-check reflexively
        taxonomy = parse_taxonomy("").value
    if templates and taxonomy is not None:
        for template in templates:
            names = set(template.type_constraints.values())
            for group in template.negative_bindings:
                names.update(group.values())
            for name in sorted(names):
                if not taxonomy.knows(name):
                    diags.entries.append(
                        (
                            "templates",
                            ParseDiagnostic(
                                1, 1,
                                f"template {template.id!r} uses type {name!r} "
                                "unknown to the taxonomy",
                                "warning",
                            ),
                        )
                    )
    artifacts = ArtifactSet(
        kb=kb_res.value,
        templates=templates,
        taxonomy=taxonomy,
        similarity=similarity,
        canned_rules=canned,
    )
    return artifacts, diags


def load_artifact_files(
    kb_path: str,
    templates_path: Optional[str] = None,
    taxonomy_path: Optional[str] = None,
    similarity_path: Optional[str] = None,
    canned_path: Optional[str] = None,
) -> tuple[Optional[ArtifactTexts], Diagnostics]:
    diags = Diagnostics()
    contents = {}
    for name, path in (
        ("kb", kb_path),
        ("templates", templates_path),
        ("taxonomy", taxonomy_path),
        ("similarity", similarity_path),
        ("canned_rules", canned_path),
    ):
        if path is None:
            contents[name] = None
            continue
        try:
            with open(path, "r", encoding="utf-8") as fh:
                contents[name] = fh.read()
        except OSError as exc:
            diags.entries.append((path, ParseDiagnostic(1, 1, f"cannot read file: {exc}")))
            contents[name] = None
    if diags.has_errors:
        return None, diags
    return ArtifactTexts(**contents), diags


@dataclass
class RunOutcome:
    result: Optional[QueryResult]
    diagnostics: Diagnostics
    query: Optional[Atom] = None

    @property
    def exit_code(self) -> int:
        if self.result is None:
            return 2
        return 0 if self.result.solutions else 1


def make_config(
    workers: int = 1,
    remote_workers: tuple[str, ...] = (),
    max_expansions: int = 500,
    max_depth: int = 12,
    stop_after_solutions: int = 0,
    top_k: int = 3,
    seed: int = 0,
    unifier: Optional[str] = None,
    has_similarity: bool = False,
    use_drg: Optional[bool] = None,
) -> EngineConfig:
    if unifier is None:
        unifier = "fuzzy" if has_similarity else "exact"
    return EngineConfig(
        workers=workers,
        remote_workers=tuple(remote_workers),
        max_expansions=max_expansions,
        max_depth=max_depth,
        stop_after_solutions=stop_after_solutions,
        top_k=top_k,
        seed=seed,
        unifier=unifier,
        use_drg=True if use_drg is None else use_drg,
        strategy=GoalSelectionStrategy(),
    )


def execute_query(
    texts: ArtifactTexts, query_text: str, config: Optional[EngineConfig] = None
) -> RunOutcome:
    artifacts, diags = parse_artifacts(texts)
    query_res = parse_query(query_text)
    diags.extend("query", query_res.diagnostics)
    if artifacts is None or not query_res.ok:
        return RunOutcome(None, diags)
    if config is None:
        config = make_config(has_similarity=artifacts.similarity is not None)
    engine = Engine(artifacts, config)
    result = engine.run(query_res.value)
    return RunOutcome(result, diags, query=query_res.value)


def render_solutions(outcome: RunOutcome, fmt: str = "text") -> str:
    """Render every solution's best proof in the requested format."""
    if outcome.result is None:
        return ""
    query_text = serialize_query(outcome.query) if outcome.query else ""
    chunks = []
    if fmt == "text":
        if not outcome.result.solutions:
            chunks.append(f"No solutions for: {query_text}\n")
        for i, sol in enumerate(outcome.result.solutions, start=1):
            chunks.append(f"=== Solution {i} ===\n")
            chunks.append(render_explanation(sol.trees[0], "text", query_text))
        return "".join(chunks)
    if fmt == "json":
        lines = []
        for sol in outcome.result.solutions:
            lines.append(
                json.dumps(
                    {
                        "bindings": sol.bindings,
                        "score": sol.score,
                        "explanation": json.loads(render_explanation(sol.trees[0], "json")),
                    },
                    sort_keys=True,
                )
            )
        lines.append(json.dumps({"stats": outcome.result.stats}, sort_keys=True))
        return "\n".join(lines) + "\n"
    if fmt == "dot":
        if not outcome.result.solutions:
            return "digraph proof {\n}\n"
        return render_explanation(outcome.result.solutions[0].trees[0], "dot")
    raise ValueError(f"unknown output format {fmt!r}")


def trace_lines(outcome: RunOutcome) -> list[str]:
    """Expansion trace as one JSON object per line."""
    if outcome.result is None:
        return []
    return [json.dumps(entry, sort_keys=True) for entry in outcome.result.trace]
