"""HTTP service wrapping the engine.

The service is stateless: every request carries the artifact contents, so
one server can answer queries for many clients and knowledge bases. The CLI
uses the same session layer against local files.

Endpoints:

  GET  /health   liveness and version
  POST /check    parse-validate artifacts, returning diagnostics
  POST /query    run a query and return ranked solutions with explanations
"""

from __future__ import annotations

import json
from typing import Literal, Optional

from fastapi import FastAPI
from pydantic import BaseModel, Field

from . import __version__
from .session import ArtifactTexts, execute_query, make_config, parse_artifacts
from .extraction import render_explanation
from .textio import serialize_query


class ArtifactPayload(BaseModel):
    kb: str = Field(description="knowledge base text")
    templates: Optional[str] = None
    taxonomy: Optional[str] = None
    similarity: Optional[str] = None
    canned_rules: Optional[str] = None

    def to_texts(self) -> ArtifactTexts:
        return ArtifactTexts(
            kb=self.kb,
            templates=self.templates,
            taxonomy=self.taxonomy,
            similarity=self.similarity,
            canned_rules=self.canned_rules,
        )


class DiagnosticModel(BaseModel):
    source: str
    line: int
    column: int
    message: str
    severity: str


class CheckResponse(BaseModel):
    ok: bool
    diagnostics: list[DiagnosticModel]


class EngineOptions(BaseModel):
    workers: int = 1
    max_expansions: int = 500
    max_depth: int = 12
    stop_after_solutions: int = 0
    top_k: int = 3
    seed: int = 0
    unifier: Optional[Literal["exact", "fuzzy"]] = None
    use_drg: bool = True


class QueryRequest(BaseModel):
    artifacts: ArtifactPayload
    query: str
    options: EngineOptions = Field(default_factory=EngineOptions)
    explanation_format: Literal["text", "json", "dot"] = "text"


class SolutionModel(BaseModel):
    bindings: dict[str, str]
    score: float
    explanation: str
    explanation_json: Optional[dict] = None


class QueryResponse(BaseModel):
    ok: bool
    solutions: list[SolutionModel]
    stats: dict
    diagnostics: list[DiagnosticModel]


def _diag_models(diags) -> list[DiagnosticModel]:
    return [
        DiagnosticModel(
            source=source,
            line=d.line,
            column=d.column,
            message=d.message,
            severity=d.severity,
        )
        for source, d in diags.entries
    ]


def create_app() -> FastAPI:
    app = FastAPI(
        title="backchain",
        version=__version__,
        description="Confidence-weighted backward chaining with fuzzy "
        "unification and proof-graph explanations.",
    )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/check", response_model=CheckResponse)
    def check(payload: ArtifactPayload) -> CheckResponse:
        artifacts, diags = parse_artifacts(payload.to_texts())
        return CheckResponse(ok=artifacts is not None, diagnostics=_diag_models(diags))

    @app.post("/query", response_model=QueryResponse)
    def query(request: QueryRequest) -> QueryResponse:
        texts = request.artifacts.to_texts()
        opts = request.options
        config = make_config(
            workers=opts.workers,
            max_expansions=opts.max_expansions,
            max_depth=opts.max_depth,
            stop_after_solutions=opts.stop_after_solutions,
            top_k=opts.top_k,
            seed=opts.seed,
            unifier=opts.unifier,
            has_similarity=texts.similarity is not None,
            use_drg=opts.use_drg,
        )
        outcome = execute_query(texts, request.query, config)
        if outcome.result is None:
            return QueryResponse(
                ok=False, solutions=[], stats={}, diagnostics=_diag_models(outcome.diagnostics)
            )
        query_text = serialize_query(outcome.query) if outcome.query else ""
        solutions = []
        for sol in outcome.result.solutions:
            tree = sol.trees[0]
            explanation = render_explanation(tree, request.explanation_format, query_text)
            solutions.append(
                SolutionModel(
                    bindings=sol.bindings,
                    score=sol.score,
                    explanation=explanation,
                    explanation_json=json.loads(render_explanation(tree, "json")),
                )
            )
        return QueryResponse(
            ok=True,
            solutions=solutions,
            stats=outcome.result.stats,
            diagnostics=_diag_models(outcome.diagnostics),
        )

    return app


app = create_app()
