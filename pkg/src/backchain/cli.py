"""Command-line frontend: a thin client over the core package.

Subcommands:

  query         run a query and print solutions/explanations
  check         parse-validate the input artifacts
  trace         run a query and write the expansion trace (JSON lines)
  serve-worker  serve expand requests over TCP for a remote master
  serve-api     launch the HTTP service

Exit codes: 0 = at least one solution (or check passed), 1 = no solutions,
2 = input or configuration error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from . import __version__
from .engine import EngineConfig, build_provers, serve_worker
from .session import (
    ArtifactTexts,
    Diagnostics,
    execute_query,
    load_artifact_files,
    make_config,
    parse_artifacts,
    render_solutions,
    trace_lines,
)

EXIT_OK = 0
EXIT_NO_SOLUTIONS = 1
EXIT_INPUT_ERROR = 2


def _add_artifact_flags(p: argparse.ArgumentParser, kb_required: bool = True) -> None:
    p.add_argument("--kb", required=kb_required, help="knowledge base file")
    p.add_argument("--templates", help="rule template file")
    p.add_argument("--taxonomy", help="isa taxonomy file")
    p.add_argument("--sim", help="similarity table (TSV)")
    p.add_argument("--canned-rules", help="canned rule file")


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=1, help="in-process worker count")
    p.add_argument(
        "--remote-worker",
        action="append",
        default=[],
        metavar="HOST:PORT",
        help="use a remote TCP worker (repeatable; replaces in-process workers)",
    )
    p.add_argument("--max-expansions", type=int, default=500)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--stop-after", type=int, default=0, help="stop after N solutions (0 = exhaust)")
    p.add_argument("--top-k", type=int, default=3, help="proof trees per solution")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--unifier",
        choices=["exact", "fuzzy"],
        help="force unifier selection (default: fuzzy when --sim is given)",
    )
    p.add_argument("--no-drg", action="store_true", help="disable dynamic rule generation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backchain",
        description="Confidence-weighted backward chainer with fuzzy unification "
        "and proof-graph explanations.",
    )
    parser.add_argument("--version", action="version", version=f"backchain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("query", help="run a query against a knowledge base")
    _add_artifact_flags(q)
    _add_engine_flags(q)
    q.add_argument("--query", required=True, help="query atom or conjunction")
    q.add_argument("--format", choices=["text", "json", "dot"], default="text")
    q.add_argument("--trace", help="also write the expansion trace to this path")
    q.add_argument("--dump-graph", help="write the final proof-graph snapshot (JSON) here")

    c = sub.add_parser("check", help="parse-validate input files")
    _add_artifact_flags(c)

    t = sub.add_parser("trace", help="run a query and emit the expansion trace")
    _add_artifact_flags(t)
    _add_engine_flags(t)
    t.add_argument("--query", required=True)
    t.add_argument("--out", help="trace output path (default: stdout)")

    w = sub.add_parser("serve-worker", help="serve expand requests over TCP")
    _add_artifact_flags(w)
    w.add_argument("--host", default="127.0.0.1")
    w.add_argument("--port", type=int, default=0, help="0 picks a free port")
    w.add_argument("--worker-id", default="worker")
    w.add_argument("--idle-timeout", type=float, default=None, help="shut down after N idle seconds")
    w.add_argument(
        "--unifier", choices=["exact", "fuzzy"], help="unifier selection for this worker"
    )

    a = sub.add_parser("serve-api", help="launch the HTTP service")
    a.add_argument("--host", default="127.0.0.1")
    a.add_argument("--port", type=int, default=8000)

    return parser


def _load(args) -> tuple[Optional[ArtifactTexts], Diagnostics]:
    return load_artifact_files(
        args.kb,
        getattr(args, "templates", None),
        getattr(args, "taxonomy", None),
        getattr(args, "sim", None),
        getattr(args, "canned_rules", None),
    )


def _config_from(args, has_similarity: bool) -> EngineConfig:
    return make_config(
        workers=args.workers,
        remote_workers=tuple(args.remote_worker),
        max_expansions=args.max_expansions,
        max_depth=args.max_depth,
        stop_after_solutions=args.stop_after,
        top_k=args.top_k,
        seed=args.seed,
        unifier=args.unifier,
        has_similarity=has_similarity,
        use_drg=not args.no_drg,
    )


def _print_diags(diags: Diagnostics, stream=None) -> None:
    stream = stream or sys.stderr
    for line in diags.render():
        print(line, file=stream)


def cmd_query(args) -> int:
    texts, diags = _load(args)
    if texts is None:
        _print_diags(diags)
        return EXIT_INPUT_ERROR
    try:
        config = _config_from(args, has_similarity=texts.similarity is not None)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    outcome = execute_query(texts, args.query, config)
    _print_diags(outcome.diagnostics)
    if outcome.result is None:
        return EXIT_INPUT_ERROR
    sys.stdout.write(render_solutions(outcome, args.format))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("\n".join(trace_lines(outcome)) + "\n")
    if args.dump_graph:
        with open(args.dump_graph, "w", encoding="utf-8") as fh:
            fh.write(outcome.result.graph.snapshot_json() + "\n")
    return outcome.exit_code


def cmd_check(args) -> int:
    texts, diags = _load(args)
    if texts is not None:
        artifacts, parse_diags = parse_artifacts(texts)
        diags.entries.extend(parse_diags.entries)
        if artifacts is not None and not artifacts.kb.facts and not artifacts.kb.rules:
            print("warning: knowledge base is empty", file=sys.stderr)
    _print_diags(diags)
    if texts is None or diags.has_errors:
        return EXIT_INPUT_ERROR
    print("ok")
    return EXIT_OK


def cmd_trace(args) -> int:
    texts, diags = _load(args)
    if texts is None:
        _print_diags(diags)
        return EXIT_INPUT_ERROR
    config = _config_from(args, has_similarity=texts.similarity is not None)
    outcome = execute_query(texts, args.query, config)
    _print_diags(outcome.diagnostics)
    if outcome.result is None:
        return EXIT_INPUT_ERROR
    payload = "\n".join(trace_lines(outcome)) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    return outcome.exit_code


def cmd_serve_worker(args) -> int:
    texts, diags = _load(args)
    if texts is None:
        _print_diags(diags)
        return EXIT_INPUT_ERROR
    artifacts, parse_diags = parse_artifacts(texts)
    diags.entries.extend(parse_diags.entries)
    if artifacts is None:
        _print_diags(diags)
        return EXIT_INPUT_ERROR
    unifier = args.unifier or ("fuzzy" if artifacts.similarity is not None else "exact")
    config = EngineConfig(unifier=unifier)
    provers = build_provers(artifacts, config)

    def announce(port: int) -> None:
        print(
            f"serving KB {artifacts.kb.content_hash[:12]} on {args.host}:{port}",
            file=sys.stderr,
            flush=True,
        )

    serve_worker(
        args.host,
        args.port,
        artifacts.kb,
        provers,
        worker_id=args.worker_id,
        idle_timeout=args.idle_timeout,
        on_bind=announce,
    )
    return EXIT_OK


def cmd_serve_api(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "query": cmd_query,
        "check": cmd_check,
        "trace": cmd_trace,
        "serve-worker": cmd_serve_worker,
        "serve-api": cmd_serve_api,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
