"""Command-line interface: solve, eval, gen-dataset, inspect."""

from __future__ import annotations

import argparse
import logging
import sys

from .backend_clients import (
    RemoteBackendConfig,
    RemoteChatBackend,
    RemoteJudge,
    oracle_factory,
    random_factory,
)
from .dataset_generator import emit_dataset, generate_dataset
from .errors import KSolverError, NotFound
from .eval_harness import evaluate, inspect_trace
from .grounding import load_qa_file
from .kg_store import load_graph
from .prompt_codec import EncodeLimits
from .solver_loop import SolveParams, run_batch, write_traces

logger = logging.getLogger(__name__)


def _add_kg_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kg-vocab", required=True, help="entity vocabulary file")
    parser.add_argument("--kg-edges", required=True, help="edge TSV file")
    parser.add_argument(
        "--relations",
        default=None,
        help="relation catalog JSON (default: shipped 34-relation catalog)",
    )


def _add_qa_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--qa", required=True, help="QA file (JSON lines)")
    parser.add_argument(
        "--dataset",
        choices=["jsonl", "csqa", "obqa", "medqa"],
        default="jsonl",
        help="QA file format adapter",
    )


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=2, help="hop budget for extraction")
    parser.add_argument("--rounds", type=int, default=5, help="traversal round cap")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--fallback", choices=["direct", "wrong"], default="direct")
    parser.add_argument("--workers", type=int, default=1, help="parallel instances")
    parser.add_argument("--all-starts", action="store_true",
                        help="traverse from every question entity and majority-vote")
    parser.add_argument("--max-seq-tokens", type=int, default=1152,
                        help="prompt token budget (estimated)")
    parser.add_argument("--timings", action="store_true",
                        help="include wall times in trace files (breaks byte determinism)")


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["oracle", "random", "openai"], required=True)
    parser.add_argument("--base-url", default="https://api.openai.com/v1")
    parser.add_argument("--model", default="gpt-3.5-turbo-16k")
    parser.add_argument("--temperature", type=float, default=0.0)
    parser.add_argument("--max-inflight", type=int, default=4)
    parser.add_argument("--timeout-s", type=float, default=30.0)
    parser.add_argument("--retries", type=int, default=3)
    parser.add_argument("--api-key-env", default="KSOLVER_API_KEY")


def _build_backend(args) -> tuple[object, dict]:
    if args.backend == "openai":
        config = RemoteBackendConfig(
            base_url=args.base_url,
            model=args.model,
            api_key_env=args.api_key_env,
            timeout_s=args.timeout_s,
            retries=args.retries,
            max_inflight=args.max_inflight,
            temperature=args.temperature,
        )
        backend = RemoteChatBackend(config)
        return backend, backend.descriptor()
    if args.backend == "random":
        return random_factory(), {"name": "random", "seed": args.seed}
    return oracle_factory(), {"name": "oracle"}


def _params(args) -> SolveParams:
    return SolveParams(
        rounds=args.rounds,
        seed=args.seed,
        fallback_policy=args.fallback,
        k=args.k,
        all_starts=args.all_starts,
        workers=args.workers,
        limits=EncodeLimits(max_sequence_tokens=args.max_seq_tokens),
    )


def _load(args):
    graph = load_graph(args.kg_vocab, args.kg_edges, args.relations)
    instances = load_qa_file(args.qa, args.dataset)
    return graph, instances


def cmd_solve(args) -> int:
    graph, instances = _load(args)
    backend, _ = _build_backend(args)
    results = run_batch(instances, graph, backend, _params(args))
    write_traces((t for _, t in results), args.out, include_timings=args.timings)
    answered = sum(1 for label, _ in results if label is not None)
    print(f"solved {len(results)} instances ({answered} with a prediction) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    graph, instances = _load(args)
    backend, descriptor = _build_backend(args)
    judge_client = None
    if args.judge == "remote":
        judge_client = RemoteJudge(
            RemoteBackendConfig(
                base_url=args.base_url,
                model=args.judge_model,
                api_key_env=args.api_key_env,
                timeout_s=args.timeout_s,
                retries=args.retries,
                max_inflight=args.max_inflight,
            )
        )
    report, _ = evaluate(
        graph,
        instances,
        backend,
        _params(args),
        judge=args.judge,
        judge_client=judge_client,
        backend_descriptor=descriptor,
        out_dir=args.out,
        include_timings=args.timings,
    )
    print(report.render_table())
    print(f"report written to {args.out}")
    return 0


def cmd_gen_dataset(args) -> int:
    graph, qa = _load(args)
    limits = EncodeLimits(max_sequence_tokens=args.max_seq_tokens)
    instances, paths, stats = generate_dataset(graph, qa, k=args.k, seed=args.seed, limits=limits)
    splits = None
    if args.dev_fraction > 0:
        splits = {"train": 1.0 - args.dev_fraction, "dev": args.dev_fraction}
    written = emit_dataset(instances, args.out, splits=splits, seed=args.seed, stats=stats)
    print(
        f"generated {len(instances)} training instances from {len(paths)} paths -> "
        + ", ".join(str(p) for p in written.values())
    )
    return 0


def cmd_inspect(args) -> int:
    try:
        print(inspect_trace(args.trace, args.id, show_replies=args.replies))
    except NotFound as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ksolver",
        description="Knowledge-graph-guided multi-hop question answering",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run traversals and write a trace file")
    _add_kg_args(p_solve)
    _add_qa_args(p_solve)
    _add_run_args(p_solve)
    _add_backend_args(p_solve)
    p_solve.add_argument("--out", required=True, help="output trace file (JSON lines)")
    p_solve.set_defaults(func=cmd_solve)

    p_eval = sub.add_parser("eval", help="full pipeline plus accuracy report")
    _add_kg_args(p_eval)
    _add_qa_args(p_eval)
    _add_run_args(p_eval)
    _add_backend_args(p_eval)
    p_eval.add_argument("--judge", choices=["local", "remote"], default="local")
    p_eval.add_argument("--judge-model", default="gpt-4")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(func=cmd_eval)

    p_gen = sub.add_parser("gen-dataset", help="generate instruction-tuning data")
    _add_kg_args(p_gen)
    _add_qa_args(p_gen)
    p_gen.add_argument("--k", type=int, default=2)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--max-seq-tokens", type=int, default=1152)
    p_gen.add_argument("--dev-fraction", type=float, default=0.0)
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.set_defaults(func=cmd_gen_dataset)

    p_inspect = sub.add_parser("inspect", help="render one reasoning trace")
    p_inspect.add_argument("--trace", required=True)
    p_inspect.add_argument("--id", required=True)
    p_inspect.add_argument("--replies", action="store_true")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except KSolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
