"""
Command-line interface for the dynamic RWR engine.

Subcommands:
    static   RWR scores for one seed computed from scratch
    track    replay update batches and keep the seeds' scores current
    bench    CPI vs OSP vs OSP-T sweeps written as CSV
    metrics  compare two score dumps

Exit codes: 0 success, 1 a ``--verify`` run found a bound or accuracy
violation, 2 usage, input or I/O error.
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO, Tuple, TypeVar
import argparse
import json
import logging
import os
import sys
import time

import numpy as np
from pydantic import ValidationError

from .bench import (
    SweepResult,
    epsilon_sweep,
    location_sweep,
    reference_raw,
    sample_seeds,
    scalability_sweep,
    size_sweep,
    write_bench_csv,
)
from .config import (
    DEFAULT_EPSILON,
    DEFAULT_RESTART_PROB,
    DeadEndMode,
    PropagationConfig,
    RunConfig,
    TrackerOptions,
    load_environment,
)
from .errors import RwrError, SeedDeletionError
from .graph_store import DynamicGraph, UpdateOp
from .metrics import compare, l1_error
from .propagation import (
    PropagationStats,
    ScoreVector,
    cpi_raw,
    dead_end_rescale,
    fixed_point_residual,
    theoretical_error_bound,
    theoretical_iteration_bound,
)
from .score_io import ScoreDump, format_header, read_score_dump, write_score_dump
from .stream_ingest import (
    EdgeStream,
    SnapshotPlan,
    compact_ids,
    make_snapshots,
    power_law_edges,
    read_edge_list,
    read_update_stream,
    write_id_map,
)
from .tracker import RwrTracker

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

DEFAULT_SIZE_SWEEP = (1.0, 10.0, 100.0, 1000.0)
DEFAULT_EPSILON_SWEEP = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)

T = TypeVar("T")
R = TypeVar("R")


def _float_list(text: str) -> List[float]:
    try:
        return [float(token) for token in text.split(",") if token.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per run mode."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", type=Path, dest="graph_path", help="edge list (src dst)")
    common.add_argument(
        "--updates", type=Path, dest="updates_path", help="update stream (+ u v, - u v, +n, -n u)"
    )
    common.add_argument("--c", type=float, help="restart probability (default 0.15)")
    common.add_argument("--epsilon", type=float, help="error tolerance (default 1e-9)")
    seeds = common.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, dest="seed_node", help="seed node id")
    seeds.add_argument("--random-seeds", type=int, help="number of random seed nodes")
    common.add_argument("--rng-seed", type=int, default=0)
    common.add_argument("--snapshots", type=int, default=10, dest="snapshot_count")
    common.add_argument("--initial-fraction", type=float, default=0.5)
    common.add_argument(
        "--shrink", action="store_true", help="start from the whole stream and delete snapshots"
    )
    common.add_argument("--undirected", action="store_true")
    common.add_argument("--lenient", action="store_true", help="skip inapplicable updates")
    common.add_argument(
        "--dead-end",
        choices=[mode.value for mode in DeadEndMode],
        default=DeadEndMode.RESCALE.value,
        dest="dead_end_mode",
    )
    common.add_argument("--out", type=Path, dest="output_path")
    common.add_argument("--workers", type=int, help="seeds processed in parallel (default 1)")
    common.add_argument("--verify", action="store_true", help="fail on bound violations")
    common.add_argument("--refresh-every", type=int, help="recompute from scratch every N batches")
    common.add_argument("--checkpoint", type=Path, dest="checkpoint_path")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="dynamic-rwr", description="Random walk with restart on dynamic graphs"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("static", parents=[common], help="compute scores from scratch")
    commands.add_parser("track", parents=[common], help="replay update batches")

    bench = commands.add_parser("bench", parents=[common], help="benchmark sweeps as CSV")
    bench.add_argument(
        "--sweep", choices=["size", "epsilon", "location", "scalability"], default="size"
    )
    bench.add_argument("--sweep-values", type=_float_list)
    bench.add_argument("--approx-epsilon", type=float, default=1e-4, help="OSP-T tolerance")
    bench.add_argument("--trials", type=int)
    bench.add_argument("--synthetic-nodes", type=int)
    bench.add_argument("--synthetic-degree", type=float)

    metrics = commands.add_parser("metrics", parents=[common], help="compare two score dumps")
    metrics.add_argument("score_files", type=Path, nargs=2, metavar="SCORES")
    return parser


def parse_run_config(argv: Optional[Sequence[str]] = None) -> Tuple[RunConfig, Dict[str, Any]]:
    """
    Parse arguments into a ``RunConfig``.

    Environment defaults (``RWR_*``) fill options that were not given on the
    command line.

    Returns:
        The run configuration and the options ``RunConfig`` does not model
        (``verbose`` and ``approx_epsilon``)

    Raises:
        SystemExit: With status 2 on malformed arguments
        ValidationError: If values are out of range
    """
    args = vars(build_parser().parse_args(argv))
    extras = {
        "verbose": args.pop("verbose"),
        "approx_epsilon": args.pop("approx_epsilon", 1e-4),
    }

    values: Dict[str, Any] = {"c": DEFAULT_RESTART_PROB, "epsilon": DEFAULT_EPSILON}
    values.update(load_environment())
    values.update({key: value for key, value in args.items() if value is not None})
    return RunConfig(**values), extras


def _run_ordered(func: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def split_batches(ops: Sequence[UpdateOp], count: int) -> List[List[UpdateOp]]:
    """Cut an update stream into at most ``count`` contiguous batches."""
    if not ops:
        return []
    count = min(count, len(ops))
    per_batch = len(ops) // count
    batches = [list(ops[i * per_batch : (i + 1) * per_batch]) for i in range(count - 1)]
    batches.append(list(ops[(count - 1) * per_batch :]))
    return batches


def _seed_path(path: Path, seed: int, seed_count: int) -> Path:
    if seed_count == 1:
        return path
    return path.with_name(f"{path.stem}.seed{seed}{path.suffix}")


def _raw_from_dump(dump: ScoreDump) -> np.ndarray:
    # rescaled dumps record the raw mass they were divided by
    if dump.metadata.get("mode") == "raw" or dump.metadata.get("dead_end") == "none":
        return dump.scores
    if "raw_l1" in dump.metadata:
        return dump.scores * dump.get_float("raw_l1")
    return dump.scores


class RwrCommandLine:
    """
    Runs one command described by a ``RunConfig``.

    Every ``cmd_*`` method returns the process exit code. Data goes to
    stdout (or ``--out``); logs go to stderr. When ``static`` or ``track``
    write scores to stdout their JSON statistics move to stderr.
    """

    def __init__(
        self, config: RunConfig, approx_epsilon: float = 1e-4, out: Optional[TextIO] = None
    ):
        self.config = config
        self.approx_epsilon = approx_epsilon
        self.out = out or sys.stdout
        self.propagation = config.propagation_config()
        self.id_map: Optional[Dict[int, int]] = None
        self._reverse_map: Dict[int, int] = {}
        self.logger = logging.getLogger(self.__class__.__name__)

    def run(self) -> int:
        handlers: Dict[str, Callable[[], int]] = {
            "static": self.cmd_static,
            "track": self.cmd_track,
            "bench": self.cmd_bench,
            "metrics": self.cmd_metrics,
        }
        return handlers[self.config.command]()

    # Loading

    def _graph_path(self) -> Path:
        if self.config.graph_path is None:
            raise ValueError(f"--graph is required for '{self.config.command}'")
        return self.config.graph_path

    def _load_stream(self, compact: bool) -> EdgeStream:
        stream = read_edge_list(self._graph_path(), self.config.undirected)
        stream, dropped = stream.deduplicated()
        if dropped:
            self.logger.warning(f"Dropped {dropped} duplicate edges from {self._graph_path()}")
        if not compact:
            return stream

        stream = compact_ids(stream)
        assert stream.id_map is not None
        if any(original != dense for original, dense in stream.id_map.items()):
            self.id_map = stream.id_map
            self._reverse_map = {dense: original for original, dense in stream.id_map.items()}
            self.logger.info(f"Compacted {len(stream.id_map)} node ids")
        return stream

    def _dense_id(self, node: int) -> int:
        if self.id_map is None:
            return node
        if node not in self.id_map:
            raise ValueError(f"seed {node} does not occur in the graph")
        return self.id_map[node]

    def _original_id(self, node: int) -> int:
        return self._reverse_map.get(node, node)

    def _choose_seeds(self, graph: DynamicGraph) -> List[int]:
        if self.config.seed_node is not None:
            return [self._dense_id(self.config.seed_node)]
        count = self.config.random_seeds or 1
        seeds = sample_seeds(graph, count, self.config.rng_seed)
        if not seeds:
            raise ValueError("no node with out-edges is available as a seed")
        if len(seeds) < count:
            self.logger.warning(f"Only {len(seeds)} of {count} requested seeds available")
        return sorted(seeds)

    # Output

    def _emit(self, record: Dict[str, Any], target: Optional[TextIO] = None) -> None:
        stream = target or self.out
        stream.write(json.dumps(record) + "\n")
        stream.flush()

    def _stats_target(self) -> TextIO:
        return self.out if self.config.output_path is not None else sys.stderr

    def _dump_headers(self, seed: int, raw: ScoreVector, stats: PropagationStats) -> List[str]:
        return [
            format_header(
                {
                    "seed": self._original_id(seed),
                    "c": self.propagation.c,
                    "epsilon": self.propagation.epsilon,
                    "dead_end": self.propagation.dead_end_mode.value,
                }
            ),
            format_header(
                {
                    "raw_l1": raw.l1,
                    "iterations": stats.iterations,
                    "visited_edges": stats.visited_edges,
                }
            ),
        ]

    def _queried(self, raw: ScoreVector) -> ScoreVector:
        if self.propagation.dead_end_mode is DeadEndMode.RESCALE:
            return dead_end_rescale(raw)
        return raw

    def _write_id_map(self) -> None:
        if self.id_map is not None and self.config.output_path is not None:
            write_id_map(self.config.output_path.with_suffix(".idmap"), self.id_map)

    # static

    def cmd_static(self) -> int:
        """
        Compute scores from scratch, write the dump and one JSON stats line.

        Without ``--out`` the dump goes to stdout and the stats line to stderr.
        """
        graph, _ = self._load_stream(compact=True).to_graph()
        seed = self._choose_seeds(graph)[0]

        raw, stats = cpi_raw(graph, seed, self.propagation)
        headers = self._dump_headers(seed, raw, stats)
        scores = self._queried(raw).values

        if self.config.output_path is not None:
            write_score_dump(self.config.output_path, scores, headers)
            self._write_id_map()
        else:
            write_score_dump(self.out, scores, headers)
        self._emit(
            {
                "seed": self._original_id(seed),
                "iterations": stats.iterations,
                "visited_edges": stats.visited_edges,
                "wall_time": stats.wall_time,
                "raw_l1": raw.l1,
            },
            self._stats_target(),
        )

        if self.config.verify:
            return self._verify_static(graph, seed, raw)
        return EXIT_OK

    def _verify_static(self, graph: DynamicGraph, seed: int, raw: ScoreVector) -> int:
        failures = []
        bound = theoretical_error_bound(self.propagation)
        error = l1_error(raw, reference_raw(graph, seed, self.propagation.c))
        if error > bound:
            failures.append(f"raw L1 error {error:.3e} exceeds epsilon/c {bound:.3e}")
        residual = fixed_point_residual(graph, raw, seed, self.propagation.c)
        if residual > 2 * self.propagation.epsilon:
            failures.append(f"fixed-point residual {residual:.3e} exceeds 2*epsilon")

        for failure in failures:
            self.logger.error(f"Verification failed: {failure}")
        return EXIT_VIOLATION if failures else EXIT_OK

    # track

    def _snapshot_plan(self) -> SnapshotPlan:
        return SnapshotPlan(
            initial_fraction=self.config.initial_fraction,
            snapshot_count=self.config.snapshot_count,
            rng_seed=self.config.rng_seed,
            shrink=self.config.shrink,
        )

    def _track_inputs(self) -> Tuple[DynamicGraph, List[List[UpdateOp]]]:
        if self.config.updates_path is not None:
            graph, _ = self._load_stream(compact=False).to_graph()
            ops = read_update_stream(self.config.updates_path)
            return graph, split_batches(ops, self.config.snapshot_count)

        stream = self._load_stream(compact=True)
        initial, batches = make_snapshots(stream, self._snapshot_plan())
        graph, _ = EdgeStream(initial, stream.undirected).to_graph(stream.node_count)
        return graph, batches

    def cmd_track(self) -> int:
        """
        Replay update batches, emitting one JSON line per seed and batch.

        Lines come in (seed, batch) order followed by one ``"seed": "mean"``
        line per batch. Final scores are written per seed to ``--out``;
        without it every seed's dump goes to stdout and the JSON lines to
        stderr.
        """
        graph, batches = self._track_inputs()
        seeds = self._choose_seeds(graph)
        options = TrackerOptions(refresh_every=self.config.refresh_every)
        workers = self.config.workers

        trackers = _run_ordered(
            lambda seed: RwrTracker.initialize(graph, seed, self.propagation, options),
            seeds,
            workers,
        )
        self.logger.info(
            f"Tracking {len(trackers)} seeds over {len(batches)} batches "
            f"({graph.node_count} nodes, {graph.edge_count} edges)"
        )

        records: Dict[int, List[Dict[str, Any]]] = {seed: [] for seed in seeds}
        strict = not self.config.lenient
        for index, batch in enumerate(batches, start=1):
            for tracker in trackers:
                tracker.check_ops(batch)

            started = time.perf_counter()
            change_set = graph.apply_batch(batch, strict=strict)
            graph.transition_operator()
            mutation_time = time.perf_counter() - started
            for seed in seeds:
                if seed in change_set.deleted_nodes:
                    raise SeedDeletionError(f"batch {index} deleted seed node {seed}")

            results = _run_ordered(
                lambda tracker: tracker.apply_change_set(graph, change_set), trackers, workers
            )
            for tracker, stats in zip(trackers, results):
                stats.mutation_time = mutation_time
                records[tracker.seed].append(self._batch_record(tracker.seed, index, stats))

        stats_target = self._stats_target()
        for seed in seeds:
            for record in records[seed]:
                self._emit(record, stats_target)
        for index in range(1, len(batches) + 1):
            mean = self._mean_record(index, [records[seed][index - 1] for seed in seeds])
            self._emit(mean, stats_target)

        self._write_tracker_outputs(trackers)
        if self.config.verify:
            return self._verify_trackers(graph, trackers)
        return EXIT_OK

    def _batch_record(self, seed: int, index: int, stats: PropagationStats) -> Dict[str, Any]:
        return {
            "seed": self._original_id(seed),
            "batch": index,
            "q_offset_l1": stats.q_offset_l1,
            "iterations": stats.iterations,
            "visited_edges": stats.visited_edges,
            "wall_time": stats.wall_time,
            "mutation_time": stats.mutation_time,
            "refreshed": stats.refreshed_from_scratch,
        }

    @staticmethod
    def _mean_record(index: int, records: List[Dict[str, Any]]) -> Dict[str, Any]:
        mean: Dict[str, Any] = {"seed": "mean", "batch": index, "seeds": len(records)}
        for key in ("q_offset_l1", "iterations", "visited_edges", "wall_time"):
            mean[key] = float(np.mean([record[key] for record in records]))
        return mean

    def _write_tracker_outputs(self, trackers: List[RwrTracker]) -> None:
        for tracker in trackers:
            seed_id = self._original_id(tracker.seed)
            headers = self._dump_headers(tracker.seed, tracker.r_raw, tracker.cumulative_stats[-1])
            if self.config.output_path is not None:
                write_score_dump(
                    _seed_path(self.config.output_path, seed_id, len(trackers)),
                    tracker.query().values,
                    headers,
                )
            else:
                write_score_dump(self.out, tracker.query().values, headers)
            if self.config.checkpoint_path is not None:
                tracker.save_checkpoint(
                    _seed_path(self.config.checkpoint_path, seed_id, len(trackers))
                )
        self._write_id_map()

    def _verify_trackers(self, graph: DynamicGraph, trackers: List[RwrTracker]) -> int:
        failures = []
        iteration_ceiling = theoretical_iteration_bound(self.propagation)
        for tracker in trackers:
            for batch, stats in enumerate(tracker.cumulative_stats[1:], start=1):
                if not stats.refreshed_from_scratch and stats.iterations > iteration_ceiling:
                    failures.append(
                        f"seed {tracker.seed} batch {batch}: {stats.iterations} iterations "
                        f"> bound {iteration_ceiling}"
                    )
            # per-batch errors add up
            bound = max(1, tracker.batches_applied) * theoretical_error_bound(self.propagation)
            error = l1_error(tracker.r_raw, reference_raw(graph, tracker.seed, self.propagation.c))
            if error > bound:
                failures.append(
                    f"seed {tracker.seed}: raw L1 error {error:.3e} exceeds {bound:.3e}"
                )

        for failure in failures:
            self.logger.error(f"Verification failed: {failure}")
        return EXIT_VIOLATION if failures else EXIT_OK

    # bench

    def _bench_stream(self) -> EdgeStream:
        if self.config.graph_path is not None:
            return self._load_stream(compact=True)
        n = self.config.synthetic_nodes
        self.logger.info(
            f"Generating power-law graph: {n} nodes, average degree {self.config.synthetic_degree}"
        )
        return power_law_edges(n, self.config.synthetic_degree, self.config.rng_seed)

    def cmd_bench(self) -> int:
        """Run the selected sweep and write averaged rows as CSV."""
        stream = self._bench_stream()
        graph, _ = stream.to_graph(
            self.config.synthetic_nodes if self.config.graph_path is None else None
        )
        config = self.config
        approx = self.propagation.with_epsilon(self.approx_epsilon)
        result: SweepResult

        if config.sweep == "size":
            sizes = config.sweep_values or list(DEFAULT_SIZE_SWEEP)
            usable = [int(size) for size in sizes if int(size) <= graph.edge_count]
            if len(usable) < len(sizes):
                self.logger.warning(f"Sizes above the edge count {graph.edge_count} skipped")
            result = size_sweep(
                graph,
                usable,
                self.propagation,
                approx,
                config.trials,
                config.rng_seed,
            )
        elif config.sweep == "epsilon":
            epsilons = config.sweep_values or list(DEFAULT_EPSILON_SWEEP)
            result = epsilon_sweep(
                graph, epsilons, self.propagation, config.trials, config.rng_seed
            )
        elif config.sweep == "location":
            seed = self._choose_seeds(graph)[0]
            result = location_sweep(
                graph,
                approx,
                seed,
                samples_per_group=config.trials,
                rng_seed=config.rng_seed,
            )
        else:
            result = scalability_sweep(
                stream,
                self._snapshot_plan(),
                self.propagation,
                approx,
                config.random_seeds or config.trials,
                config.rng_seed,
            )

        if config.output_path is not None:
            with open(config.output_path, "w", encoding="utf-8", newline="") as handle:
                write_bench_csv(result.rows, handle)
        else:
            write_bench_csv(result.rows, self.out)

        for violation in result.violations:
            self.logger.error(f"Bound violation: {violation}")
        if config.verify and result.violations:
            return EXIT_VIOLATION
        return EXIT_OK

    # metrics

    def cmd_metrics(self) -> int:
        """
        Compare an approximate dump (first file) with an exact one (second).

        Prints one ``ComparisonReport`` JSON object. ``c`` and ``epsilon``
        come from the first file's header when present.
        """
        approx_path, exact_path = self.config.score_files
        approx_dump = read_score_dump(approx_path)
        exact_dump = read_score_dump(exact_path)

        approx_ids = approx_dump.node_ids.tolist()
        exact_ids = exact_dump.node_ids.tolist()
        if sorted(approx_ids) != sorted(exact_ids):
            only_one = set(approx_ids) ^ set(exact_ids)
            raise ValueError(
                f"node sets differ between {approx_path} and {exact_path} "
                f"({len(only_one)} ids only in one file)"
            )

        approx_raw = _raw_from_dump(approx_dump)[np.argsort(approx_dump.node_ids, kind="stable")]
        exact_raw = _raw_from_dump(exact_dump)[np.argsort(exact_dump.node_ids, kind="stable")]

        config = PropagationConfig(
            c=approx_dump.get_float("c", self.propagation.c),
            epsilon=approx_dump.get_float("epsilon", self.propagation.epsilon),
            dead_end_mode=self.propagation.dead_end_mode,
        )
        stats = PropagationStats(
            iterations=approx_dump.get_int("iterations"),
            visited_edges=approx_dump.get_int("visited_edges"),
            wall_time=approx_dump.get_float("wall_time"),
        )
        report = compare(approx_raw, exact_raw, config, stats)
        self._emit(report.model_dump())

        if self.config.verify and not report.bound_satisfied:
            self.logger.error(
                f"Raw L1 error {report.raw_l1_error:.3e} "
                f"exceeds {report.bound_epsilon_over_c:.3e}"
            )
            return EXIT_VIOLATION
        return EXIT_OK


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else os.getenv("LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the ``dynamic-rwr`` script."""
    try:
        config, extras = parse_run_config(argv)
    except SystemExit as error:
        return error.code if isinstance(error.code, int) else EXIT_USAGE
    except ValidationError as error:
        configure_logging()
        logging.getLogger(__name__).error(f"Invalid options: {error}")
        return EXIT_USAGE

    configure_logging(extras["verbose"])
    logger = logging.getLogger(__name__)
    try:
        return RwrCommandLine(config, extras["approx_epsilon"]).run()
    except OSError as error:
        logger.error(f"I/O error: {error}")
    except (RwrError, ValueError) as error:
        logger.error(f"{type(error).__name__}: {error}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
