#!/usr/bin/env python3
import argparse
import logging
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence

from hybrid_ap import __version__
from hybrid_ap.ap import ap_run
from hybrid_ap.config import Config, H2mpConfig
from hybrid_ap.edge_files import (
    ASSOCIATION,
    ParsedEdges,
    parse_edge_file,
    read_names,
)
from hybrid_ap.errors import (
    ConfigError,
    EdgeFileError,
    GraphError,
    MetricError,
    OracleError,
    SolverError,
)
from hybrid_ap.graph import (
    HeteroGraph,
    HetPotential,
    build_graph,
    build_potentials,
    perturb_similarities,
    scale_similarities,
    set_preferences,
)
from hybrid_ap.h2mp import h2mp_run
from hybrid_ap.oracle import brute_force_optimum, check_equivalence
from hybrid_ap.report import render_report, write_report
from hybrid_ap.results import SolveResult

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3

# Iterations compared by --verify-oracle between the scalar and vector engines
VERIFY_ITERATIONS = 50


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@dataclass(frozen=True)
class RunOptions:
    """Everything one invocation needs, after flags and config file are merged"""

    algo: str
    image_sims: str
    config: H2mpConfig
    tag_sims: Optional[str] = None
    assoc: Optional[str] = None
    out: Optional[str] = None
    report: Optional[str] = None
    image_names: Optional[str] = None
    tag_names: Optional[str] = None
    n_images: Optional[int] = None
    n_tags: Optional[int] = None
    verify_oracle: bool = False
    keep_user_diagonal: bool = False
    emit_metrics: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        if self.algo not in ("ap", "h2mp"):
            raise ConfigError(f"Unknown algorithm '{self.algo}'")
        if self.algo == "h2mp" and not (self.tag_sims and self.assoc):
            raise ConfigError("h2mp needs --image-sims, --tag-sims and --assoc")
        for name in ("n_images", "n_tags"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"--{name.replace('_', '-')} must be non-negative")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="hybrid-ap",
        description="Jointly pick image and tag exemplars with hybrid message "
        "passing, or image exemplars alone with affinity propagation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--algo", choices=("ap", "h2mp"), default="h2mp")
    parser.add_argument("--image-sims", required=True, help="image similarity file")
    parser.add_argument("--tag-sims", help="tag similarity file")
    parser.add_argument("--assoc", help="image-tag association file")
    parser.add_argument("--config", help="YAML config file")

    solver = parser.add_argument_group("solver")
    solver.add_argument("--lambda-image", type=float, help="default 1.0")
    solver.add_argument("--lambda-tag", type=float, help="default 1.0")
    solver.add_argument("--theta", type=float, help="default -15")
    solver.add_argument("--damping", type=float, help="default 0.5")
    solver.add_argument("--max-iter", type=int, help="default 1000")
    solver.add_argument("--conv-window", type=int, help="default 10")
    solver.add_argument(
        "--keep-user-diagonal",
        action="store_true",
        help="use the self-similarities in the input instead of setting preferences",
    )
    solver.add_argument(
        "--seed", type=int, help="perturb similarities with this seed to break ties"
    )
    solver.add_argument("--n-images", type=int, help="override the inferred count")
    solver.add_argument("--n-tags", type=int, help="override the inferred count")

    output = parser.add_argument_group("output")
    output.add_argument("--out", help="result file, stdout when omitted")
    output.add_argument("--report", help="summary report (.md, or .html)")
    output.add_argument("--image-names", help="one image name per line")
    output.add_argument("--tag-names", help="one tag name per line")
    output.add_argument("--emit-metrics", action="store_true")
    output.add_argument(
        "--verify-oracle",
        action="store_true",
        help="cross-check against exhaustive search on small inputs",
    )
    output.add_argument("--log-level", help="overrides logging.level in the config")
    return parser


def options_from_args(args: argparse.Namespace, config: Config) -> RunOptions:
    solver_config = config.solver_config(
        damping=args.damping,
        max_iter=args.max_iter,
        conv_window=args.conv_window,
        lambda_image=args.lambda_image,
        lambda_tag=args.lambda_tag,
        theta=args.theta,
    )
    return RunOptions(
        algo=args.algo,
        image_sims=args.image_sims,
        tag_sims=args.tag_sims,
        assoc=args.assoc,
        config=solver_config,
        out=args.out,
        report=args.report,
        image_names=args.image_names,
        tag_names=args.tag_names,
        n_images=args.n_images,
        n_tags=args.n_tags,
        verify_oracle=args.verify_oracle,
        keep_user_diagonal=args.keep_user_diagonal,
        emit_metrics=args.emit_metrics,
        seed=args.seed,
    )


_EMPTY = ParsedEdges([], -1, -1)


def load_graph(opts: RunOptions) -> HeteroGraph:
    """Read the input files and prepare a scaled graph"""
    images = parse_edge_file(opts.image_sims)
    tags = parse_edge_file(opts.tag_sims) if opts.tag_sims else _EMPTY
    assoc = parse_edge_file(opts.assoc, ASSOCIATION) if opts.assoc else _EMPTY

    n = opts.n_images
    if n is None:
        n = max(images.n_nodes, assoc.max_index + 1)
    m = opts.n_tags
    if m is None:
        m = max(tags.n_nodes, assoc.max_second_index + 1)

    g = build_graph(images.edges, tags.edges, assoc.edges, n, m)
    if not opts.keep_user_diagonal:
        g = set_preferences(g, opts.config.lambda_image, opts.config.lambda_tag)
    g = scale_similarities(g)
    if opts.seed is not None:
        g = perturb_similarities(g, opts.seed)
    return g


def verify(opts: RunOptions, g: HeteroGraph, pot: HetPotential, result: SolveResult) -> str:
    """Compare a result with exhaustive search and, for h2mp, the vector engine.
    Inputs over the oracle's size limits are skipped with a warning."""
    try:
        labeling, breakdown = brute_force_optimum(g, pot)
    except OracleError as e:
        logger.warning(f"Skipping oracle check: {e}")
        return f"Skipped: {e}"

    found = result.objective.total
    if opts.algo == "ap":
        matches = list(labeling.c) == result.image_assignment
    else:
        matches = labeling == result.labeling
    lines = [
        f"Exhaustive optimum {breakdown.total:.12g}, found {found:.12g}: "
        + ("same labeling." if matches else "different labeling.")
    ]

    if opts.algo == "h2mp":
        try:
            equivalence = check_equivalence(
                g, pot, opts.config, min(max(result.iterations, 1), VERIFY_ITERATIONS)
            )
        except OracleError as e:
            logger.warning(f"Skipping vector engine check: {e}")
        else:
            lines.append(
                f"Vector engine deviation {equivalence.max_deviation:.3g} over "
                f"{equivalence.iterations} iterations; assignments "
                + ("agree." if equivalence.assignments_agree else "disagree.")
            )

    text = " ".join(lines)
    if matches:
        logger.info(text)
    else:
        logger.warning(text)
    return text


def _write_result(result: SolveResult, out: Optional[str]):
    document = result.to_json()
    if out is None:
        sys.stdout.write(document)
        return
    try:
        with open(out, "w", encoding="utf-8") as f:
            f.write(document)
    except OSError as e:
        raise ConfigError(f"Cannot write result to {out}: {e.strerror}")
    logger.info(f"Wrote result to {out}")


def _load_names(path: Optional[str]) -> Optional[List[str]]:
    return read_names(path) if path else None


def execute(opts: RunOptions) -> SolveResult:
    """Solve, write the result document and the optional report"""
    g = load_graph(opts)
    if opts.algo == "h2mp":
        pot = build_potentials(g, opts.config.theta)
        result = h2mp_run(g, pot, opts.config)
    else:
        result = ap_run(g, opts.config)
        g = g.image_only()
        pot = build_potentials(g, opts.config.theta)

    verification = verify(opts, g, pot, result) if opts.verify_oracle else None
    if not opts.emit_metrics:
        result = result.without_metrics()

    _write_result(result, opts.out)
    if opts.report:
        text = render_report(
            result,
            opts.algo,
            image_names=_load_names(opts.image_names),
            tag_names=_load_names(opts.tag_names),
            verification=verification,
        )
        write_report(opts.report, text)
    return result


def run(opts: RunOptions) -> int:
    """Run one invocation and map failures to exit codes"""
    try:
        execute(opts)
    except ConfigError as e:
        logger.error(e)
        return EXIT_USAGE
    except (EdgeFileError, GraphError) as e:
        logger.error(e)
        return EXIT_INPUT
    except (SolverError, OracleError, MetricError) as e:
        logger.error(e)
        return EXIT_SOLVER
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = Config(args.config)
        config.setup_logging(args.log_level)
        opts = options_from_args(args, config)
    except ConfigError as e:
        print(f"hybrid-ap: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return run(opts)


if __name__ == "__main__":
    sys.exit(main())
