"""Command line interface: ``slisphere <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure. Diagnostics go to stderr, tables to stdout.
"""

import argparse
from dataclasses import replace
from functools import lru_cache, partial
import logging
import math
import sys

from joblib import Parallel, delayed
import numpy as np
from tqdm import tqdm

from .baseline import pick_peaks, polar_line_profile, slix_directions, slix_fodf
from .config import Config, ProjectionConfig, load_config, write_config
from .errors import (
    ConfigError,
    InputError,
    NumericalError,
    SliSphereError,
    UndefinedMetricError,
)
from .estimation import solve_direct
from .forward_model import build_kernel_bank, mixture_directions
from .healpix import build_grid, cap_mask
from .io import (
    PatternStack,
    format_table,
    load_or_build_kernel_bank,
    read_checkpoint,
    read_fodfs,
    read_stack,
    write_checkpoint,
    write_fodfs,
    write_signals,
    write_stack,
    write_table,
)
from .metrics import PEAK_N_SIDE, acc, extract_fodf_peaks, jsd, match_peaks
from .network import predict, train
from .projection import (
    PatternCentroid,
    ScatteringPattern,
    find_centroid,
    find_centroid_or_center,
    project_to_sphere,
)
from .synthetic import generate_synthetic, groundtruth_fodf, random_spec

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger("slisphere")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def select_centroid(
    pattern: ScatteringPattern,
    sidecar: PatternCentroid | None,
    projection: ProjectionConfig,
) -> PatternCentroid:
    mode = projection.centroid
    if mode == "center":
        return pattern.center
    if mode == "sidecar" or (mode == "auto" and sidecar is not None):
        if sidecar is None:
            raise InputError("pattern has no centroid in the stack sidecar")
        return sidecar
    if mode == "smoothed-max":
        return find_centroid(pattern, projection.sigma_g)
    return find_centroid_or_center(pattern, projection.sigma_g)


@lru_cache(maxsize=4)
def _setup(config: Config):
    grid = build_grid(config.grid.input_n_side)
    mask = cap_mask(grid, config.grid.theta_max)
    directions = mixture_directions(config.grid.fodf_n_side)
    if config.runtime.kernel_cache:
        bank = load_or_build_kernel_bank(
            config.runtime.kernel_cache, directions, config.kernel, grid, mask
        )
    else:
        bank = build_kernel_bank(directions, config.kernel, grid, mask)
    return grid, mask, bank


def _ordered_map(function, tasks: list, workers: int, desc: str, quiet: bool) -> list:
    """Results of ``function`` over ``tasks`` in input order."""
    inputs = tqdm(tasks, desc=desc, disable=quiet)
    if workers <= 1 or len(tasks) <= 1:
        return [function(task) for task in inputs]
    return Parallel(n_jobs=workers, prefer="processes")(
        delayed(function)(task) for task in inputs
    )


def _project(config: Config, task):
    pattern, centroid = task
    grid, mask, _ = _setup(config)
    return project_to_sphere(
        pattern,
        select_centroid(pattern, centroid, config.projection),
        config.geometry,
        grid,
        mask,
        config.projection.normalize,
    )


def _fit(config: Config, task):
    index, pattern, centroid = task
    _, _, bank = _setup(config)
    signal = _project(config, (pattern, centroid))
    sequence = np.random.SeedSequence([config.runtime.seed, index])
    seed = int(sequence.generate_state(1)[0])
    options = replace(config.solve_options, seed=seed)
    return solve_direct(signal, bank, config.loss, options).fodf


def _synthesize(config: Config, index: int):
    grid, mask, _ = _setup(config)
    spec = random_spec(config.synth, index, config.kernel, config.geometry)
    shape = (config.synth.height, config.synth.width)
    pattern, _ = generate_synthetic(spec, grid, mask, shape)
    return spec, pattern


def _projected_stack(args, config: Config, stack: PatternStack) -> list:
    tasks = list(zip(stack.patterns, stack.centroids))
    return _ordered_map(
        partial(_project, config), tasks, config.runtime.workers, "project", args.quiet
    )


def run_config(args, config: Config):
    write_config(args.output, config)
    logger.info("wrote default configuration to %s", args.output)


def run_synth(args, config: Config):
    overrides = {
        name: getattr(args, name)
        for name in ("count", "seed", "noise", "crossing_angle", "max_fibres")
        if getattr(args, name) is not None
    }
    if args.in_plane:
        overrides["in_plane"] = True
    if "max_fibres" in overrides:
        overrides["min_fibres"] = min(config.synth.min_fibres, overrides["max_fibres"])
    config = replace(config, synth=replace(config.synth, **overrides))
    results = _ordered_map(
        partial(_synthesize, config),
        list(range(config.synth.count)),
        config.runtime.workers,
        "synth",
        args.quiet,
    )
    specs = tuple(spec for spec, _ in results)
    patterns = tuple(pattern for _, pattern in results)
    write_stack(
        args.output, PatternStack(patterns, specs, tuple(p.center for p in patterns))
    )
    logger.info("wrote %d synthetic patterns to %s", len(patterns), args.output)


def run_project(args, config: Config):
    signals = _projected_stack(args, config, read_stack(args.stack))
    write_signals(args.output, signals)
    logger.info("wrote %d projected signals to %s", len(signals), args.output)


def run_fit(args, config: Config):
    stack = read_stack(args.stack)
    if args.workers is not None:
        config = replace(config, runtime=replace(config.runtime, workers=args.workers))
    tasks = [
        (index, pattern, centroid)
        for index, (pattern, centroid) in enumerate(
            zip(stack.patterns, stack.centroids)
        )
    ]
    fodfs = _ordered_map(
        partial(_fit, config), tasks, config.runtime.workers, "fit", args.quiet
    )
    write_fodfs(args.output, fodfs)
    logger.info("wrote %d fODFs to %s", len(fodfs), args.output)


def run_train(args, config: Config):
    if args.epochs is not None:
        config = replace(config, train=replace(config.train, epochs=args.epochs))
    stack = read_stack(args.stack)
    _, _, bank = _setup(config)
    signals = _projected_stack(args, config, stack)
    result = train(
        signals,
        config.train,
        config.loss,
        bank,
        params=config.net_params,
        progress=not args.quiet,
    )
    for epoch, breakdown in enumerate(result.breakdowns):
        logger.info(
            "epoch %d: total %.6f (reconstruction %.6f, sparsity %.6f, "
            "non-negativity %.6f)",
            epoch,
            breakdown.l_total,
            breakdown.l_r,
            breakdown.l_s,
            breakdown.l_n,
        )
    write_checkpoint(args.checkpoint, result.net)
    if args.history:
        write_table(
            args.history,
            [
                {
                    "epoch": epoch,
                    "l_r": b.l_r,
                    "l_s": b.l_s,
                    "l_n": b.l_n,
                    "l_total": b.l_total,
                }
                for epoch, b in enumerate(result.breakdowns)
            ],
        )
    logger.info("wrote checkpoint to %s", args.checkpoint)


def run_predict(args, config: Config):
    net = read_checkpoint(args.checkpoint)
    net.eval()
    stack = read_stack(args.stack)
    fodfs = [
        predict(
            net,
            pattern,
            config.geometry,
            config.projection.sigma_g,
            config.projection.normalize,
            select_centroid(pattern, centroid, config.projection),
        )
        for pattern, centroid in tqdm(
            list(zip(stack.patterns, stack.centroids)),
            desc="predict",
            disable=args.quiet,
        )
    ]
    write_fodfs(args.output, fodfs)
    logger.info("wrote %d fODFs to %s", len(fodfs), args.output)


def _metric(function, *arguments) -> float:
    try:
        return function(*arguments)
    except UndefinedMetricError as e:
        logger.warning("%s", e)
        return math.nan


def _pair_row(index: int, fodf, reference) -> dict:
    reference_peaks = extract_fodf_peaks(reference, n_side=PEAK_N_SIDE)
    errors = match_peaks(
        extract_fodf_peaks(fodf, n_side=PEAK_N_SIDE),
        np.array([p.axis for p in reference_peaks]),
    )
    return {
        "index": index,
        "acc": _metric(acc, fodf.sh, reference.sh),
        "jsd": _metric(jsd, fodf, reference),
        "angular_error_deg": float(np.degrees(errors.mean())) if errors.size else 0.0,
    }


def _slix_reference(stack: PatternStack, config: Config, n_side: int, l_max: int):
    references = []
    for pattern, centroid in zip(stack.patterns, stack.centroids):
        centroid = select_centroid(pattern, centroid, config.projection)
        peaks = pick_peaks(polar_line_profile(pattern, centroid))
        references.append(slix_fodf(slix_directions(peaks), n_side, l_max))
    return references


def _mean(rows: list, key: str) -> float:
    values = [row[key] for row in rows if not math.isnan(row[key])]
    return float(np.mean(values)) if values else math.nan


def _summary(rows: list, keys: list) -> list:
    groups = [("all", rows)]
    if rows and "n_fibres" in rows[0]:
        groups.append(("single", [r for r in rows if r["n_fibres"] == 1]))
        groups.append(("crossing", [r for r in rows if r["n_fibres"] > 1]))
    return [
        {"region": name, "count": len(group), **{k: _mean(group, k) for k in keys}}
        for name, group in groups
    ]


def run_eval(args, config: Config):
    fodfs = read_fodfs(args.fodf)
    if not fodfs:
        raise InputError(f"{args.fodf} holds no fODFs")
    n_side = config.grid.fodf_n_side
    l_max = fodfs[0].sh.l_max
    keys = ["acc", "jsd", "angular_error_deg"]

    if args.groundtruth:
        stack = read_stack(args.groundtruth)
        if stack.count != len(fodfs):
            raise InputError(
                f"{len(fodfs)} fODFs but {stack.count} groundtruth patterns"
            )
        rows = []
        for index, (fodf, spec) in enumerate(zip(fodfs, stack.groundtruth)):
            if spec is None:
                raise InputError(f"pattern {index} has no groundtruth")
            truth = groundtruth_fodf(spec, n_side, l_max)
            peaks = extract_fodf_peaks(
                fodf, top_k=max(spec.n_fibres, 1), n_side=PEAK_N_SIDE
            )
            errors = match_peaks(peaks, spec.axes)
            rows.append(
                {
                    "index": index,
                    "n_fibres": spec.n_fibres,
                    "acc": _metric(acc, fodf.sh, truth.sh),
                    "jsd": _metric(jsd, fodf, truth),
                    "angular_error_deg": (
                        float(np.degrees(errors.mean())) if errors.size else 0.0
                    ),
                }
            )
    else:
        if args.reference:
            references = read_fodfs(args.reference)
        else:
            references = _slix_reference(read_stack(args.slix), config, n_side, l_max)
        if len(references) != len(fodfs):
            raise InputError(f"{len(fodfs)} fODFs but {len(references)} references")
        rows = [
            _pair_row(index, fodf, reference)
            for index, (fodf, reference) in enumerate(zip(fodfs, references))
        ]

    if args.csv:
        write_table(args.csv, rows)
    summary = _summary(rows, keys)
    print(format_table(rows))
    print()
    print(format_table(summary))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="slisphere",
        description="fODF reconstruction from scattered light imaging patterns",
    )
    parser.add_argument("-c", "--config", help="configuration file")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument(
        "-q", "--quiet", action="store_true", help="warnings only, no progress bars"
    )
    commands = parser.add_subparsers(
        dest="command", required=True, parser_class=_Parser
    )

    command = commands.add_parser("config", help="write the default configuration")
    command.add_argument("output")
    command.set_defaults(handler=run_config)

    command = commands.add_parser("synth", help="generate a synthetic pattern stack")
    command.add_argument("output")
    command.add_argument("--count", type=int)
    command.add_argument("--seed", type=int)
    command.add_argument("--noise", type=float)
    command.add_argument("--crossing-angle", type=float, help="degrees")
    command.add_argument("--max-fibres", type=int)
    command.add_argument("--in-plane", action="store_true")
    command.set_defaults(handler=run_synth)

    command = commands.add_parser("project", help="project patterns onto the sphere")
    command.add_argument("stack")
    command.add_argument("output")
    command.set_defaults(handler=run_project)

    command = commands.add_parser("fit", help="direct per-pattern fODF estimation")
    command.add_argument("stack")
    command.add_argument("output")
    command.add_argument("--workers", type=int)
    command.set_defaults(handler=run_fit)

    command = commands.add_parser("train", help="train the spherical U-Net")
    command.add_argument("stack")
    command.add_argument("checkpoint")
    command.add_argument("--epochs", type=int)
    command.add_argument("--history", help="per-epoch loss table (CSV)")
    command.set_defaults(handler=run_train)

    command = commands.add_parser("predict", help="fODFs from a trained network")
    command.add_argument("stack")
    command.add_argument("output")
    command.add_argument("--checkpoint", required=True)
    command.set_defaults(handler=run_predict)

    command = commands.add_parser("eval", help="compare fODF files")
    command.add_argument("fodf")
    against = command.add_mutually_exclusive_group(required=True)
    against.add_argument("--groundtruth", help="synthetic stack with groundtruth")
    against.add_argument("--reference", help="second fODF file")
    against.add_argument(
        "--slix", help="stack evaluated with the line-profile baseline"
    )
    command.add_argument("--csv", help="machine-readable table")
    command.set_defaults(handler=run_eval)
    return parser


def _configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.captureWarnings(True)
    for name in ("slisphere", "py.warnings"):
        target = logging.getLogger(name)
        target.handlers[:] = [handler]
        target.setLevel(level)
        target.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    _configure_logging(args.verbose, args.quiet)
    try:
        config = load_config(args.config) if args.config else Config()
        args.handler(args, config)
    except ConfigError as e:
        logger.error("configuration: %s", e)
        return EXIT_USAGE
    except NumericalError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (SliSphereError, OSError) as e:
        logger.error("%s", e)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
