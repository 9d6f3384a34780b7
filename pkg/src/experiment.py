"""Iteration-count study: gamma sweep x refinement sweep x solver variants."""
import argparse
import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from .common import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    IndefinitePreconditionerError,
    ConfigError,
    OutputError,
    SolverError,
    env_float,
    env_int,
    env_list,
    env_str,
    log_banner,
    setup_logger,
)
from .krylov import pcg
from .mesh import dump_mesh
from .multigrid import MultigridConfig, discretize, setup

APP_NAME = "SVMG"
logger = setup_logger(APP_NAME)

# variant name -> (relaxation, transfer)
VARIANTS: Dict[str, Tuple[str, str]] = {
    "robust-robust": ("asm", "robust"),
    "robust-standard": ("asm", "standard"),
    "jacobi-robust": ("jacobi", "robust"),
    "jacobi-standard": ("jacobi", "standard"),
}
DEFAULT_GAMMAS = "0,1,10,100,1000,10000,1000000,100000000"
CSV_HEADER = ["variant", "refinement", "dofs", "gamma", "iterations", "converged", "seconds"]
FORMATS = ("csv", "json")


class ExperimentConfig(BaseModel):
    coarse_n: int = Field(4, ge=1)
    refinements: List[int] = Field(default_factory=lambda: [1, 2, 3])
    gammas: List[float] = Field(default_factory=lambda: [float(g) for g in DEFAULT_GAMMAS.split(",")])
    variants: List[str] = Field(default_factory=lambda: list(VARIANTS))
    rtol: float = Field(1e-8, gt=0.0)
    maxit: int = Field(200, ge=1)
    seed: int = 0
    format: str = "csv"
    out: Optional[Path] = Path("results.csv")
    smoothing: str = "chebyshev"
    smoothing_steps: int = Field(2, ge=1)
    cycle_index: int = Field(2, ge=1, le=2)
    parallel: bool = False
    workers: Optional[int] = None
    timings: bool = True
    dump_mesh: Optional[Path] = None

    @field_validator("refinements")
    @classmethod
    def check_refinements(cls, value: List[int]) -> List[int]:
        if not value or any(r < 1 for r in value):
            raise ValueError("refinements must be a non-empty list of integers >= 1")
        return value

    @field_validator("gammas")
    @classmethod
    def check_gammas(cls, value: List[float]) -> List[float]:
        if not value or any(g < 0.0 for g in value):
            raise ValueError("gammas must be a non-empty list of values >= 0")
        return value

    @field_validator("variants")
    @classmethod
    def check_variants(cls, value: List[str]) -> List[str]:
        unknown = [v for v in value if v not in VARIANTS]
        if not value or unknown:
            raise ValueError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
        return value

    @field_validator("format")
    @classmethod
    def check_format(cls, value: str) -> str:
        if value not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        return value


class ResultRow(BaseModel):
    variant: str
    refinement: int
    dofs: int
    gamma: float
    iterations: Union[int, str]
    converged: bool
    seconds: float


def _solve_refinement(config: ExperimentConfig, refinement: int) -> List[ResultRow]:
    """All variants and gammas on one refinement, sharing the assembled levels."""
    discretization = discretize(config.coarse_n, refinement + 1)
    b = discretization.load_vector()
    dofs = discretization.finest.dim
    rows = []
    for variant in config.variants:
        relaxation, transfer = VARIANTS[variant]
        for gamma in config.gammas:
            start = time.perf_counter()
            mg_config = MultigridConfig(
                coarse_n=config.coarse_n,
                levels=refinement + 1,
                gamma=gamma,
                relaxation=relaxation,
                transfer=transfer,
                smoothing=config.smoothing,
                smoothing_steps=config.smoothing_steps,
                cycle_index=config.cycle_index,
                seed=config.seed,
            )
            hierarchy = setup(mg_config, discretization)
            try:
                _, report = pcg(hierarchy.fine_operator, hierarchy.apply, b, rtol=config.rtol, maxit=config.maxit)
                iterations = report.iterations if report.converged else report.iterations_label
                converged = report.converged
            except IndefinitePreconditionerError as e:
                # breakdown counts as non-convergence
                logger.warning(f"{variant} ref={refinement} gamma={gamma:g}: CG breakdown, {e.detail}")
                iterations, converged = f">{config.maxit}", False
            seconds = time.perf_counter() - start
            row = ResultRow(
                variant=variant,
                refinement=refinement,
                dofs=dofs,
                gamma=gamma,
                iterations=iterations,
                converged=converged,
                seconds=seconds if config.timings else 0.0,
            )
            logger.info(
                f"{variant:<16} ref={refinement} dofs={dofs} gamma={gamma:<8g} "
                f"its={row.iterations} ({seconds:.2f}s)"
            )
            logger.debug(f"Timing breakdown: {hierarchy.timings.summary()}")
            rows.append(row)
    return rows


def run(config: ExperimentConfig) -> List[ResultRow]:
    log_banner(logger, "Multigrid Experiment Configuration", [
        f"Coarse grid: {config.coarse_n}x{config.coarse_n}",
        f"Refinements: {config.refinements}",
        f"Gammas: {[f'{g:g}' for g in config.gammas]}",
        f"Variants: {config.variants}",
        f"Stopping: rtol={config.rtol:g}, maxit={config.maxit}",
        f"Smoothing: {config.smoothing_steps} {config.smoothing} steps, cycle index {config.cycle_index}",
        f"Mode: {'parallel' if config.parallel else 'serial'}, seed {config.seed}",
    ])

    if config.dump_mesh is not None:
        finest = discretize(config.coarse_n, max(config.refinements) + 1).mesh.levels[-1].mesh
        dump_mesh(finest, config.dump_mesh)

    if config.parallel and len(config.refinements) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_solve_refinement, [config] * len(config.refinements), config.refinements))
    else:
        chunks = [_solve_refinement(config, refinement) for refinement in config.refinements]

    # canonical order: variant, refinement, gamma as configured
    rows = [row for chunk in chunks for row in chunk]
    order = {v: i for i, v in enumerate(config.variants)}
    rows.sort(key=lambda row: (order[row.variant], config.refinements.index(row.refinement)))
    return rows


def _format_row(row: ResultRow) -> Dict[str, Union[str, int, float, bool]]:
    return {
        "variant": row.variant,
        "refinement": row.refinement,
        "dofs": row.dofs,
        "gamma": row.gamma,
        "iterations": row.iterations,
        "converged": row.converged,
        "seconds": row.seconds,
    }


def render(rows: List[ResultRow], format: str = "csv") -> str:
    if format == "json":
        return json.dumps([_format_row(row) for row in rows], indent=2) + "\n"
    if format != "csv":
        raise ConfigError(f"unknown output format {format!r}")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            row.variant,
            row.refinement,
            row.dofs,
            repr(row.gamma),
            row.iterations,
            "true" if row.converged else "false",
            repr(row.seconds),
        ])
    return buffer.getvalue()


def emit(rows: List[ResultRow], format: str, path) -> Path:
    path = Path(path)
    try:
        path.write_text(render(rows, format))
    except OSError as e:
        logger.error(f"Cannot write results to {path}: {e}")
        raise OutputError(detail=f"cannot write {path}: {e}")
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def _parse_iterations(value: Union[str, int]) -> Union[int, str]:
    if isinstance(value, int):
        return value
    return value if value.startswith(">") else int(value)


def parse(path, format: str = "csv") -> List[ResultRow]:
    text = Path(path).read_text()
    if format == "json":
        return [ResultRow(**{**item, "iterations": _parse_iterations(item["iterations"])}) for item in json.loads(text)]
    rows = []
    for item in csv.DictReader(io.StringIO(text)):
        rows.append(ResultRow(
            variant=item["variant"],
            refinement=int(item["refinement"]),
            dofs=int(item["dofs"]),
            gamma=float(item["gamma"]),
            iterations=_parse_iterations(item["iterations"]),
            converged=item["converged"] == "true",
            seconds=float(item["seconds"]),
        ))
    return rows


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _str_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    """CLI flags; defaults come from SVMG_* environment variables."""
    parser = argparse.ArgumentParser(
        prog="run_experiment",
        description="Multigrid iteration counts for nearly incompressible elasticity",
    )
    parser.add_argument("--coarse-n", type=int, default=env_int(APP_NAME, "COARSE_N", 4))
    parser.add_argument("--refinements", type=_int_list, default=env_str(APP_NAME, "REFINEMENTS", "1,2,3"))
    parser.add_argument("--gammas", type=_float_list, default=env_str(APP_NAME, "GAMMAS", DEFAULT_GAMMAS))
    parser.add_argument("--variants", type=_str_list, default=",".join(env_list(APP_NAME, "VARIANTS", ",".join(VARIANTS))))
    parser.add_argument("--rtol", type=float, default=env_float(APP_NAME, "RTOL", 1e-8))
    parser.add_argument("--maxit", type=int, default=env_int(APP_NAME, "MAXIT", 200))
    parser.add_argument("--seed", type=int, default=env_int(APP_NAME, "SEED", 0))
    parser.add_argument("--format", default=env_str(APP_NAME, "FORMAT", "csv"))
    parser.add_argument("--out", default=env_str(APP_NAME, "OUT", "results.csv"))
    parser.add_argument("--smoothing", default=env_str(APP_NAME, "SMOOTHING", "chebyshev"))
    parser.add_argument("--smoothing-steps", type=int, default=env_int(APP_NAME, "SMOOTHING_STEPS", 2))
    parser.add_argument("--cycle-index", type=int, default=env_int(APP_NAME, "CYCLE_INDEX", 2))
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--serial", dest="parallel", action="store_false")
    mode.add_argument("--parallel", dest="parallel", action="store_true")
    parser.set_defaults(parallel=False)
    parser.add_argument("--workers", type=int, default=env_int(APP_NAME, "WORKERS", os.cpu_count() or 1))
    parser.add_argument("--no-timings", dest="timings", action="store_false")
    parser.add_argument("--dump-mesh", default=None)
    return parser


def parse_config(argv: Optional[List[str]] = None) -> ExperimentConfig:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if not e.code:
            raise  # --help
        raise ConfigError(f"invalid command line (argparse exit {e.code})")

    try:
        return ExperimentConfig(**vars(args))
    except ValidationError as e:
        raise ConfigError(str(e))


def main(argv: Optional[List[str]] = None) -> int:
    try:
        config = parse_config(argv)
        rows = run(config)
        emit(rows, config.format, config.out)
    except ConfigError as e:
        logger.error(f"Configuration error: {e.detail}")
        return EXIT_CONFIG
    except SolverError as e:
        logger.error(f"Numerical failure: {e.detail}")
        return EXIT_NUMERICAL
    return EXIT_OK
