"""
Batch experiment runner.

Scenario files are TOML::

    name = "swap4"

    [[agents]]
    start = [3.0, 0.0, 1.0]
    goal = [-3.0, 0.0, 1.0]
    beta = 0.05

    [solver]
    samples_per_response = 20000

A run sweeps the ego agent's beta and the per-response sample budget; every
(beta, K) pair is a cell. Each cell gets its own directory holding
``trajectory.jsonl`` and ``metrics.jsonl``; the output root holds
``aggregates.jsonl``, ``manifest.json`` and ``scenario.resolved.toml``.
Every line-delimited file starts with a header record.
"""

import argparse
import asyncio
import hashlib
import json
import logging
import platform
import re
import sys
import tomllib
from importlib import resources
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy
import tomli_w
from pydantic import BaseModel, Field, ValidationError

from . import __version__
from .errors import ScenarioError
from .models import EpisodeResult, ExperimentSpec, Metrics, RunnerConfig, ScenarioConfig
from .simulation import aggregate, convergence_rate, run_episode

logger = logging.getLogger(__name__)

BUNDLED_PREFIX = "bundled:"
SCENARIO_SUFFIX = ".scenario"
SIGNIFICANT_DIGITS = 9
FORMAT_VERSION = 1


# ============================================================================
# Scenario files
# ============================================================================


def _dotted(loc: Sequence[Any]) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def _line_of(text: str, loc: Sequence[Any]) -> Optional[int]:
    """1-based line where the key at ``loc`` is written, if it is"""
    lines = text.splitlines()
    start, found = 0, None
    parts = list(loc)
    i = 0
    while i < len(parts):
        part = parts[i]
        if isinstance(part, int):
            i += 1
            continue
        name = re.escape(str(part))
        if i + 1 < len(parts) and isinstance(parts[i + 1], int):
            header = re.compile(rf"^\s*\[\[\s*{name}\s*\]\]")
            hits = [n for n in range(start, len(lines)) if header.match(lines[n])]
            if len(hits) <= parts[i + 1]:
                break
            found = start = hits[parts[i + 1]]
            i += 2
            continue
        pattern = re.compile(rf"^\s*(\[\s*{name}\s*\]|{name}\s*=)")
        hit = next((n for n in range(start, len(lines)) if pattern.match(lines[n])), None)
        if hit is None:
            break
        found = start = hit
        i += 1
    return None if found is None else found + 1


def _scenario_error(e: ValidationError, text: str) -> ScenarioError:
    err = e.errors()[0]
    key = _dotted(err["loc"])
    if err["type"] == "missing":
        return ScenarioError(f"missing field: {key}", key=key)
    line = _line_of(text, err["loc"])
    if err["type"] == "extra_forbidden":
        return ScenarioError(f"unknown key: {key}", key=key, line=line)
    if not key:
        return ScenarioError(f"invalid scenario: {err['msg']}")
    return ScenarioError(f"invalid value for {key}: {err['msg']}", key=key, line=line)


def parse_scenario_text(text: str, name: str = "scenario") -> ScenarioConfig:
    """
    Parse and validate scenario TOML.

    Args:
        text: TOML document
        name: scenario name used when the document sets none

    Raises:
        ScenarioError: naming the offending key and, when present, its line
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
    data.setdefault("name", name)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise _scenario_error(e, text) from e


def parse_scenario(path) -> ScenarioConfig:
    """Read, parse and validate a scenario file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    return parse_scenario_text(text, name=path.stem)


def dump_scenario(scenario: ScenarioConfig) -> str:
    """Resolved scenario, every default filled in, as TOML"""
    return tomli_w.dumps(scenario.model_dump(mode="json", exclude_none=True))


def bundled_scenarios() -> List[str]:
    folder = resources.files("brnash") / "scenarios"
    return sorted(
        p.name.removesuffix(SCENARIO_SUFFIX)
        for p in folder.iterdir()
        if p.name.endswith(SCENARIO_SUFFIX)
    )


def load_bundled_scenario(name: str) -> ScenarioConfig:
    """
    Load one of the scenarios shipped with the package.

    Examples:
        >>> load_bundled_scenario("swap6").n_agents
        6
    """
    resource = resources.files("brnash") / "scenarios" / f"{name}{SCENARIO_SUFFIX}"
    if not resource.is_file():
        raise ScenarioError(
            f"no bundled scenario {name!r}; available: {', '.join(bundled_scenarios())}"
        )
    return parse_scenario_text(resource.read_text(encoding="utf-8"), name=name)


def resolve_scenario(reference: str) -> ScenarioConfig:
    """A file path, or ``bundled:<name>`` for a shipped scenario"""
    if reference.startswith(BUNDLED_PREFIX):
        return load_bundled_scenario(reference.removeprefix(BUNDLED_PREFIX))
    return parse_scenario(reference)


def scenario_hash(scenario: ScenarioConfig) -> str:
    """sha256 of the canonical JSON form of the resolved scenario"""
    canonical = json.dumps(
        scenario.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ============================================================================
# Output records
# ============================================================================


def round_floats(value: Any, digits: int = SIGNIFICANT_DIGITS) -> Any:
    """Round every float in a nested structure to ``digits`` significant digits"""
    if isinstance(value, float):
        return float(f"{value:.{digits}g}")
    if isinstance(value, dict):
        return {k: round_floats(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_floats(v, digits) for v in value]
    return value


def _dumps(record: Dict[str, Any]) -> str:
    return json.dumps(round_floats(record), sort_keys=True, separators=(",", ":"))


def _write_jsonl(path: Path, header: Dict[str, Any], rows: Sequence[Dict[str, Any]]):
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps({"header": header}) + "\n")
        for row in rows:
            f.write(_dumps(row) + "\n")


def _read_jsonl(path: Path) -> tuple[Dict[str, Any], List[Dict[str, Any]]]:
    with path.open(encoding="utf-8") as f:
        records = [json.loads(line) for line in f if line.strip()]
    if not records or "header" not in records[0]:
        raise ValueError(f"{path} has no header record")
    return records[0]["header"], records[1:]


class Cell(BaseModel):
    """One point of the (ego beta, sample budget) sweep"""

    index: int = Field(ge=0)
    ego_beta: Optional[float] = Field(
        default=None, description="Ego beta; None keeps the scenario's"
    )
    samples: int = Field(ge=1, description="Samples per best response")

    @property
    def name(self) -> str:
        return f"cell-{self.index:03d}"

    def coordinates(self) -> Dict[str, Any]:
        return {"cell": self.name, "ego_beta": self.ego_beta, "samples": self.samples}


def build_cells(spec: ExperimentSpec, scenario: ScenarioConfig) -> List[Cell]:
    """
    Cells of the sweep in (ego beta, samples) order.

    With ``spec.cells`` only those indices are kept; they keep the names they
    have in the full sweep, so re-running one reproduces its rows.

    Raises:
        ScenarioError: if a selected index is outside the sweep
    """
    betas: List[Optional[float]] = list(spec.ego_betas) if spec.ego_betas else [None]
    budgets = spec.samples or [scenario.solver.samples_per_response]
    cells = [
        Cell(index=n, ego_beta=beta, samples=k)
        for n, (beta, k) in enumerate(product(betas, budgets))
    ]
    if spec.cells is None:
        return cells
    missing = sorted(set(spec.cells) - {c.index for c in cells})
    if missing:
        raise ScenarioError(
            f"cell {missing[0]} out of range for a sweep of {len(cells)} cells",
            key="cells",
        )
    wanted = set(spec.cells)
    return [c for c in cells if c.index in wanted]


def cell_scenario(
    base: ScenarioConfig, cell: Cell, ego_index: int
) -> ScenarioConfig:
    """``base`` with the cell's ego beta and sample budget applied"""
    data = base.model_dump()
    if cell.ego_beta is not None:
        data["agents"][ego_index]["beta"] = cell.ego_beta
    data["solver"]["samples_per_response"] = cell.samples
    data["ego_index"] = ego_index
    return ScenarioConfig.model_validate(data)


def trajectory_rows(result: EpisodeResult, stamp: Dict[str, Any]) -> List[Dict[str, Any]]:
    rows = []
    n_steps = result.executed_actions.shape[0]
    for t, positions in enumerate(result.trajectory):
        row = {
            **stamp,
            "run": result.run_index,
            "t": t,
            "positions": positions.tolist(),
            "actions": result.executed_actions[t].tolist() if t < n_steps else None,
        }
        if t < n_steps:
            diag = result.diagnostics[t]
            row["ibr_iterations"] = diag.iterations
            row["converged"] = diag.converged
        rows.append(row)
    return rows


def metrics_row(result: EpisodeResult, stamp: Dict[str, Any]) -> Dict[str, Any]:
    return {
        **stamp,
        "run": result.run_index,
        "metrics": result.metrics.model_dump(mode="json"),
        "convergence_rate": convergence_rate([result]),
    }


def aggregate_row(
    stamp: Dict[str, Any],
    metrics_rows: Sequence[Dict[str, Any]],
    ego_index: Optional[int],
) -> Dict[str, Any]:
    """Aggregate record of one cell, computed from its (rounded) metrics rows"""
    ok = [round_floats(r) for r in metrics_rows if "metrics" in r]
    if not ok:
        return {**stamp, "error": "every run failed"}
    table = aggregate([Metrics.model_validate(r["metrics"]) for r in ok], ego_index)
    return {
        **stamp,
        "aggregate": table.model_dump(mode="json"),
        "convergence_rate": float(np.mean([r["convergence_rate"] for r in ok])),
    }


# ============================================================================
# Experiment runner
# ============================================================================


class CellOutcome(BaseModel):
    cell: Cell
    runs_ok: int = 0
    errors: List[Dict[str, Any]] = Field(default_factory=list)
    aggregate: Dict[str, Any] = Field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.runs_ok == 0


def _choose_seed(spec: ExperimentSpec, scenario: ScenarioConfig) -> int:
    if spec.seed is not None:
        return spec.seed
    if spec.deterministic:
        return scenario.episode.base_seed
    return int(np.random.SeedSequence().entropy % 2**64)


async def _run_cell(
    scenario: ScenarioConfig,
    cell: Cell,
    seed: int,
    digest: str,
    out: Path,
    semaphore: asyncio.Semaphore,
) -> CellOutcome:
    async def _run(run_index: int) -> EpisodeResult:
        async with semaphore:
            return await asyncio.to_thread(run_episode, scenario, run_index, seed)

    logger.info("Cell %s: %d runs", cell.name, scenario.episode.runs)
    results = await asyncio.gather(
        *(_run(r) for r in range(scenario.episode.runs)), return_exceptions=True
    )

    stamp = {"scenario_hash": digest, "seed": seed, **cell.coordinates()}
    outcome = CellOutcome(cell=cell)
    traj_rows: List[Dict[str, Any]] = []
    run_rows: List[Dict[str, Any]] = []
    for run_index, result in enumerate(results):
        if isinstance(result, BaseException):
            logger.warning("Cell %s run %d failed: %s", cell.name, run_index, result)
            error = {"run": run_index, "error": str(result)}
            outcome.errors.append(error)
            run_rows.append({**stamp, **error})
            continue
        outcome.runs_ok += 1
        traj_rows.extend(trajectory_rows(result, stamp))
        run_rows.append(metrics_row(result, stamp))

    header = {
        "format_version": FORMAT_VERSION,
        "scenario_hash": digest,
        "seed": seed,
        "std_estimator": "population",
        "significant_digits": SIGNIFICANT_DIGITS,
        **cell.coordinates(),
    }
    folder = out / cell.name
    folder.mkdir(parents=True, exist_ok=True)
    _write_jsonl(folder / "trajectory.jsonl", header, traj_rows)
    _write_jsonl(folder / "metrics.jsonl", header, run_rows)
    outcome.aggregate = aggregate_row(stamp, run_rows, scenario.ego_index)
    logger.info(
        "Cell %s: %d ok, %d failed", cell.name, outcome.runs_ok, len(outcome.errors)
    )
    return outcome


def _manifest(
    spec: ExperimentSpec,
    base: ScenarioConfig,
    digest: str,
    seed: int,
    outcomes: Sequence[CellOutcome],
) -> Dict[str, Any]:
    cells = []
    for outcome in outcomes:
        entry: Dict[str, Any] = {
            **outcome.cell.coordinates(),
            "runs_ok": outcome.runs_ok,
            "errors": outcome.errors,
        }
        table = outcome.aggregate.get("aggregate")
        if table is not None:
            entry["safety_rate"] = table["safety_rate_mean"]
            entry["convergence_rate"] = outcome.aggregate["convergence_rate"]
        cells.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "versions": {
            "brnash": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "scenario_source": spec.scenario,
        "scenario": base.model_dump(mode="json"),
        "scenario_hash": digest,
        "seed": seed,
        "deterministic": spec.deterministic,
        "ego_index": spec.ego_index,
        "std_estimator": "population",
        "cells": cells,
    }


async def run_experiment(spec: ExperimentSpec) -> int:
    """
    Run every cell of ``spec`` and write its output files.

    Runs are dispatched to ``spec.threads`` worker threads. Each run depends
    only on the seed and its run index, so in deterministic mode the files
    are identical for any thread count.

    Returns:
        0 if at least one cell produced results, 1 if every cell failed

    Raises:
        ScenarioError: if the scenario cannot be loaded or the sweep does not
            fit it
    """
    scenario = resolve_scenario(spec.scenario)
    if spec.ego_index >= scenario.n_agents:
        raise ScenarioError(
            f"ego index {spec.ego_index} out of range for {scenario.n_agents} agents",
            key="ego_index",
        )
    seed = _choose_seed(spec, scenario)

    data = scenario.model_dump()
    data["episode"]["base_seed"] = seed
    data["solver"]["deterministic"] = spec.deterministic
    data["ego_index"] = spec.ego_index
    if spec.runs is not None:
        data["episode"]["runs"] = spec.runs
    base = ScenarioConfig.model_validate(data)
    digest = scenario_hash(base)
    cells = build_cells(spec, base)

    spec.out.mkdir(parents=True, exist_ok=True)
    (spec.out / "scenario.resolved.toml").write_text(
        dump_scenario(base), encoding="utf-8"
    )
    logger.info(
        "Experiment %r: %d cells x %d runs, seed %d",
        base.name,
        len(cells),
        base.episode.runs,
        seed,
    )
    semaphore = asyncio.Semaphore(spec.threads)
    gathered = await asyncio.gather(
        *(
            _run_cell(cell_scenario(base, cell, spec.ego_index), cell, seed, digest, spec.out, semaphore)  # noqa: E501
            for cell in cells
        ),
        return_exceptions=True,
    )

    outcomes: List[CellOutcome] = []
    for cell, outcome in zip(cells, gathered, strict=True):
        if isinstance(outcome, BaseException):
            logger.warning("Cell %s failed: %s", cell.name, outcome)
            outcome = CellOutcome(
                cell=cell,
                errors=[{"error": str(outcome)}],
                aggregate={"error": str(outcome)},
            )
        outcomes.append(outcome)

    _write_jsonl(
        spec.out / "aggregates.jsonl",
        {
            "format_version": FORMAT_VERSION,
            "scenario_hash": digest,
            "seed": seed,
            "std_estimator": "population",
            "ego_index": spec.ego_index,
        },
        [
            outcome.aggregate or {"cell": outcome.cell.name, "error": "no output"}
            for outcome in outcomes
        ],
    )
    manifest = _manifest(spec, base, digest, seed, outcomes)
    (spec.out / "manifest.json").write_text(
        json.dumps(round_floats(manifest), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info("Wrote %d cells to %s", len(outcomes), spec.out)

    if all(o.failed for o in outcomes):
        logger.error("Every cell failed")
        return 1
    return 0


def recompute_aggregates(out_dir) -> List[Dict[str, Any]]:
    """
    Rebuild the aggregate rows of a finished experiment from its per-cell
    metrics files alone.
    """
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    rows = []
    for entry in manifest["cells"]:
        header, metrics_rows = _read_jsonl(out / entry["cell"] / "metrics.jsonl")
        stamp = {
            "scenario_hash": header["scenario_hash"],
            "seed": header["seed"],
            "cell": header["cell"],
            "ego_beta": header["ego_beta"],
            "samples": header["samples"],
        }
        rows.append(round_floats(aggregate_row(stamp, metrics_rows, manifest["ego_index"])))
    return rows


# ============================================================================
# Command line
# ============================================================================


def _integer(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text.strip()!r} is not an integer")
    return int(value)


def _number_list(kind):
    def parse(text: str):
        convert = _integer if kind is int else kind
        try:
            return [convert(v) for v in text.split(",") if v.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list: {e}")

    return parse


def build_parser(defaults: RunnerConfig) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brnash-run",
        description="Bounded-rational Nash navigation experiments",
    )
    parser.add_argument(
        "--scenario",
        required=True,
        help="Scenario file, or bundled:<name> (" + ", ".join(bundled_scenarios()) + ")",
    )
    parser.add_argument(
        "--ego-beta", type=_number_list(float), help="Comma-separated ego betas to sweep"
    )
    parser.add_argument(
        "--samples", type=_number_list(int), help="Comma-separated sample budgets K"
    )
    parser.add_argument("--runs", type=int, help="Runs per cell")
    parser.add_argument("--seed", type=int, help="Base seed (u64)")
    parser.add_argument(
        "--threads",
        type=int,
        default=defaults.threads,
        help="Worker threads (default: $BRNASH_THREADS or 1)",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="Seed from the scenario unless --seed is given",
    )
    parser.add_argument("--out", type=Path, required=True, help="Output directory")
    parser.add_argument("--ego-index", type=int, default=0, help="Ego agent index")
    parser.add_argument(
        "--cell",
        type=_number_list(int),
        help="Comma-separated cell indices to (re-)run; names match the full sweep",
    )
    parser.add_argument(
        "--log-level",
        default=defaults.log_level,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        help="Log level (default: $BRNASH_LOG_LEVEL or WARNING)",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point for ``brnash-run``"""
    defaults = RunnerConfig.from_env()
    args = build_parser(defaults).parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        spec = ExperimentSpec(
            scenario=args.scenario,
            ego_betas=args.ego_beta,
            samples=args.samples,
            runs=args.runs,
            seed=args.seed,
            threads=args.threads,
            deterministic=args.deterministic,
            out=args.out,
            ego_index=args.ego_index,
            cells=args.cell,
        )
        return asyncio.run(run_experiment(spec))
    except (ValidationError, ScenarioError) as e:
        print(f"brnash-run: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
