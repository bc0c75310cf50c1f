"""Pipeline orchestrator.

Runs the stages replay → classify → respond → svd → fit → overlap → null →
report over a validated PipelineConfig. Each stage reads its inputs from
and writes its outputs to the bundle directory, so a stage can be rerun or
inspected on its own. A stage whose fingerprint (its config slice plus the
hashes of its input files) matches the previous manifest, and whose
outputs are unchanged on disk, is skipped.
"""

import hashlib
import json
import logging
import shutil
import time
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts
from .classify import PairWeights, classify_market
from .config import PipelineConfig
from .constants import (
    TOOL_NAME,
    VERSION,
    ExitCode,
    OverlapKind,
    VectorSide,
    XKind,
)
from .events import read_events
from .exceptions import DataIntegrityError, ImpactLabError, StageError
from .linalg import SvdResult, decompose
from .output import OutputFormatter
from .overlap import (
    NullComparison,
    comparison_frame,
    decompose_overlap,
    fit_pooled,
    heatmap_triples,
    overlaps_from_responses,
    run_null_replicates,
)
from .replay import replay
from .response import compute_responses, prepare_inputs
from .statfit import collect_entries, density_table, fit_normal

logger = logging.getLogger(__name__)

STAGES: tuple[str, ...] = (
    "replay", "classify", "respond", "svd", "fit", "overlap", "null", "report",
)
MANIFEST_NAME = "run_manifest.json"
TIMINGS_NAME = "run_timings.json"


@contextmanager
def stage_context(stage: str, identity: str | None = None) -> Iterator[None]:
    """Re-raises package errors as StageError naming the stage and identity."""
    try:
        yield
    except StageError:
        raise
    except ImpactLabError as exc:
        raise StageError(stage, identity, exc) from exc


@dataclass
class ReportBundle:
    """Result of a pipeline run.

    Attributes:
        output_dir: Bundle root.
        files: Relative path → sha256 of every emitted file.
        statuses: Stage → 'done', 'cached' or 'skipped'.
        timings: Stage → wall-clock seconds.
    """

    output_dir: Path
    files: dict[str, str] = field(default_factory=dict)
    statuses: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return self.output_dir / MANIFEST_NAME

    def paths(self, prefix: str = "") -> list[Path]:
        return [self.output_dir / rel for rel in sorted(self.files) if rel.startswith(prefix)]


def _day_prefix(index: int) -> str:
    return f"day{index + 1:02d}"


def _fit_key(name: str, side: VectorSide) -> str:
    return f"{name}_{side.value}"


class PipelineRunner:
    """Executes the stages of one run with manifest-based caching.

    Args:
        config: Validated pipeline configuration.
        output: Formatter for per-stage progress lines.
    """

    def __init__(self, config: PipelineConfig, output: OutputFormatter | None = None) -> None:
        self._config = config
        self._output = output or OutputFormatter()
        self._root = Path(config.output_dir)
        self._previous = self._load_previous_manifest()
        self._stages: dict[str, dict] = {}
        self._bundle = ReportBundle(self._root)

    # Bookkeeping

    def _load_previous_manifest(self) -> dict:
        path = self._root / MANIFEST_NAME
        if not path.is_file():
            return {}
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            logger.warning("Ignoring unreadable manifest %s", path)
            return {}

    def _rel(self, path: Path) -> str:
        return Path(path).resolve().relative_to(self._root.resolve()).as_posix()

    def _fingerprint(self, name: str, config_slice: dict, inputs: Sequence[Path]) -> str:
        payload = {
            "stage": name,
            "version": VERSION,
            "config": config_slice,
            "inputs": {str(p): artifacts.sha256_file(p) for p in inputs},
        }
        encoded = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()

    def _cached_outputs(self, name: str, fingerprint: str) -> list[Path] | None:
        previous = self._previous.get("stages", {}).get(name)
        if not previous or previous.get("fingerprint") != fingerprint:
            return None
        paths = []
        for rel, digest in previous.get("outputs", {}).items():
            path = self._root / rel
            if not path.is_file() or artifacts.sha256_file(path) != digest:
                return None
            paths.append(path)
        return paths

    def _execute(
        self,
        name: str,
        config_slice: dict,
        inputs: Sequence[Path],
        produce: Callable[[Path], list[Path]],
    ) -> list[Path]:
        """Runs one stage unless its cached outputs are still valid."""
        started = time.perf_counter()
        fingerprint = self._fingerprint(name, config_slice, inputs)
        outputs = self._cached_outputs(name, fingerprint)
        if outputs is not None:
            status = "cached"
        else:
            stage_dir = self._root / name
            if stage_dir.exists():
                shutil.rmtree(stage_dir)
            stage_dir.mkdir(parents=True)
            with stage_context(name):
                outputs = produce(stage_dir)
            status = "done"
        elapsed = time.perf_counter() - started
        self._record(name, status, elapsed, fingerprint, outputs)
        return outputs

    def _record(
        self, name: str, status: str, elapsed: float, fingerprint: str | None, outputs: list[Path]
    ) -> None:
        digests = {self._rel(p): artifacts.sha256_file(p) for p in sorted(outputs)}
        if fingerprint is not None:
            self._stages[name] = {"fingerprint": fingerprint, "outputs": digests}
        self._bundle.files.update(digests)
        self._bundle.statuses[name] = status
        self._bundle.timings[name] = elapsed
        logger.info("Stage %s %s in %.2fs", name, status, elapsed)
        self._output.stage(name, status, elapsed)

    def _skip(self, name: str, reason: str) -> None:
        logger.info("Stage %s skipped: %s", name, reason)
        self._bundle.statuses[name] = "skipped"
        self._bundle.timings[name] = 0.0
        self._output.stage(name, "skipped")

    # Stages

    def run(self) -> ReportBundle:
        """Runs every stage in order.

        Raises:
            StageError: Naming the failing stage; its exit code is the cause's.
        """
        self._root.mkdir(parents=True, exist_ok=True)
        replay_files = self._replay()
        self._classify(replay_files)
        response_files = self._respond(replay_files)
        svd_files = self._svd(response_files)
        self._fit(svd_files)
        if set(XKind) <= set(self._config.x_kinds):
            overlap_files = self._overlap(response_files)
            self._null(response_files, overlap_files)
        else:
            self._skip("overlap", "needs both midpoint and spread responses")
            self._skip("null", "needs both midpoint and spread responses")
        self._report()
        return self._bundle

    def _replay(self) -> list[Path]:
        config = self._config
        universe = set(config.universe)

        def produce(stage_dir: Path) -> list[Path]:
            outputs = []
            for index, path in enumerate(config.events):
                with stage_context("replay", str(path)):
                    events = [e for e in read_events(path) if e.stock in universe]
                    replays = replay(events, config.window, config.workers)
                    missing = [s for s in config.universe if s not in replays]
                    if missing:
                        raise DataIntegrityError(
                            f"no events for universe symbols: {', '.join(missing)}"
                        )
                ordered = {symbol: replays[symbol] for symbol in config.universe}
                outputs += artifacts.write_replay(stage_dir, _day_prefix(index), ordered)
            return outputs

        config_slice = {"universe": list(config.universe), "window": str(config.window)}
        return self._execute("replay", config_slice, list(config.events), produce)

    def _load_days(self) -> Iterator[tuple[str, dict]]:
        for index in range(len(self._config.events)):
            prefix = _day_prefix(index)
            yield prefix, artifacts.read_replay(
                self._root / "replay", prefix, self._config.universe
            )

    def _classify(self, replay_files: list[Path]) -> list[Path]:
        config = self._config
        symbols = list(config.universe)

        def produce(stage_dir: Path) -> list[Path]:
            outputs = []
            daily: list[PairWeights] = []
            summary = []
            for prefix, replays in self._load_days():
                with stage_context("classify", prefix):
                    weights = classify_market(replays, symbols, config.workers).weights
                daily.append(weights)
                for label, counts in (
                    ("single_counts", weights.single_counts),
                    ("paired_counts", weights.paired_counts),
                    ("dropped_counts", weights.dropped_counts),
                ):
                    outputs.append(
                        artifacts.write_matrix(
                            stage_dir / f"{prefix}_{label}.csv", counts, symbols, symbols
                        )
                    )
                summary.append(
                    {
                        "day": prefix,
                        "single": int(weights.single_counts.sum()),
                        "paired": int(weights.paired_counts.sum()),
                        "dropped": int(weights.dropped_counts.sum()),
                        "mean_single_fraction": _finite(weights),
                    }
                )
            pooled = PairWeights.pool(daily)
            outputs.append(
                artifacts.write_matrix(stage_dir / "weights.csv", pooled.matrix, symbols, symbols)
            )
            outputs.append(
                artifacts.write_json(
                    {"days": summary, "mean_single_fraction": _finite(pooled)},
                    stage_dir / "summary.json",
                )
            )
            return outputs

        return self._execute("classify", {"universe": symbols}, replay_files, produce)

    def _respond(self, replay_files: list[Path]) -> list[Path]:
        config = self._config
        symbols = list(config.universe)

        def produce(stage_dir: Path) -> list[Path]:
            sessions = []
            daily_weights = []
            for prefix, replays in self._load_days():
                with stage_context("respond", prefix):
                    classification = classify_market(replays, symbols, config.workers)
                    sessions.append(
                        prepare_inputs(replays, classification, config.renormalize_signed_volume)
                    )
                daily_weights.append(classification.weights)
            with stage_context("respond", "response matrices"):
                matrices = compute_responses(
                    sessions,
                    PairWeights.pool(daily_weights),
                    config.x_kinds,
                    config.y_kinds,
                    config.subsets,
                    config.workers,
                )
            outputs = []
            for matrix in matrices.values():
                outputs += artifacts.write_response(stage_dir, matrix)
            return outputs

        config_slice = {
            "universe": symbols,
            "x_kinds": [k.value for k in config.x_kinds],
            "y_kinds": [k.value for k in config.y_kinds],
            "subsets": [s.value for s in config.subsets],
            "renormalize_signed_volume": config.renormalize_signed_volume,
        }
        return self._execute("respond", config_slice, replay_files, produce)

    def _response_names(self) -> list[str]:
        config = self._config
        return [
            artifacts.response_name(x, y, s)
            for x in config.x_kinds
            for y in config.y_kinds
            for s in config.subsets
        ]

    def _svd(self, response_files: list[Path]) -> list[Path]:
        respond_dir = self._root / "respond"

        def produce(stage_dir: Path) -> list[Path]:
            outputs = []
            for name in self._response_names():
                with stage_context("svd", name):
                    matrix = artifacts.read_response(respond_dir, name)
                    decomposition = decompose(matrix.values)
                outputs += artifacts.write_svd(stage_dir, name, decomposition, matrix.symbols)
            return outputs

        return self._execute("svd", {}, response_files, produce)

    def _fit_and_export(
        self,
        stage: str,
        stage_dir: Path,
        name: str,
        decompositions: Sequence[SvdResult],
        prefix: str = "",
    ) -> tuple[dict, list[Path]]:
        """Fits both sides of pooled decompositions and writes their density exports."""
        config = self._config
        fits = {}
        params = {}
        outputs = []
        for side in VectorSide:
            with stage_context(stage, _fit_key(name, side)):
                tls = fit_pooled(decompositions, side, config.tls_max_iterations)
                entries = np.concatenate([collect_entries(d, side) for d in decompositions])
                normal = fit_normal(entries)
                table = density_table(entries, config.bin_rule, tls)
            fits[side] = tls
            params[side.value] = {"tls": tls.to_dict(), "normal": normal.to_dict()}
            outputs.append(
                artifacts.write_frame(
                    table, stage_dir / f"{prefix}density_{_fit_key(name, side)}.csv"
                )
            )
        return {"fits": fits, "params": params}, outputs

    def _fit(self, svd_files: list[Path]) -> list[Path]:
        config = self._config
        svd_dir = self._root / "svd"

        def produce(stage_dir: Path) -> list[Path]:
            outputs = []
            params = {}
            tables = {x: {} for x in config.x_kinds}
            for x in config.x_kinds:
                for y in config.y_kinds:
                    for subset in config.subsets:
                        name = artifacts.response_name(x, y, subset)
                        decomposition = artifacts.read_svd(svd_dir, name)
                        result, written = self._fit_and_export(
                            "fit", stage_dir, name, [decomposition]
                        )
                        outputs += written
                        params[name] = result["params"]
                        tables[x][(y, subset)] = result["fits"]
            table_names = {XKind.MIDPOINT: "price_fit_table.csv", XKind.SPREAD: "liquidity_fit_table.csv"}
            for x, fits in tables.items():
                outputs.append(
                    artifacts.write_table(
                        artifacts.response_fit_table(fits), stage_dir / table_names[x]
                    )
                )
            outputs.append(artifacts.write_json(params, stage_dir / "params.json"))
            return outputs

        config_slice = {"bin_rule": str(config.bin_rule), "tls_max_iterations": config.tls_max_iterations}
        return self._execute("fit", config_slice, svd_files, produce)

    def _overlap_inputs(self, response_files: list[Path]) -> list[Path]:
        subset = self._config.overlap_subset.value
        return [p for p in response_files if p.stem.endswith(f"_{subset}") and p.name.startswith("R_")]

    def _overlap(self, response_files: list[Path]) -> list[Path]:
        config = self._config
        respond_dir = self._root / "respond"

        def produce(stage_dir: Path) -> list[Path]:
            outputs = []
            params = {}
            fits = {}
            for y in config.y_kinds:
                identity = f"{y.value}/{config.overlap_subset.value}"
                with stage_context("overlap", identity):
                    r_m = artifacts.read_response(
                        respond_dir, artifacts.response_name(XKind.MIDPOINT, y, config.overlap_subset)
                    )
                    r_s = artifacts.read_response(
                        respond_dir, artifacts.response_name(XKind.SPREAD, y, config.overlap_subset)
                    )
                    overlaps = overlaps_from_responses(r_m, r_s)
                for kind, c in overlaps.items():
                    labels = artifacts.factor_labels(c.size)
                    outputs.append(
                        artifacts.write_matrix(
                            stage_dir / f"{c.name}.csv", c.values, labels, labels, "factor"
                        )
                    )
                    outputs.append(
                        artifacts.write_frame(heatmap_triples(c), stage_dir / f"heatmap_{c.name}.csv")
                    )
                    with stage_context("overlap", c.name):
                        decomposition = decompose_overlap(c)
                    outputs += artifacts.write_svd(
                        stage_dir, c.name, decomposition, index_name="factor"
                    )
                    result, written = self._fit_and_export(
                        "overlap", stage_dir, c.name, [decomposition]
                    )
                    outputs += written
                    params[c.name] = result["params"]
                    fits[(kind, y)] = result["fits"]
            outputs.append(
                artifacts.write_table(
                    artifacts.factor_fit_table(fits), stage_dir / "factor_fit_table.csv"
                )
            )
            outputs.append(artifacts.write_json(params, stage_dir / "params.json"))
            return outputs

        config_slice = {
            "overlap_subset": config.overlap_subset.value,
            "y_kinds": [k.value for k in config.y_kinds],
            "bin_rule": str(config.bin_rule),
            "tls_max_iterations": config.tls_max_iterations,
        }
        return self._execute("overlap", config_slice, self._overlap_inputs(response_files), produce)

    def _null(self, response_files: list[Path], overlap_files: list[Path]) -> list[Path]:
        config = self._config
        respond_dir = self._root / "respond"
        overlap_dir = self._root / "overlap"

        def produce(stage_dir: Path) -> list[Path]:
            outputs = []
            params = {}
            null_fits = {}
            comparisons: list[NullComparison] = []
            for y in config.y_kinds:
                identity = f"{y.value}/{config.null_family.value}"
                with stage_context("null", identity):
                    r_m = artifacts.read_response(
                        respond_dir, artifacts.response_name(XKind.MIDPOINT, y, config.overlap_subset)
                    )
                    r_s = artifacts.read_response(
                        respond_dir, artifacts.response_name(XKind.SPREAD, y, config.overlap_subset)
                    )
                    replicates = run_null_replicates(
                        r_m,
                        r_s,
                        config.seed,
                        config.null_replicates,
                        config.null_family,
                        config.workers,
                    )
                for kind in OverlapKind:
                    first = replicates[0][kind]
                    outputs.append(
                        artifacts.write_frame(
                            heatmap_triples(first), stage_dir / f"heatmap_{first.name}_rep0.csv"
                        )
                    )
                    with stage_context("null", first.name):
                        decompositions = [decompose_overlap(rep[kind]) for rep in replicates]
                        empirical = artifacts.read_svd(overlap_dir, first.name)
                    result, written = self._fit_and_export(
                        "null", stage_dir, first.name, decompositions
                    )
                    outputs += written
                    params[first.name] = result["params"]
                    null_fits[(kind, y)] = result["fits"]
                    for side in VectorSide:
                        with stage_context("null", _fit_key(first.name, side)):
                            beta_empirical = fit_pooled(
                                [empirical], side, config.tls_max_iterations
                            ).beta
                        comparisons.append(
                            NullComparison(
                                kind, y, side, beta_empirical, result["fits"][side].beta
                            )
                        )
            outputs.append(
                artifacts.write_table(
                    artifacts.factor_fit_table(null_fits), stage_dir / "factor_fit_table.csv"
                )
            )
            outputs.append(
                artifacts.write_frame(comparison_frame(comparisons), stage_dir / "comparison.csv")
            )
            outputs.append(artifacts.write_json(params, stage_dir / "params.json"))
            return outputs

        config_slice = {
            "overlap_subset": config.overlap_subset.value,
            "y_kinds": [k.value for k in config.y_kinds],
            "null_family": config.null_family.value,
            "null_replicates": config.null_replicates,
            "seed": config.seed,
            "bin_rule": str(config.bin_rule),
            "tls_max_iterations": config.tls_max_iterations,
        }
        overlap_svds = [p for p in overlap_files if p.name.endswith(("_U.csv", "_V.csv", "_S.csv"))]
        return self._execute(
            "null", config_slice, self._overlap_inputs(response_files) + overlap_svds, produce
        )

    def _report(self) -> None:
        """Writes the run summary, the manifest and the timings."""
        started = time.perf_counter()
        config = self._config
        summary = {
            "stocks": len(config.universe),
            "days": len(config.events),
            "response_matrices": sorted(self._response_names()),
        }
        summary["stages"] = {
            name: ("skipped" if self._bundle.statuses.get(name) == "skipped" else "complete")
            for name in STAGES[:-1]
        }
        summary_path = artifacts.write_json(summary, self._root / "report" / "summary.json")
        self._record("report", "done", time.perf_counter() - started, None, [summary_path])

        manifest = {
            "tool": TOOL_NAME,
            "version": VERSION,
            "seed": config.seed,
            "config": config.to_mapping(),
            "stages": self._stages,
            "files": dict(sorted(self._bundle.files.items())),
        }
        artifacts.write_json(manifest, self._root / MANIFEST_NAME)
        timings = {
            name: {
                "status": self._bundle.statuses[name],
                "seconds": round(self._bundle.timings[name], 6),
            }
            for name in STAGES
            if name in self._bundle.statuses
        }
        artifacts.write_json(timings, self._root / TIMINGS_NAME)


def _finite(weights: PairWeights) -> float | None:
    if not np.any(weights.paired_counts):
        return None
    return weights.mean_single_fraction


def run_pipeline(config: PipelineConfig, output: OutputFormatter | None = None) -> ReportBundle:
    """Runs the full pipeline and returns the bundle description.

    Raises:
        StageError: If any stage fails.
    """
    return PipelineRunner(config, output).run()


class ImpactLabApp:
    """Runs the pipeline and translates failures to exit codes.

    Args:
        config: Validated pipeline configuration.
        verbose: Enable verbose output.
    """

    def __init__(self, config: PipelineConfig, verbose: bool = False) -> None:
        self._config = config
        self._output = OutputFormatter(verbose=verbose)

    def run(self) -> ExitCode:
        """Executes the pipeline.

        Returns:
            The appropriate ExitCode for the result.
        """
        self._output.header("run")
        self._output.field("Stocks", len(self._config.universe))
        self._output.field("Days", len(self._config.events))
        self._output.field("Output", self._config.output_dir)
        self._output.verbose(f"seed {self._config.seed}, {self._config.workers} workers")
        try:
            bundle = run_pipeline(self._config, self._output)
        except ImpactLabError as exc:
            self._output.error(str(exc))
            return ExitCode(exc.exit_code)
        except Exception as exc:
            self._output.error(f"Unexpected error: {exc}")
            logger.exception("Unexpected error")
            return ExitCode.ANALYSIS_ERROR
        self._output.result(f"{len(bundle.files)} files written to {bundle.output_dir}")
        return ExitCode.OK
