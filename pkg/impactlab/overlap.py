"""Factor-overlap matrices of response decompositions and their null models.

The left singular vectors U_x of a response matrix R_x are z-scored per
stock over the factor index,

    Ũ_x[i, n] = (U_x[i, n] - mean_n U_x[i, :]) / std_n U_x[i, :]

and two such matrices overlap as C_xy = Ũ_xᵀ Ũ_y (factor × factor). The
null branch replaces each response matrix by a random matrix with the same
global mean and std and runs the identical decomposition pipeline.
"""

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
import pandas as pd

from .constants import NullFamily, OverlapKind, VectorSide, YKind
from .exceptions import DegenerateSeriesError, EmptyResultError, IncompatibleMatricesError
from .linalg import SvdResult, decompose, svd
from .response import ResponseMatrix
from .statfit import TlsParams, collect_entries, fit_tls

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NormalizedFactorMatrix:
    """Ũ: rows are stocks, columns factors; each row has mean 0 and std 1."""

    values: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    """C = ÃᵀB̃ for two normalized factor matrices.

    Attributes:
        values: N×N overlap, rows are factors of the left operand, columns
            factors of the right operand.
        kind: mm, ss or ms.
        y_kind: Trade quantity both operands respond to.
        metadata: Provenance (null replicate seed, family).
    """

    values: np.ndarray
    kind: OverlapKind
    y_kind: YKind | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        if self.y_kind is None:
            return f"C_{self.kind.value}"
        return f"C_{self.kind.value}_{self.y_kind.value}"

    @property
    def size(self) -> int:
        return self.values.shape[0]


def normalize_factors(u) -> NormalizedFactorMatrix:
    """Z-scores each row of a singular vector matrix over the factors.

    Raises:
        DegenerateSeriesError: If a row is constant.
    """
    values = np.asarray(u, dtype=np.float64)
    mean = values.mean(axis=1, keepdims=True)
    centered = values - mean
    std = np.sqrt(np.mean(centered * centered, axis=1, keepdims=True))
    constant = np.flatnonzero(std.ravel() == 0.0)
    if constant.size:
        raise DegenerateSeriesError(f"factor row {int(constant[0])} is constant")
    return NormalizedFactorMatrix(centered / std)


def overlap_matrix(
    a: NormalizedFactorMatrix,
    b: NormalizedFactorMatrix,
    kind: OverlapKind = OverlapKind.MS,
    y_kind: YKind | None = None,
) -> OverlapMatrix:
    """Overlap of the factors of `a` with the factors of `b`.

    Raises:
        IncompatibleMatricesError: If the matrices differ in shape.
    """
    if a.values.shape != b.values.shape:
        raise IncompatibleMatricesError(
            f"cannot overlap {a.values.shape} with {b.values.shape} factor matrices"
        )
    return OverlapMatrix(a.values.T @ b.values, kind, y_kind)


def decompose_overlap(c: OverlapMatrix) -> SvdResult:
    """SVD of an overlap matrix, C = U S Vᵀ."""
    return svd(c.values)


@runtime_checkable
class NullSampler(Protocol):
    """Draws surrogate response entries with prescribed moments."""

    def sample(self, present: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Returns as many surrogate values as `present` holds.

        Args:
            present: The observed (non-missing) response entries.
            rng: Seeded generator owned by the caller.
        """
        ...


class GaussianSampler:
    """I.i.d. normal entries with the observed mean and std."""

    def sample(self, present: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(np.mean(present), np.std(present), size=present.size)


class UniformSampler:
    """I.i.d. uniform entries with the observed mean and std."""

    def sample(self, present: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        half_width = np.sqrt(3.0) * np.std(present)
        mean = np.mean(present)
        return rng.uniform(mean - half_width, mean + half_width, size=present.size)


class PermutationSampler:
    """A random permutation of the observed entries."""

    def sample(self, present: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.permutation(present)


NULL_SAMPLERS: dict[NullFamily, NullSampler] = {
    NullFamily.GAUSSIAN: GaussianSampler(),
    NullFamily.UNIFORM: UniformSampler(),
    NullFamily.PERMUTATION: PermutationSampler(),
}


def random_response(
    r: ResponseMatrix, seed: int, family: NullFamily = NullFamily.GAUSSIAN
) -> ResponseMatrix:
    """Surrogate response matrix with the global mean and std of `r`.

    Moments are taken over the present entries jointly; missing entries of
    `r` stay missing so both branches impute the same positions.

    Raises:
        EmptyResultError: If `r` has no present entry.
    """
    present_mask = ~np.isnan(r.values)
    present = r.values[present_mask]
    if present.size == 0:
        raise EmptyResultError(f"{r.name} has no entries to draw a null model from")
    rng = np.random.default_rng(seed)
    values = np.full(r.values.shape, np.nan)
    values[present_mask] = NULL_SAMPLERS[family].sample(present, rng)
    metadata = {"null_family": family.value, "seed": int(seed)}
    return ResponseMatrix(r.symbols, values, r.counts, r.x_kind, r.y_kind, r.subset, metadata)


def factor_matrix(r: ResponseMatrix) -> tuple[SvdResult, NormalizedFactorMatrix]:
    """Decomposes a response matrix and normalizes its left singular vectors."""
    decomposition = decompose(r.values)
    return decomposition, normalize_factors(decomposition.u)


def overlaps_from_responses(
    r_m: ResponseMatrix, r_s: ResponseMatrix
) -> dict[OverlapKind, OverlapMatrix]:
    """Builds C_mm, C_ss and C_ms from a midpoint and a spread response.

    Raises:
        IncompatibleMatricesError: If the responses differ in universe or y kind.
    """
    if r_m.symbols != r_s.symbols:
        raise IncompatibleMatricesError("midpoint and spread responses cover different universes")
    if r_m.y_kind is not r_s.y_kind:
        raise IncompatibleMatricesError(
            f"cannot overlap {r_m.name} with {r_s.name}: trade quantities differ"
        )
    _, u_m = factor_matrix(r_m)
    _, u_s = factor_matrix(r_s)
    y_kind = r_m.y_kind
    return {
        OverlapKind.MM: overlap_matrix(u_m, u_m, OverlapKind.MM, y_kind),
        OverlapKind.SS: overlap_matrix(u_s, u_s, OverlapKind.SS, y_kind),
        OverlapKind.MS: overlap_matrix(u_m, u_s, OverlapKind.MS, y_kind),
    }


def null_overlap_pipeline(
    r_m: ResponseMatrix,
    r_s: ResponseMatrix,
    seed: int,
    family: NullFamily = NullFamily.GAUSSIAN,
) -> dict[OverlapKind, OverlapMatrix]:
    """Overlap matrices of one null replicate.

    The midpoint and spread surrogates get independent child seeds of
    `seed`.
    """
    seed_m, seed_s = (
        int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(2)
    )
    overlaps = overlaps_from_responses(
        random_response(r_m, seed_m, family), random_response(r_s, seed_s, family)
    )
    metadata = {"seed": int(seed), "null_family": family.value}
    return {
        kind: OverlapMatrix(c.values, c.kind, c.y_kind, metadata) for kind, c in overlaps.items()
    }


def replicate_seeds(master_seed: int, replicates: int) -> list[int]:
    """Per-replicate seeds derived from the master seed and the replicate index."""
    return [
        int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])
        for index in range(replicates)
    ]


def run_null_replicates(
    r_m: ResponseMatrix,
    r_s: ResponseMatrix,
    master_seed: int,
    replicates: int,
    family: NullFamily = NullFamily.GAUSSIAN,
    workers: int = 1,
) -> list[dict[OverlapKind, OverlapMatrix]]:
    """Runs the null pipeline for every replicate, results in index order."""
    seeds = replicate_seeds(master_seed, replicates)

    def task(seed: int) -> dict[OverlapKind, OverlapMatrix]:
        return null_overlap_pipeline(r_m, r_s, seed, family)

    if workers > 1 and replicates > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, seeds))
    else:
        results = [task(seed) for seed in seeds]
    logger.debug("Ran %d %s null replicates for %s", replicates, family.value, r_m.y_kind.value)
    return results


def heatmap_triples(c: OverlapMatrix) -> pd.DataFrame:
    """Long-form (row, col, value) table of an overlap matrix."""
    n_rows, n_cols = c.values.shape
    rows, cols = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    return pd.DataFrame(
        {"row": rows.ravel(), "col": cols.ravel(), "value": c.values.ravel()}
    )


@dataclass(frozen=True)
class NullComparison:
    """Tail comparison of one overlap kind between the two branches."""

    kind: OverlapKind
    y_kind: YKind
    side: VectorSide
    beta_empirical: float
    beta_null: float

    @property
    def structured(self) -> bool:
        """Heavier tails than the null indicate non-random factor structure."""
        return self.beta_empirical < self.beta_null


def compare_to_null(
    empirical: Mapping[tuple[OverlapKind, YKind], SvdResult],
    null: Sequence[Mapping[tuple[OverlapKind, YKind], SvdResult]],
    max_iterations: int | None = None,
) -> list[NullComparison]:
    """Fits the t location-scale shape of both branches per kind and side.

    Null replicate entries are pooled before fitting.

    Args:
        empirical: Decomposition per (overlap kind, y kind).
        null: One such mapping per replicate.
        max_iterations: Optional fit iteration cap.
    """
    rows = []
    for key, decomposition in empirical.items():
        for side in VectorSide:
            beta_empirical = fit_pooled([decomposition], side, max_iterations).beta
            beta_null = fit_pooled([rep[key] for rep in null], side, max_iterations).beta
            rows.append(NullComparison(key[0], key[1], side, beta_empirical, beta_null))
    return rows


def fit_pooled(
    decompositions: Sequence[SvdResult], side: VectorSide, max_iterations: int | None = None
) -> TlsParams:
    """t location-scale fit of the singular-vector entries of several decompositions."""
    pooled = np.concatenate([collect_entries(d, side) for d in decompositions])
    if max_iterations is None:
        return fit_tls(pooled)
    return fit_tls(pooled, max_iterations=max_iterations)


def comparison_frame(rows: Sequence[NullComparison]) -> pd.DataFrame:
    """Tabular form of a null comparison."""
    return pd.DataFrame(
        {
            "kind": [r.kind.value for r in rows],
            "y_kind": [r.y_kind.value for r in rows],
            "side": [r.side.value for r in rows],
            "beta_empirical": [r.beta_empirical for r in rows],
            "beta_null": [r.beta_null for r in rows],
            "structured": [r.structured for r in rows],
        }
    )
