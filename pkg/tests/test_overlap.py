"""Tests for factor overlaps and the random null model."""

import numpy as np
import pytest

from impactlab.classify import classify_market
from impactlab.constants import (
    TLS_MAX_SHAPE,
    NullFamily,
    OverlapKind,
    TradeSubset,
    VectorSide,
    XKind,
    YKind,
)
from impactlab.exceptions import DegenerateSeriesError, EmptyResultError, IncompatibleMatricesError
from impactlab.linalg import svd
from impactlab.overlap import (
    NULL_SAMPLERS,
    NullComparison,
    NullSampler,
    compare_to_null,
    comparison_frame,
    decompose_overlap,
    heatmap_triples,
    normalize_factors,
    null_overlap_pipeline,
    overlap_matrix,
    overlaps_from_responses,
    random_response,
    replicate_seeds,
    run_null_replicates,
)
from impactlab.replay import replay
from impactlab.response import ResponseMatrix, prepare_inputs, response_matrix
from impactlab.synth import MarketConfig, generate

SYMBOLS = tuple(f"S{k:03d}" for k in range(8))


def _response(values, x_kind=XKind.MIDPOINT, y_kind=YKind.SIGN):
    return ResponseMatrix(
        SYMBOLS, values, np.ones(values.shape, dtype=np.int64), x_kind, y_kind, TradeSubset.SINGLE
    )


@pytest.fixture
def responses(rng):
    r_m = rng.normal(0.0, 0.01, size=(8, 8))
    r_s = rng.normal(0.0, 0.02, size=(8, 8))
    r_m[2, 5] = np.nan
    return _response(r_m), _response(r_s, XKind.SPREAD)


class TestNormalizeFactors:
    def test_rows_standardized(self, rng):
        normalized = normalize_factors(svd(rng.normal(size=(8, 8))).u).values
        np.testing.assert_allclose(normalized.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(normalized.std(axis=1), 1.0, atol=1e-12)

    def test_constant_row(self):
        u = np.eye(3)
        u[1] = 0.5
        with pytest.raises(DegenerateSeriesError):
            normalize_factors(u)


class TestOverlapIdentities:
    @pytest.fixture
    def overlaps(self, responses):
        return overlaps_from_responses(*responses)

    def test_column_and_row_sums_vanish(self, overlaps):
        for c in overlaps.values():
            assert np.max(np.abs(c.values.sum(axis=0))) <= 1e-9
            assert np.max(np.abs(c.values.sum(axis=1))) <= 1e-9

    @pytest.mark.parametrize("kind", [OverlapKind.MM, OverlapKind.SS])
    def test_self_overlaps_symmetric_psd(self, overlaps, kind):
        c = overlaps[kind].values
        np.testing.assert_allclose(c, c.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(c)) >= -1e-9

    def test_cross_overlap_transposes(self, responses):
        r_m, r_s = responses
        u_m = normalize_factors(svd(np.nan_to_num(r_m.values)).u)
        u_s = normalize_factors(svd(r_s.values).u)
        ms = overlap_matrix(u_m, u_s, OverlapKind.MS)
        sm = overlap_matrix(u_s, u_m, OverlapKind.MS)
        np.testing.assert_allclose(ms.values, sm.values.T, rtol=0, atol=1e-12)

    def test_matches_triple_loop(self, responses):
        factors = normalize_factors(svd(responses[1].values).u)
        u = factors.values
        n = u.shape[0]
        expected = np.zeros((n, n))
        for a in range(n):
            for b in range(n):
                expected[a, b] = sum(u[i, a] * u[i, b] for i in range(n))
        c = overlap_matrix(factors, factors, OverlapKind.SS)
        np.testing.assert_allclose(c.values, expected, atol=1e-10)

    def test_symmetric_decomposition_matches_eigen_oracle(self, overlaps):
        c = overlaps[OverlapKind.MM]
        decomposition = decompose_overlap(c)
        eigenvalues = np.sort(np.abs(np.linalg.eigvalsh(c.values)))[::-1]
        np.testing.assert_allclose(decomposition.s, eigenvalues, atol=1e-9 * eigenvalues[0])

    def test_names(self, overlaps):
        assert overlaps[OverlapKind.MS].name == "C_ms_sign"
        assert overlaps[OverlapKind.MM].size == 8

    def test_shape_mismatch(self, rng):
        a = normalize_factors(svd(rng.normal(size=(4, 4))).u)
        b = normalize_factors(svd(rng.normal(size=(5, 5))).u)
        with pytest.raises(IncompatibleMatricesError):
            overlap_matrix(a, b)

    def test_mixed_trade_quantities_rejected(self, responses):
        r_m, r_s = responses
        other = _response(r_s.values, XKind.SPREAD, YKind.VOLUME)
        with pytest.raises(IncompatibleMatricesError):
            overlaps_from_responses(r_m, other)


class TestRandomResponse:
    def test_keeps_missing_pattern(self, responses):
        r_m, _ = responses
        for family in NullFamily:
            null = random_response(r_m, 3, family)
            np.testing.assert_array_equal(np.isnan(null.values), np.isnan(r_m.values))
            assert null.metadata == {"null_family": family.value, "seed": 3}

    def test_same_seed_same_matrix(self, responses):
        r_m, _ = responses
        np.testing.assert_array_equal(random_response(r_m, 9).values, random_response(r_m, 9).values)
        assert not np.array_equal(
            random_response(r_m, 9).values, random_response(r_m, 10).values, equal_nan=True
        )

    def test_gaussian_moments(self, rng):
        r = _response(rng.normal(0.3, 2.0, size=(8, 8)))
        samples = np.concatenate([random_response(r, seed).values.ravel() for seed in range(200)])
        assert np.mean(samples) == pytest.approx(np.mean(r.values), abs=0.08)
        assert np.std(samples) == pytest.approx(np.std(r.values), rel=0.03)

    def test_uniform_bounds(self, responses):
        r_m, _ = responses
        present = r_m.values[~np.isnan(r_m.values)]
        half_width = np.sqrt(3.0) * np.std(present)
        null = random_response(r_m, 4, NullFamily.UNIFORM).values
        null = null[~np.isnan(null)]
        assert np.all(np.abs(null - np.mean(present)) <= half_width)

    def test_permutation_keeps_values(self, responses):
        r_m, _ = responses
        null = random_response(r_m, 4, NullFamily.PERMUTATION).values
        np.testing.assert_array_equal(
            np.sort(null[~np.isnan(null)]), np.sort(r_m.values[~np.isnan(r_m.values)])
        )

    def test_empty_matrix(self):
        with pytest.raises(EmptyResultError):
            random_response(_response(np.full((8, 8), np.nan)), 1)

    def test_samplers_satisfy_protocol(self):
        assert all(isinstance(sampler, NullSampler) for sampler in NULL_SAMPLERS.values())
        assert set(NULL_SAMPLERS) == set(NullFamily)


class TestReplicates:
    def test_seeds_deterministic_and_distinct(self):
        seeds = replicate_seeds(42, 20)
        assert seeds == replicate_seeds(42, 20)
        assert len(set(seeds)) == 20
        assert replicate_seeds(42, 5) == seeds[:5]

    def test_workers_do_not_change_results(self, responses):
        serial = run_null_replicates(*responses, master_seed=1, replicates=4)
        parallel = run_null_replicates(*responses, master_seed=1, replicates=4, workers=3)
        for a, b in zip(serial, parallel):
            for kind in OverlapKind:
                np.testing.assert_array_equal(a[kind].values, b[kind].values)

    def test_replicate_metadata(self, responses):
        overlaps = null_overlap_pipeline(*responses, seed=17, family=NullFamily.UNIFORM)
        assert overlaps[OverlapKind.SS].metadata == {"seed": 17, "null_family": "uniform"}

    def test_comparison_rows(self, responses):
        empirical = {
            (kind, YKind.SIGN): decompose_overlap(c)
            for kind, c in overlaps_from_responses(*responses).items()
        }
        null = [
            {(kind, YKind.SIGN): decompose_overlap(c) for kind, c in rep.items()}
            for rep in run_null_replicates(*responses, master_seed=2, replicates=3)
        ]
        rows = compare_to_null(empirical, null)
        assert len(rows) == len(OverlapKind) * len(VectorSide)
        frame = comparison_frame(rows)
        assert list(frame.columns) == [
            "kind", "y_kind", "side", "beta_empirical", "beta_null", "structured",
        ]
        assert (frame["structured"] == (frame["beta_empirical"] < frame["beta_null"])).all()


def test_structured_flag():
    row = NullComparison(OverlapKind.MM, YKind.SIGN, VectorSide.LEFT, 1.4, 30.0)
    assert row.structured
    assert not NullComparison(OverlapKind.MM, YKind.SIGN, VectorSide.LEFT, 30.0, 1.4).structured


def test_heatmap_triples(responses):
    c = overlaps_from_responses(*responses)[OverlapKind.MS]
    frame = heatmap_triples(c)
    assert len(frame) == 64
    row = frame[(frame["row"] == 2) & (frame["col"] == 5)]
    assert row["value"].iloc[0] == c.values[2, 5]


def test_self_overlap_vectors_agree_up_to_sign(responses):
    decomposition = decompose_overlap(overlaps_from_responses(*responses)[OverlapKind.MM])
    alignment = np.abs(np.sum(decomposition.u * decomposition.v, axis=0))
    np.testing.assert_allclose(alignment, 1.0, atol=1e-8)


SECTOR_SEEDS = range(20)


def _sector_comparison(seed: int) -> dict[OverlapKind, NullComparison]:
    """Left-side null comparison of sign responses on a four-sector market."""
    market = MarketConfig.sectors(
        (4, 4, 4, 4),
        300_000,
        self_impact=3.0,
        sector_impact=1.5,
        heterogeneity=0.6,
        trade_intensity=1.0,
        quote_intensity=8.0,
        seed=seed,
    )
    replays = replay(generate(market))
    inputs = prepare_inputs(replays, classify_market(replays, market.symbols))
    r_m = response_matrix(inputs, XKind.MIDPOINT, YKind.SIGN, TradeSubset.ALL)
    r_s = response_matrix(inputs, XKind.SPREAD, YKind.SIGN, TradeSubset.ALL)
    empirical = {
        (kind, YKind.SIGN): decompose_overlap(c)
        for kind, c in overlaps_from_responses(r_m, r_s).items()
    }
    null = [
        {(kind, YKind.SIGN): decompose_overlap(c) for kind, c in rep.items()}
        for rep in run_null_replicates(r_m, r_s, master_seed=seed, replicates=20)
    ]
    return {
        row.kind: row for row in compare_to_null(empirical, null) if row.side is VectorSide.LEFT
    }


@pytest.fixture(scope="module")
def sector_comparisons():
    return [_sector_comparison(seed) for seed in SECTOR_SEEDS]


@pytest.mark.slow
@pytest.mark.parametrize("kind", [OverlapKind.MM, OverlapKind.MS])
def test_planted_sectors_heavier_tailed_than_null(sector_comparisons, kind):
    empirical = np.median([rows[kind].beta_empirical for rows in sector_comparisons])
    null = np.median([rows[kind].beta_null for rows in sector_comparisons])
    assert empirical < null
    assert empirical < TLS_MAX_SHAPE
