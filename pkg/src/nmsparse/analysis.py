"""Monte-Carlo and closed-form analysis of the pruning estimators.

Provides repeated-draw reports for empirical mean/variance/frequency
checks, the analytic variance-ratio scan over 2:4 blocks, the sorted-block
variance-gap identity, expected multiply-accumulate counts for random mask
overlap, and an exhaustive-search oracle for minimum-MSE masks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .core import Block, BlockMask, SparsityPattern
from .estimators import (
    PAIR_INDEX_COLUMNS,
    EstimatorKind,
    approx24_pair_probs,
    approx24_variance_array,
    exact24_marginal_probs,
    exact24_pair_probs,
    greedy_mask_array,
    mvue12_selection_probs,
    mvue12_variance_array,
    prune_array,
    resolve_pattern,
    variance_from_probs_array,
)
from .rng import RandomStream


# ---------------------------------------------------------------------------
# Monte-Carlo estimation


@dataclass(frozen=True)
class McReport:
    """Summary of repeated stochastic pruning of one block.

    Frequencies map kept-index tuples to their empirical rate and sum to 1.
    ``mean_se`` is the per-component standard error of ``empirical_mean``;
    ``mse_mean``/``mse_se`` describe the per-draw squared block error,
    whose expectation equals the estimator's total variance plus the
    squared bias.
    """

    block: tuple[float, ...]
    kind: EstimatorKind
    samples: int
    seed: int
    empirical_mean: np.ndarray
    empirical_var: np.ndarray
    mean_se: np.ndarray
    mse_mean: float
    mse_se: float
    pair_frequencies: dict[tuple[int, ...], float]


def mc_estimate(
    block: Block,
    kind: EstimatorKind,
    samples: int,
    seed: int,
    pattern: SparsityPattern | None = None,
) -> McReport:
    """Draw the estimator ``samples`` times and summarize the results.

    Identical (block, kind, samples, seed) inputs produce identical
    reports.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    pattern = _pattern_for(kind, pattern, len(block))
    stream = RandomStream(seed)
    tiled = np.broadcast_to(block.values, (samples, pattern.m))
    out, mask = prune_array(tiled, kind, pattern, stream)

    mean = out.mean(axis=0)
    var = out.var(axis=0, ddof=1) if samples > 1 else np.zeros(pattern.m)
    mean_se = np.sqrt(var / samples)
    diff = out - block.values
    mse_draws = (diff * diff).sum(axis=1)
    mse_mean = float(mse_draws.mean())
    mse_se = float(mse_draws.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0

    codes = (mask.astype(np.int64) << np.arange(pattern.m)).sum(axis=1)
    counts = np.bincount(codes, minlength=1 << pattern.m)
    freqs: dict[tuple[int, ...], float] = {}
    for code in np.flatnonzero(counts):
        kept = tuple(i for i in range(pattern.m) if code & (1 << i))
        freqs[kept] = counts[code] / samples

    return McReport(
        block=tuple(float(v) for v in block.values),
        kind=kind,
        samples=samples,
        seed=seed,
        empirical_mean=mean,
        empirical_var=var,
        mean_se=mean_se,
        mse_mean=mse_mean,
        mse_se=mse_se,
        pair_frequencies=freqs,
    )


def _pattern_for(
    kind: EstimatorKind, pattern: SparsityPattern | None, block_len: int
) -> SparsityPattern:
    if kind is EstimatorKind.GREEDY_MSE and pattern is None:
        # Default greedy density: keep half the block.
        pattern = SparsityPattern(block_len // 2, block_len)
    return resolve_pattern(kind, pattern)


# ---------------------------------------------------------------------------
# Exhaustive minimum-MSE oracle


def brute_force_min_mse_mask(
    block: Block, pattern: SparsityPattern
) -> tuple[BlockMask, float]:
    """Enumerate all keep-sets and return the minimum-MSE mask.

    The MSE of a mask is the sum of squares of the dropped entries. Ties
    resolve to the lexicographically smallest kept-index tuple, which
    coincides with greedy lowest-index tie-breaking.
    """
    if len(block) != pattern.m:
        raise ValueError(f"block length {len(block)} does not match pattern {pattern}")
    best_combo: tuple[int, ...] | None = None
    best_mse = math.inf
    values = block.values
    for combo in itertools.combinations(range(pattern.m), pattern.kept):
        dropped = [i for i in range(pattern.m) if i not in combo]
        mse = float(sum(values[i] ** 2 for i in dropped))
        if mse < best_mse:
            best_mse = mse
            best_combo = combo
    kept = np.zeros(pattern.m, dtype=bool)
    kept[list(best_combo)] = True
    return BlockMask(kept, pattern), best_mse


# ---------------------------------------------------------------------------
# Variance-gap identity
#
# For sorted magnitudes b1 <= b2 <= b3 <= b4, the optimal unconstrained
# 2:4 variance with marginals 2 b_k / S expands to
#     V = sum_{i<j} b_i b_j - (1/2) sum_k b_k^2,
# and pairing the two smallest and two largest into 1:2 blocks costs
#     2 b1 b2 + 2 b3 b4.
# Their difference is exactly -((b1 - b4) + (b2 - b3))^2 / 2, so blockwise
# 2:4 never loses to the paired 1:2 split, with equality only when all
# four magnitudes coincide.


def variance_gap_d(block: Block) -> tuple[float, float]:
    """Return (D, identity_check) for one length-4 block.

    D = V_24 - V_paired_12 computed from the two variance formulas;
    identity_check = -((b1-b4)+(b2-b3))^2 / 2 on sorted magnitudes. Raises
    if the two disagree beyond 1e-9 or D is materially positive.
    """
    if len(block) != 4:
        raise ValueError("expected a length-4 block")
    d, check = variance_gap_arrays(np.abs(block.values[None, :]))
    d_val, check_val = float(d[0]), float(check[0])
    if abs(d_val - check_val) > 1e-9:
        raise AssertionError(
            f"variance gap {d_val} deviates from identity {check_val}"
        )
    if d_val > 1e-9:
        raise AssertionError(f"variance gap must be <= 0, got {d_val}")
    return d_val, check_val


def variance_gap_arrays(mags: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vector form of variance_gap_d on (num_blocks, 4) magnitudes."""
    mags = np.asarray(mags, dtype=np.float64)
    if mags.ndim != 2 or mags.shape[1] != 4:
        raise ValueError("expected shape (num_blocks, 4)")
    b = np.sort(mags, axis=1)
    total = b.sum(axis=1)
    pairwise = 0.5 * (total * total - (b * b).sum(axis=1))
    v24 = pairwise - 0.5 * (b * b).sum(axis=1)
    v12 = 2.0 * b[:, 0] * b[:, 1] + 2.0 * b[:, 2] * b[:, 3]
    d = v24 - v12
    gap = (b[:, 0] - b[:, 3]) + (b[:, 1] - b[:, 2])
    return d, -0.5 * gap * gap


# ---------------------------------------------------------------------------
# Variance-ratio scan
#
# Grid over (a1, a2, a3) in (0, 1]^3 with a4 = 1; both variances are
# closed-form, never Monte-Carlo. The ratio approaches 2 only in the
# corner where the three free magnitudes vanish together.


@dataclass(frozen=True)
class ScanRecord:
    """One grid point of the variance-ratio scan; ratio is None when the
    exact variance is numerically zero."""

    a1: float
    a2: float
    a3: float
    var_exact: float
    var_approx: float
    ratio: float | None


@dataclass(frozen=True)
class ScanSummary:
    points: int
    skipped: int
    max_ratio: float
    worst_point: tuple[float, float, float]


_VAR_EXACT_FLOOR = 1e-12


def _ratio_chunk(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(var_exact, var_approx, ratio) for (N, 3) grid points; NaN ratio
    marks skipped points."""
    blocks = np.concatenate([points, np.ones((points.shape[0], 1))], axis=1)
    var_exact = variance_from_probs_array(blocks, exact24_marginal_probs(blocks))
    var_approx = approx24_variance_array(blocks)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(var_exact >= _VAR_EXACT_FLOOR, var_approx / var_exact, np.nan)
    return var_exact, var_approx, ratio


def _grid_axis(step: float) -> np.ndarray:
    if not 0.0 < step <= 0.1:
        raise ValueError(f"step must be in (0, 0.1], got {step}")
    count = int(round(1.0 / step))
    return np.arange(1, count + 1) * step


def refine_edge_axis(points: int = 40, floor: float = 1e-6) -> np.ndarray:
    """Logarithmically spaced axis values toward 0, for the near-corner
    region where the ratio approaches its supremum."""
    return np.geomspace(floor, 1.0, points)


def _scan_point_chunks(step: float, refine_edges: bool) -> Iterator[np.ndarray]:
    axis = _grid_axis(step)
    a2, a3 = np.meshgrid(axis, axis, indexing="ij")
    plane = np.stack([a2.ravel(), a3.ravel()], axis=1)
    for a1 in axis:
        yield np.column_stack([np.full(plane.shape[0], a1), plane])
    if refine_edges:
        edge = refine_edge_axis()
        e2, e3 = np.meshgrid(edge, edge, indexing="ij")
        eplane = np.stack([e2.ravel(), e3.ravel()], axis=1)
        for a1 in edge:
            yield np.column_stack([np.full(eplane.shape[0], a1), eplane])


def variance_ratio_scan(
    step: float = 0.02, refine_edges: bool = False
) -> Iterator[ScanRecord]:
    """Stream ScanRecords over the grid (plus refined edges if requested)."""
    for points in _scan_point_chunks(step, refine_edges):
        var_exact, var_approx, ratio = _ratio_chunk(points)
        for k in range(points.shape[0]):
            r = ratio[k]
            yield ScanRecord(
                a1=float(points[k, 0]),
                a2=float(points[k, 1]),
                a3=float(points[k, 2]),
                var_exact=float(var_exact[k]),
                var_approx=float(var_approx[k]),
                ratio=None if math.isnan(r) else float(r),
            )


def scan_summary(step: float = 0.02, refine_edges: bool = False) -> ScanSummary:
    """Reduce the scan to its maximum ratio without materializing records."""
    points_seen = 0
    skipped = 0
    max_ratio = -math.inf
    worst = (0.0, 0.0, 0.0)
    for points in _scan_point_chunks(step, refine_edges):
        _, _, ratio = _ratio_chunk(points)
        points_seen += points.shape[0]
        nan = np.isnan(ratio)
        skipped += int(nan.sum())
        if np.all(nan):
            continue
        k = int(np.nanargmax(ratio))
        if ratio[k] > max_ratio:
            max_ratio = float(ratio[k])
            worst = (float(points[k, 0]), float(points[k, 1]), float(points[k, 2]))
    return ScanSummary(points=points_seen, skipped=skipped, max_ratio=max_ratio, worst_point=worst)


SCAN_CSV_HEADER = "a1,a2,a3,var_exact,var_approx,ratio"


def write_scan_csv(path, records: Iterable[ScanRecord]) -> ScanSummary:
    """Write records as CSV (header above, '.' decimal separator, LF line
    endings) and return the running summary."""
    points = 0
    skipped = 0
    max_ratio = -math.inf
    worst = (0.0, 0.0, 0.0)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(SCAN_CSV_HEADER + "\n")
        for rec in records:
            points += 1
            if rec.ratio is None:
                skipped += 1
                ratio_text = ""
            else:
                ratio_text = repr(rec.ratio)
                if rec.ratio > max_ratio:
                    max_ratio = rec.ratio
                    worst = (rec.a1, rec.a2, rec.a3)
            fh.write(
                f"{rec.a1!r},{rec.a2!r},{rec.a3!r},{rec.var_exact!r},{rec.var_approx!r},{ratio_text}\n"
            )
    return ScanSummary(points=points, skipped=skipped, max_ratio=max_ratio, worst_point=worst)


# ---------------------------------------------------------------------------
# Expected multiply-accumulates under random mask overlap
#
# When both operands of a dot product carry independent uniformly random
# N:M masks, the number of surviving multiplies per block is the overlap
# of two (m-n)-subsets of m positions, a hypergeometric variable with
# mean (m-n)^2 / m.


def expected_macs(
    pattern: SparsityPattern, trials: int = 100_000, seed: int = 0
) -> tuple[float, float]:
    """(empirical_mean, analytic_mean) MACs per block for random masks."""
    if trials < 1:
        raise ValueError("trials must be positive")
    combos = list(itertools.combinations(range(pattern.m), pattern.kept))
    bits = np.array([sum(1 << i for i in c) for c in combos], dtype=np.int64)
    popcount = np.array([bin(x).count("1") for x in range(1 << pattern.m)])

    # Analytic mean via the overlap distribution P(overlap = k).
    overlap_counts = popcount[bits[:, None] & bits[None, :]]
    hist = np.bincount(overlap_counts.ravel(), minlength=pattern.m + 1)
    probs = hist / hist.sum()
    analytic = float(np.dot(np.arange(pattern.m + 1), probs))

    stream = RandomStream(seed)
    left = bits[stream.integers(0, len(bits), trials)]
    right = bits[stream.integers(0, len(bits), trials)]
    empirical = float(popcount[left & right].mean())
    return empirical, analytic


def expected_macs_se(pattern: SparsityPattern, trials: int) -> float:
    """Standard error of the empirical MAC mean over the given trials."""
    combos = list(itertools.combinations(range(pattern.m), pattern.kept))
    bits = np.array([sum(1 << i for i in c) for c in combos], dtype=np.int64)
    popcount = np.array([bin(x).count("1") for x in range(1 << pattern.m)])
    overlaps = popcount[bits[:, None] & bits[None, :]].ravel()
    return float(overlaps.std(ddof=0) / math.sqrt(trials))


# ---------------------------------------------------------------------------
# Estimator verification suite


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    detail: str


def _closed_form_mse(kind: EstimatorKind, values: np.ndarray, pattern: SparsityPattern) -> np.ndarray:
    """Expected per-draw squared block error (variance + squared bias)."""
    if kind is EstimatorKind.MVUE12:
        return mvue12_variance_array(values)
    if kind is EstimatorKind.MVUE24_EXACT:
        return variance_from_probs_array(values, exact24_marginal_probs(values))
    if kind is EstimatorKind.MVUE24_APPROX:
        return approx24_variance_array(values)
    sq = (values * values).sum(axis=1)
    if kind is EstimatorKind.UNBIASED_UNIFORM12:
        return sq
    if kind is EstimatorKind.UNIFORM12:
        return 0.5 * sq
    if kind is EstimatorKind.BIASED12:
        return np.abs(values[:, 0] * values[:, 1])
    if kind is EstimatorKind.GREEDY_MSE:
        mask = greedy_mask_array(values, pattern)
        return np.where(mask, 0.0, values * values).sum(axis=1)
    raise ValueError(f"unhandled method {kind}")


def _expected_frequencies(
    kind: EstimatorKind, values: np.ndarray
) -> dict[tuple[int, ...], float]:
    """Kept-index-set distribution implied by the method's probabilities."""
    row = values[None, :]
    if kind in (EstimatorKind.MVUE12, EstimatorKind.BIASED12):
        p = mvue12_selection_probs(row)[0]
        return {(0,): float(p[0]), (1,): float(p[1])}
    if kind in (EstimatorKind.UNIFORM12, EstimatorKind.UNBIASED_UNIFORM12):
        return {(0,): 0.5, (1,): 0.5}
    if kind is EstimatorKind.MVUE24_EXACT:
        table = exact24_pair_probs(row)[0]
    elif kind is EstimatorKind.MVUE24_APPROX:
        table = approx24_pair_probs(row)[0]
    else:
        raise ValueError(f"no frequency model for {kind}")
    return {pair: float(p) for pair, p in zip(PAIR_INDEX_COLUMNS, table)}


def random_test_blocks(
    count: int, m: int, seed: int, heavy_tail_fraction: float = 0.5
) -> np.ndarray:
    """Standard-normal blocks mixed with heavy-tailed lognormal-magnitude
    blocks of random sign."""
    stream = RandomStream(seed, stream=101)
    n_heavy = int(count * heavy_tail_fraction)
    normal = stream.normals((count - n_heavy, m))
    mags = np.exp(stream.normals((n_heavy, m), scale=2.0))
    signs = np.where(stream.uniforms((n_heavy, m)) < 0.5, -1.0, 1.0)
    return np.concatenate([normal, mags * signs], axis=0)


def verify_estimator(
    kind: EstimatorKind,
    num_blocks: int = 100,
    samples: int = 10_000,
    seed: int = 0,
    pattern: SparsityPattern | None = None,
    sigma: float = 5.0,
) -> list[PropertyCheck]:
    """Run the unbiasedness / variance / frequency / pattern suite.

    Each property passes only if it holds for every sampled block at the
    ``sigma`` standard-error level. Biased methods genuinely fail the
    unbiasedness property; that is reported, not masked.
    """
    pattern = _pattern_for(kind, pattern, 0 if kind is not EstimatorKind.GREEDY_MSE else 4)
    blocks = random_test_blocks(num_blocks, pattern.m, seed)

    worst_z = 0.0
    bias_failures = 0
    var_failures = 0
    worst_var_z = 0.0
    freq_failures = 0
    worst_freq_z = 0.0
    pattern_failures = 0

    mse_expected = _closed_form_mse(kind, blocks, pattern)

    for idx in range(num_blocks):
        block = Block(blocks[idx])
        report = mc_estimate(block, kind, samples, seed + idx, pattern)

        # Pattern compliance: every draw keeps exactly pattern.kept entries
        # (mc_estimate would have failed otherwise) and frequencies sum to 1.
        if abs(sum(report.pair_frequencies.values()) - 1.0) > 1e-9:
            pattern_failures += 1
        if any(len(kept) != pattern.kept for kept in report.pair_frequencies):
            pattern_failures += 1

        # Each statistical check floors the SE denominator so that the
        # reported z and the verdict agree: z > sigma is the failure
        # condition. The floor absorbs constant-sample components (an
        # always-kept entry has empirical SE 0 and a gap of float
        # rounding) without weakening detection of genuine bias.
        if kind.is_stochastic:
            diff = np.abs(report.empirical_mean - blocks[idx])
            z = float(np.max(diff / np.maximum(report.mean_se, 1e-12 / sigma)))
            worst_z = max(worst_z, z)
            if z > sigma:
                bias_failures += 1

        expected = mse_expected[idx]
        floor = 1e-9 * max(1.0, abs(expected))
        var_z = abs(report.mse_mean - expected) / max(report.mse_se, floor / sigma)
        worst_var_z = max(worst_var_z, float(var_z))
        if var_z > sigma:
            var_failures += 1

        if kind.is_stochastic:
            model = _expected_frequencies(kind, blocks[idx])
            block_freq_fail = False
            for kept_set, p in model.items():
                f = report.pair_frequencies.get(kept_set, 0.0)
                se = math.sqrt(max(p * (1.0 - p), 0.0) / samples)
                freq_z = abs(f - p) / max(se, 1e-12 / sigma)
                worst_freq_z = max(worst_freq_z, freq_z)
                if freq_z > sigma:
                    block_freq_fail = True
            observed_extra = set(report.pair_frequencies) - set(model)
            if any(report.pair_frequencies[k] > 0 for k in observed_extra):
                block_freq_fail = True
            if block_freq_fail:
                freq_failures += 1

    checks = [
        PropertyCheck(
            "pattern",
            pattern_failures == 0,
            f"{pattern_failures}/{num_blocks} blocks violated {pattern} structure",
        ),
        PropertyCheck(
            "variance",
            var_failures == 0,
            f"worst z={worst_var_z:.2f}, {var_failures}/{num_blocks} blocks outside {sigma} SE",
        ),
    ]
    if kind.is_stochastic:
        checks.append(
            PropertyCheck(
                "unbiased",
                bias_failures == 0,
                f"worst z={worst_z:.2f}, {bias_failures}/{num_blocks} blocks outside {sigma} SE",
            )
        )
        checks.append(
            PropertyCheck(
                "frequency",
                freq_failures == 0,
                f"worst z={worst_freq_z:.2f}, {freq_failures}/{num_blocks} blocks outside {sigma} SE",
            )
        )
    else:
        # Greedy is deterministic: re-pruning must reproduce the MC mean
        # exactly and match the exhaustive minimum-MSE oracle.
        greedy_fail = 0
        for idx in range(num_blocks):
            block = Block(blocks[idx])
            _, oracle_mse = brute_force_min_mse_mask(block, pattern)
            if abs(mse_expected[idx] - oracle_mse) > 1e-12 * max(1.0, oracle_mse):
                greedy_fail += 1
        checks.append(
            PropertyCheck(
                "min-mse",
                greedy_fail == 0,
                f"{greedy_fail}/{num_blocks} blocks deviate from the exhaustive oracle",
            )
        )
    return checks
