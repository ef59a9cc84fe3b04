"""MAC, parameter and wall-clock benchmark of the four attention variants."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from scaleformer.attention import ATTENTION, PROJECTION, AttentionVariant, MsaParams, build_msa
from scaleformer.autodiff import Tensor, no_grad, profile
from scaleformer.errors import ConfigError, ContractError

BENCH_SEED = 1234


def analytic_macs(variant, H: int, W: int, C: int, h: int = 1, R: int = 1) -> int:
    """Score + aggregation MACs; independent of the head count."""
    v = AttentionVariant.parse(variant)
    N = H * W
    if v is AttentionVariant.ORIGINAL:
        return 2 * N * N * C
    if v is AttentionVariant.SPATIAL_REDUCTION:
        if H % R or W % R:
            raise ConfigError(f"reduction ratio {R} does not divide {H}x{W}")
        return 2 * N * (N // (R * R)) * C
    if v is AttentionVariant.AXIAL:
        return 2 * (H * W * W * C + W * H * H * C)
    return H * H * C + W * W * C + H * H * W * C + H * W * W * C


def analytic_projection_macs(variant, H: int, W: int, C: int, R: int = 1, dw_kernel: int = 3) -> int:
    """Linear projections and convolutions around the attention core."""
    v = AttentionVariant.parse(variant)
    N = H * W
    if v is AttentionVariant.ORIGINAL:
        return 4 * N * C * C
    if v is AttentionVariant.SPATIAL_REDUCTION:
        reduced = N // (R * R)
        conv = N * C * C if R > 1 else 0
        return 2 * N * C * C + 2 * reduced * C * C + conv
    if v is AttentionVariant.AXIAL:
        return 8 * N * C * C
    return 4 * N * C * C + 4 * N * C * dw_kernel


@dataclass
class BenchRow:
    variant: str
    H: int
    W: int
    C: int
    heads: int
    R: int
    analytic_macs: int
    measured_macs: int
    analytic_projection_macs: int
    measured_projection_macs: int
    params: int
    median_s: float
    min_s: float
    trials: int


BENCH_COLUMNS = list(BenchRow.__dataclass_fields__)


def bench_one(variant, H: int, W: int, C: int, heads: int = 1, R: int = 2, trials: int = 5, dw_kernel: int = 3, seed: int = BENCH_SEED) -> BenchRow:
    if trials < 3:
        raise ConfigError(f"trials must be >= 3, got {trials}")
    v = AttentionVariant.parse(variant)
    ratio = R if v is AttentionVariant.SPATIAL_REDUCTION else 1
    params = MsaParams(C, heads, v, ratio, dw_kernel)
    rng = np.random.default_rng(seed)
    module = build_msa(params, rng)
    x = Tensor(rng.standard_normal((1, C, H, W)).astype(module.parameters()[0].dtype))
    with no_grad():
        # The profiled pass doubles as warm-up.
        with profile() as counter:
            module(x)
        times = []
        for _ in range(trials):
            t0 = time.perf_counter()
            module(x)
            times.append(time.perf_counter() - t0)
    row = BenchRow(
        v.value, H, W, C, heads, ratio,
        analytic_macs(v, H, W, C, heads, ratio), counter[ATTENTION],
        analytic_projection_macs(v, H, W, C, ratio, dw_kernel), counter[PROJECTION],
        module.num_parameters(), statistics.median(times), min(times), trials,
    )
    if row.measured_macs != row.analytic_macs or row.measured_projection_macs != row.analytic_projection_macs:
        raise ContractError(
            f"MAC mismatch for {v.value} at {H}x{W}x{C}: attention {row.measured_macs} vs {row.analytic_macs}, "
            f"projection {row.measured_projection_macs} vs {row.analytic_projection_macs}"
        )
    return row


def run_sweep(shapes, variants, trials: int = 5, heads: int = 1, R: int = 2, dw_kernel: int = 3, threads: int = 1) -> list[BenchRow]:
    """``shapes`` are (H, W, C) triples; every timing runs with ``threads`` BLAS threads."""
    rows = []
    with threadpool_limits(threads):
        for H, W, C in shapes:
            for variant in variants:
                rows.append(bench_one(variant, H, W, C, heads, R, trials, dw_kernel))
    return rows


def report_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r)
        d["median_s"] = f"{r.median_s:.6e}"
        d["min_s"] = f"{r.min_s:.6e}"
        w.writerow(d)
    return buf.getvalue()
