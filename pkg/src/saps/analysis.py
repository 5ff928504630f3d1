"""Theory verification and run metrics.

Spectral estimation of the mixing factor rho, measurement of the sparsified
consensus contraction, the consensus/convergence bound constants, bandwidth
utilisation statistics, and CSV export of per-round records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import TheoryConstants
from .errors import NumericalError, ValidationError
from .sparsify import generate_mask

CSV_HEADER = "round,pairs,bytes_per_worker,min_bw,mean_bw,consensus_err,mean_loss,cum_time"


@dataclass(frozen=True)
class RoundRecord:
    """Metrics of one synchronous round."""

    round: int
    pairs: tuple[tuple[int, int], ...]
    bytes_per_worker: float  # payload-frame bytes sent+received, averaged over workers
    min_bw: float  # bottleneck bandwidth over matched pairs (0 if none matched)
    mean_bw: float
    consensus_err: float  # sum_i ||x_i - xbar||^2
    mean_loss: float
    cum_time: float  # cumulative virtual communication time, seconds


@dataclass(frozen=True)
class SpectralEstimate:
    rho: float
    n_samples: int
    std_error: float


def consensus_error(models: np.ndarray) -> float:
    """sum_i ||x_i - xbar||^2 for models stacked as columns (N x n)."""
    xbar = models.mean(axis=1, keepdims=True)
    return float(np.sum((models - xbar) ** 2))


def second_eigenvalue(mean_matrix: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Second-largest eigenvalue of a symmetric doubly stochastic mean matrix.

    Deflates the known top eigenpair (eigenvalue 1, eigenvector 1/sqrt(n))
    and power-iterates the remainder to the requested residual.
    """
    m = np.asarray(mean_matrix, dtype=np.float64)
    n = m.shape[0]
    ones = np.full(n, 1.0 / math.sqrt(n))
    deflated = m - np.outer(ones, ones)

    rng = np.random.default_rng(0xD3F1A7E)
    v = rng.normal(size=n)
    v -= v.mean()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise NumericalError("degenerate start vector")
    v /= norm
    lam = 0.0
    for _ in range(max_iter):
        u = deflated @ v
        nu = np.linalg.norm(u)
        if nu < tol:
            return 0.0
        lam = float(v @ u)
        if np.linalg.norm(u - lam * v) <= tol:
            return max(lam, 0.0)
        v = u / nu
    raise NumericalError(f"power iteration did not reach residual {tol} in {max_iter} steps")


def estimate_rho(selector, n_samples: int, warmup: int | None = None) -> SpectralEstimate:
    """Sample gossip matrices from a selector in stationary operation.

    Averages W^T W over the samples and extracts the second-largest
    eigenvalue; the standard error comes from batch means over 10 chunks.
    """
    if n_samples < 100:
        raise ValidationError(f"need n_samples >= 100, got {n_samples}")
    if warmup is None:
        warmup = getattr(selector, "suggested_warmup", 0)
    for _ in range(warmup):
        selector.next_round()
    n = selector.n
    total = np.zeros((n, n))
    n_batches = 10
    batch_tot = np.zeros((n_batches, n, n))
    for k in range(n_samples):
        w, _ = selector.next_round()
        wtw = w.weights.T @ w.weights
        total += wtw
        batch_tot[k * n_batches // n_samples] += wtw
    rho = second_eigenvalue(total / n_samples)
    batch_sizes = np.bincount(
        [k * n_batches // n_samples for k in range(n_samples)], minlength=n_batches
    )
    batch_rhos = [second_eigenvalue(batch_tot[b] / batch_sizes[b]) for b in range(n_batches)]
    se = float(np.std(batch_rhos, ddof=1) / math.sqrt(n_batches))
    return SpectralEstimate(rho, n_samples, se)


def measure_contraction(
    n: int,
    c: int,
    selector,
    t_max: int,
    n_trials: int,
    rng: np.random.Generator,
    n_dims: int = 16,
) -> np.ndarray:
    """Mean e_t / e_0 over trials of pure sparsified gossip (gamma = 0).

    Each trial starts from fresh random models and consumes the next t_max
    rounds of the (stationary, continuing) selector stream.  Returns the
    array of mean ratios indexed by t = 0..t_max; comparison against a bound
    is the caller's job (see `check_contraction_bound`).
    """
    if n_trials < 1 or t_max < 1:
        raise ValidationError("need n_trials >= 1 and t_max >= 1")
    ratios = np.zeros((n_trials, t_max + 1))
    seed_stream = rng.integers(0, 1 << 63, size=(n_trials, t_max))
    for trial in range(n_trials):
        x = rng.normal(size=(n_dims, n))
        e0 = consensus_error(x)
        ratios[trial, 0] = 1.0
        for t in range(1, t_max + 1):
            w, _ = selector.next_round()
            mask = generate_mask(int(seed_stream[trial, t - 1]), c, n_dims)
            idx = mask.indices
            x[idx] = x[idx] @ w.weights
            ratios[trial, t] = consensus_error(x) / e0
    return ratios.mean(axis=0)


def contraction_bound(p: float, rho: float, t_max: int, *, squared: bool = True) -> np.ndarray:
    """(q + p*rho^2)^t (as stated) or (q + p*rho)^t (the rate the sampled
    process provably follows) for t = 0..t_max."""
    factor = (1.0 - p) + p * (rho * rho if squared else rho)
    return factor ** np.arange(t_max + 1)


def d_constants(p: float, rho: float) -> tuple[float, float]:
    """Consensus-bound constants D1 = 2/(1 - sqrt(q + p*rho))^2 and
    D2 = 2/(1 - (q + p*rho^2))."""
    if not (0 < p <= 1):
        raise ValidationError(f"p must be in (0, 1], got {p}")
    if not (0 <= rho < 1):
        raise ValidationError(f"rho must be in [0, 1), got {rho}")
    q = 1.0 - p
    base1 = 1.0 - math.sqrt(q + p * rho)
    base2 = 1.0 - (q + p * rho * rho)
    if base1 <= 0 or base2 <= 0:
        raise ValidationError("degenerate mixing: q + p*rho reaches 1")
    return 2.0 / (base1 * base1), 2.0 / base2


def theorem_bound(
    k: TheoryConstants,
    n: int,
    t_rounds: int,
    d1: float,
    d2: float,
    x0_consensus: float,
) -> float:
    """Closed-form bound on the running average of ||grad f(xbar_t)||^2.

    Four terms: stochastic noise O(1/sqrt(nT)), optimality-gap and mixing
    O(1/T), heterogeneity O(1/T), and the initial-consensus term, which
    vanishes when all workers start from the same model.
    """
    if k.sigma == 0:
        raise ValidationError(
            "sigma must be positive: the bound's step size divides by sigma"
        )
    if t_rounds < 1:
        raise ValidationError("need T >= 1")
    if x0_consensus < 0:
        raise ValidationError("x0_consensus is a squared norm and must be >= 0")
    sigma, zeta, lip, gap = k.sigma, k.zeta, k.lipschitz, k.f0_minus_fstar
    term1 = (6.0 * sigma * gap + 3.0 * sigma) / (2.0 * math.sqrt(n * t_rounds))
    term2 = (6.0 * math.sqrt(3.0) * lip * gap + 2.0 * lip**2 * d1 * n) / t_rounds
    term3 = 3.0 * lip**2 * d1 * n * zeta**2 / (sigma**2 * t_rounds)
    term4 = 2.0 * lip**2 * d2 * x0_consensus / (n * t_rounds)
    return term1 + term2 + term3 + term4


@dataclass(frozen=True)
class BandwidthStats:
    per_round_min: np.ndarray
    per_round_mean: np.ndarray
    run_min: float  # average over rounds of the per-round bottleneck
    run_mean: float


def bandwidth_stats(records: list[RoundRecord]) -> BandwidthStats:
    """Bottleneck and mean matched-pair bandwidth, per round and run-averaged.

    Rounds with no matched pair are excluded from the run averages.
    """
    if not records:
        raise ValidationError("no records")
    mins = np.array([r.min_bw for r in records])
    means = np.array([r.mean_bw for r in records])
    active = np.array([len(r.pairs) > 0 for r in records])
    if not active.any():
        raise ValidationError("no round matched any pair")
    return BandwidthStats(
        per_round_min=mins,
        per_round_mean=means,
        run_min=float(mins[active].mean()),
        run_mean=float(means[active].mean()),
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_csv(records: list[RoundRecord], path: str | Path) -> None:
    """One row per round, deterministic 17-significant-digit formatting."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.round),
                    str(len(r.pairs)),
                    _fmt(r.bytes_per_worker),
                    _fmt(r.min_bw),
                    _fmt(r.mean_bw),
                    _fmt(r.consensus_err),
                    _fmt(r.mean_loss),
                    _fmt(r.cum_time),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")
