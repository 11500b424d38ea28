"""Monte Carlo estimates, order-independent reductions and two-sample tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with its standard error.

    ``clip_fraction`` is the fraction of paths on which singularity clipping
    activated (0 when no clipped functional is involved).
    """

    mean: float
    std_error: float
    n_samples: int
    clip_fraction: float = 0.0
    kurtosis: float = math.nan
    n_attempted: int | None = None

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return self.mean - z * self.std_error, self.mean + z * self.std_error

    def zscore(self, target: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.std_error


class InsufficientSamples(RuntimeError):
    """No sample landed where the estimator needs one."""


class HeavyTailError(RuntimeError):
    """Sample kurtosis exploded; the variance estimate cannot be trusted."""


def power_sums(values) -> np.ndarray:
    """``[n, sum x, sum x^2, sum x^3, sum x^4]`` for one block, exactly rounded."""
    v = np.asarray(values, dtype=float).ravel()
    return np.array(
        [v.size, math.fsum(v), math.fsum(v * v), math.fsum(v**3), math.fsum(v**4)]
    )


def combine_power_sums(blocks) -> np.ndarray:
    blocks = list(blocks)
    return np.array([math.fsum(b[i] for b in blocks) for i in range(5)])


def estimate_from_sums(sums, n_clipped: int = 0, n_attempted: int | None = None) -> MCEstimate:
    n = int(sums[0])
    if n == 0:
        raise InsufficientSamples("no samples to average")
    mean = sums[1] / n
    if n > 1:
        var = max(sums[2] - n * mean * mean, 0.0) / (n - 1)
    else:
        var = 0.0
    m2 = sums[2] / n - mean**2
    if m2 > 1e-300 * max(1.0, mean * mean):
        m4 = sums[4] / n - 4 * mean * sums[3] / n + 6 * mean**2 * sums[2] / n - 3 * mean**4
        kurt = m4 / (m2 * m2)
    else:
        kurt = math.nan
    total = n if n_attempted is None else n_attempted
    return MCEstimate(
        mean=float(mean),
        std_error=float(math.sqrt(var / n)),
        n_samples=n,
        clip_fraction=float(n_clipped) / total if total else 0.0,
        kurtosis=float(kurt),
        n_attempted=n_attempted,
    )


def estimate(values, n_clipped: int = 0) -> MCEstimate:
    return estimate_from_sums(power_sums(values), n_clipped)


def check_kurtosis(est: MCEstimate, limit: float = 1e4) -> MCEstimate:
    if est.kurtosis > limit:
        raise HeavyTailError(
            f"sample kurtosis {est.kurtosis:.3g} exceeds {limit:g}; variance not finite in practice"
        )
    return est


def richardson(coarse: MCEstimate, fine: MCEstimate, order: float = 1.0) -> MCEstimate:
    """Extrapolate two estimates at step h and h/2 assuming bias ~ h^order."""
    w = 2.0**order
    mean = (w * fine.mean - coarse.mean) / (w - 1.0)
    se = math.hypot(w * fine.std_error, coarse.std_error) / (w - 1.0)
    return MCEstimate(
        mean=mean,
        std_error=se,
        n_samples=min(coarse.n_samples, fine.n_samples),
        clip_fraction=max(coarse.clip_fraction, fine.clip_fraction),
    )


def ks_critical_value(n: int, m: int, level: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value ``c(level) sqrt((n+m)/(n m))``."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def ks_two_sample(a, b) -> tuple[float, float]:
    res = _st.ks_2samp(np.asarray(a), np.asarray(b))
    return float(res.statistic), float(res.pvalue)


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=float)
    se = v.std(ddof=1) / math.sqrt(v.size)
    z = _st.norm.ppf(0.5 + level / 2.0)
    m = float(v.mean())
    return m, m - z * se, m + z * se


def one_sided_positive(diffs, level: float = 0.99) -> tuple[bool, float]:
    """Paired one-sided test that ``E[diffs] > 0``; returns (passed, z)."""
    d = np.asarray(diffs, dtype=float)
    se = d.std(ddof=1) / math.sqrt(d.size)
    if se == 0.0:
        z = math.inf if d.mean() > 0 else -math.inf
    else:
        z = d.mean() / se
    return bool(z > _st.norm.ppf(level)), float(z)


def binomial_upper(n: int, p: float, alpha: float = 0.01) -> int:
    """Largest count not rejected by a one-sided binomial test at ``alpha``."""
    return int(_st.binom.ppf(1.0 - alpha, n, p))
