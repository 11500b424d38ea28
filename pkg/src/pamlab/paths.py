"""Monte Carlo over Brownian bridges and Bessel processes.

The hot loops live in :mod:`pamlab._kernels` (compiled) with a NumPy
fallback chosen at import time; both consume draws in the same order.
Paths are simulated in fixed-size blocks, block ``b`` drawing from
``stream.generator(b)``, and block results are combined with exactly
rounded sums. Estimates are therefore identical for any worker count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import stats
from .special import DomainError, alpha_of_eta
from .stats import InsufficientSamples, MCEstimate
from .streams import SeedStream, as_stream, parallel_map

if os.environ.get("PAMLAB_BACKEND", "").lower() == "python":
    from . import _kernels_py as _k
else:
    try:
        from . import _kernels as _k
    except ImportError:  # extension not built
        from . import _kernels_py as _k

BACKEND = _k.BACKEND
DEFAULT_CLIP = 1e4
DEFAULT_BLOCK = 2048


def kernels(backend: str | None = None):
    """Kernel module for ``backend`` ('cython' or 'python'); default is the import-time choice."""
    if backend is None:
        return _k
    if backend == "python":
        from . import _kernels_py

        return _kernels_py
    from . import _kernels

    return _kernels


@dataclass(frozen=True)
class BridgePath:
    times: np.ndarray
    positions: np.ndarray


def _point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != d:
        raise ValueError(f"point {x} is not in R^{d}")
    return x


def sample_brownian_bridge(d: int, start, end, t: float, m: int, rng, n: int | None = None):
    """Brownian bridge on the uniform grid ``k t / m`` by sequential Gaussian conditioning.

    ``rng`` is a numpy Generator. Returns a :class:`BridgePath`; with ``n``
    given, ``positions`` has shape ``(n, m + 1, d)``. The last position is
    set to ``end``, never computed.
    """
    if m < 2:
        raise ValueError("a bridge needs at least m = 2 intervals")
    if t <= 0:
        raise DomainError("bridge duration must be positive")
    start, end = _point(start, d), _point(end, d)
    count = 1 if n is None else n
    h = t / m
    pos = np.empty((count, m + 1, d))
    pos[:, 0] = start
    x = np.broadcast_to(start, (count, d)).copy()
    for k in range(1, m):
        tau = t - (k - 1) * h
        x = x + (end - x) * (h / tau) + math.sqrt(h * (tau - h) / tau) * rng.standard_normal((count, d))
        pos[:, k] = x
    pos[:, m] = end
    times = np.linspace(0.0, t, m + 1)
    return BridgePath(times, pos[0] if n is None else pos)


def _check_eta(d: int, eta: float) -> None:
    alpha_of_eta(d, eta)  # raises outside [0, (d-2)^2/8]


def _bridge_task(task, t, m, mode, clip, scale, table, r_max, backend):
    stream, b, starts, ends, eta, weights = task
    k = kernels(backend)
    gen = stream.generator(b)
    integral, flags = k.bridge_block(gen, starts, ends, t, m, mode, clip, scale, table, r_max)
    vals = np.exp(eta * integral)
    if weights is not None:
        vals = vals * weights
    return stats.power_sums(vals), int(flags.sum())


def _run_blocks(tasks, fn, workers):
    results = parallel_map(fn, tasks, workers)
    sums = stats.combine_power_sums(r[0] for r in results)
    clipped = sum(r[1] for r in results)
    return sums, clipped


def exp_functional_mc(
    d: int,
    eta: float,
    start,
    end,
    t: float,
    m: int,
    n_paths: int,
    clip: float = DEFAULT_CLIP,
    rng=0,
    workers: int = 1,
    block: int = DEFAULT_BLOCK,
    backend: str | None = None,
) -> MCEstimate:
    """Estimate ``E[exp(eta int_0^t min(|X_s|^-2, clip) ds)]`` over Brownian bridges ``start -> end``.

    Trapezoidal rule on ``m`` uniform steps. Clipping can only lower the
    functional, so the estimate is biased low relative to the unclipped moment.
    """
    _check_eta(d, eta)
    start, end = _point(start, d), _point(end, d)
    if not np.any(start) and not np.any(end):
        raise DomainError("bridge pinned at the origin at both ends: functional is a.s. infinite")
    if clip <= 0:
        raise ValueError("clip must be positive")
    if eta == 0.0:
        return MCEstimate(1.0, 0.0, n_paths, 0.0)
    stream = as_stream(rng, "exp_functional")
    tasks = []
    for b, lo in enumerate(range(0, n_paths, block)):
        cnt = min(block, n_paths - lo)
        tasks.append(
            (stream, b, np.tile(start, (cnt, 1)), np.tile(end, (cnt, 1)), eta, None)
        )
    fn = partial(_bridge_task, t=t, m=m, mode=0, clip=clip, scale=1.0, table=None, r_max=1.0, backend=backend)
    sums, clipped = _run_blocks(tasks, fn, workers)
    return stats.estimate_from_sums(sums, clipped)


def _brownian_task(task, t, m, clip, backend):
    stream, b, start, cnt = task
    k = kernels(backend)
    integral, radius, flags = k.brownian_block(stream.generator(b), start, t, m, cnt, 0, clip)
    return integral, radius, flags


def brownian_radial_functional(d, a, t, m, n_paths, clip=DEFAULT_CLIP, rng=0, workers=1,
                               block=DEFAULT_BLOCK, backend=None):
    """Per-path ``(int_0^t min(R_s^-2, clip) ds, R_t, clipped)`` for ``R = |B|``, ``B_0 = a e_1``."""
    if a <= 0:
        raise DomainError("Bessel start a must be positive")
    stream = as_stream(rng, "bessel_binned")
    start = np.zeros(d)
    start[0] = a
    tasks = [(stream, b, start, min(block, n_paths - lo)) for b, lo in enumerate(range(0, n_paths, block))]
    out = parallel_map(partial(_brownian_task, t=t, m=m, clip=clip, backend=backend), tasks, workers)
    integral = np.concatenate([o[0] for o in out])
    radius = np.concatenate([o[1] for o in out])
    flags = np.concatenate([o[2] for o in out])
    return integral, radius, flags


def binned_estimate(integral, radius, flags, eta: float, b: float, halfwidth: float) -> MCEstimate:
    """Ratio estimator of the Bessel-bridge moment from endpoint binning.

    Mean of ``exp(eta A) 1{R_t in bin}`` divided by the empirical bin
    probability; the standard error is that of the conditional mean given the
    number of in-bin paths.
    """
    inside = np.abs(radius - b) <= halfwidth
    n_in = int(inside.sum())
    if n_in == 0:
        raise InsufficientSamples(
            f"no path ended in [{b - halfwidth}, {b + halfwidth}]; increase n_paths or the bin"
        )
    vals = np.exp(eta * integral[inside])
    est = stats.estimate_from_sums(stats.power_sums(vals), int(flags[inside].sum()), n_attempted=radius.size)
    return MCEstimate(
        mean=est.mean,
        std_error=est.std_error,
        n_samples=n_in,
        clip_fraction=float(flags[inside].mean()),
        kurtosis=est.kurtosis,
        n_attempted=radius.size,
    )


def bessel_binned_exp_moment(
    d: int,
    eta: float,
    a: float,
    b: float,
    bin_halfwidth: float,
    t: float,
    m: int,
    n_paths: int,
    rng=0,
    clip: float = DEFAULT_CLIP,
    workers: int = 1,
    block: int = DEFAULT_BLOCK,
    backend: str | None = None,
) -> MCEstimate:
    """Bessel-bridge moment from unconditioned Brownian paths, binned on ``|B_t|``."""
    _check_eta(d, eta)
    if b <= 0 or bin_halfwidth <= 0 or bin_halfwidth >= b:
        raise DomainError("need 0 < bin_halfwidth < b")
    integral, radius, flags = brownian_radial_functional(d, a, t, m, n_paths, clip, rng, workers, block, backend)
    if eta == 0.0:
        inside = np.abs(radius - b) <= bin_halfwidth
        if not inside.any():
            raise InsufficientSamples("no path ended in the bin")
        return MCEstimate(1.0, 0.0, int(inside.sum()), 0.0, n_attempted=n_paths)
    return binned_estimate(integral, radius, flags, eta, b, bin_halfwidth)


def pair_interaction_mc(
    params,
    n: int,
    starts,
    ends,
    t: float,
    m: int,
    n_paths: int,
    clip: float = DEFAULT_CLIP,
    rng=0,
    workers: int = 1,
    block: int = DEFAULT_BLOCK,
    backend: str | None = None,
) -> MCEstimate:
    """Estimate ``E[exp(sum_{j<k} kappa^2 int_0^t |X^j_s - X^k_s|^-2 ds)]`` over ``n`` independent bridges.

    The cap ``clip`` applies to ``|(X^j - X^k)/sqrt(2)|^-2``, the quantity the
    single-bridge estimator clips, so for ``n = 2`` both estimators sample the
    same functional.
    """
    d = params.d
    starts = np.asarray(starts, dtype=float).reshape(n, d)
    ends = np.asarray(ends, dtype=float).reshape(n, d)
    if n < 2:
        raise ValueError("pair interaction needs n >= 2 bridges")
    if params.kappa == 0.0:
        return MCEstimate(1.0, 0.0, n_paths, 0.0)
    for j in range(n):
        for k in range(j + 1, n):
            if np.array_equal(starts[j], starts[k]) and np.array_equal(ends[j], ends[k]):
                raise DomainError("two bridges share both endpoints; clipping would dominate")
    eta = params.kappa**2 / 2.0
    stream = as_stream(rng, "pair_interaction")
    tasks = [(stream, b, min(block, n_paths - lo)) for b, lo in enumerate(range(0, n_paths, block))]
    fn = partial(_pair_task, starts=starts, ends=ends, t=t, m=m, clip=clip, eta=eta, backend=backend)
    sums, clipped = _run_blocks(tasks, fn, workers)
    return stats.estimate_from_sums(sums, clipped)


def _pair_task(task, starts, ends, t, m, clip, eta, backend):
    stream, b, cnt = task
    k = kernels(backend)
    integral, flags = k.pair_block(stream.generator(b), starts, ends, t, m, cnt, 0, clip, 1.0 / math.sqrt(2.0))
    return stats.power_sums(np.exp(eta * integral)), int(flags.sum())


def weighted_bridge_mc(starts, ends, weights, eta, t, m, rng_stream: SeedStream, block_index: int,
                       mode=0, clip=DEFAULT_CLIP, scale=1.0, table=None, r_max=1.0, backend=None):
    """Per-path ``weights * exp(eta * int f(scale |X_s|) ds)`` for bridges with per-path endpoints."""
    k = kernels(backend)
    integral, flags = k.bridge_block(
        rng_stream.generator(block_index),
        np.ascontiguousarray(starts, dtype=float),
        np.ascontiguousarray(ends, dtype=float),
        t, m, mode, clip, scale, table, r_max,
    )
    return weights * np.exp(eta * integral), flags


def straight_line_functional(d: int, eta: float, start, end, t: float, m: int = 4096) -> float:
    """``exp(eta int_0^t |x(s)|^-2 ds)`` along the straight segment ``start -> end``."""
    start, end = _point(start, d), _point(end, d)
    s = np.linspace(0.0, 1.0, m + 1)[:, None]
    x = start + s * (end - start)
    f = 1.0 / np.sum(x * x, axis=1)
    return math.exp(eta * t * np.trapezoid(f, dx=1.0 / m))


def holder_pair_bound(params, starts, ends, t, m, n_paths, clip=DEFAULT_CLIP, rng=0, workers=1,
                      backend=None) -> tuple[float, list[MCEstimate]]:
    """Product over pairs of ``E[exp(n(n-1) kappa^2 int |X^j - X^k|^-2)]^(1/(n(n-1)))``.

    Each factor is a single-bridge moment with ``eta = n(n-1) kappa^2 / 2`` on
    the normalized difference bridge; requires that ``eta <= (d-2)^2/8``.
    """
    d = params.d
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    n = starts.shape[0]
    p = n * (n - 1)
    eta = p * params.kappa**2 / 2.0
    stream = as_stream(rng, "holder")
    bound = 1.0
    factors = []
    for j in range(n):
        for k in range(j + 1, n):
            est = exp_functional_mc(
                d, eta, (starts[j] - starts[k]) / math.sqrt(2.0), (ends[j] - ends[k]) / math.sqrt(2.0),
                t, m, n_paths, clip, stream.child(f"{j}-{k}"), workers, backend=backend,
            )
            factors.append(est)
            bound *= est.mean ** (1.0 / p)
    return bound, factors
