"""Pure-NumPy fallback for :mod:`pamlab._kernels`.

Same draw order and the same floating-point operation sequence per path, so
both backends return identical arrays for identical generators.
"""

import numpy as np

BACKEND = "python"


class _Integrand:
    def __init__(self, mode, clip, scale, table, r_max):
        self.mode = mode
        self.clip = clip
        self.scale2 = scale * scale
        self.table = np.zeros(2) if table is None else np.ascontiguousarray(table, dtype=float)
        self.r_max = r_max
        n = self.table.shape[0]
        self.dr = r_max / (n - 1) if n > 1 else 1.0

    def __call__(self, r2, flags):
        r2 = r2 * self.scale2
        if self.mode == 0:
            hit = r2 * self.clip <= 1.0
            flags |= hit
            with np.errstate(divide="ignore"):
                return np.where(hit, self.clip, 1.0 / np.where(hit, 1.0, r2))
        r = np.sqrt(r2)
        tab = self.table
        outside = r >= self.r_max
        pos = np.where(outside, 0.0, r) / self.dr
        i = pos.astype(np.intp)
        w = pos - i
        inner = (1.0 - w) * tab[i] + w * tab[np.minimum(i + 1, tab.size - 1)]
        with np.errstate(divide="ignore"):
            tail = tab[-1] * (self.r_max * self.r_max) / np.where(outside, r2, 1.0)
        return np.where(outside, tail, inner)


def _sqnorm(x):
    # left-to-right accumulation over coordinates, like the compiled loop
    acc = x[..., 0] * x[..., 0]
    for j in range(1, x.shape[-1]):
        acc = acc + x[..., j] * x[..., j]
    return acc


def bridge_block(generator, starts, ends, t, m, mode=0, clip=1e4, scale=1.0, table=None, r_max=1.0):
    starts = np.ascontiguousarray(starts, dtype=float)
    ends = np.ascontiguousarray(ends, dtype=float)
    n, d = starts.shape
    f = _Integrand(mode, clip, scale, table, r_max)
    h = t / m
    flags = np.zeros(n, dtype=bool)
    x = starts.copy()
    acc = 0.5 * f(_sqnorm(x), flags)
    for k in range(1, m):
        tau = t - (k - 1) * h
        frac = h / tau
        sd = np.sqrt(h * (tau - h) / tau)
        x = x + (ends - x) * frac + sd * generator.standard_normal((n, d))
        acc = acc + f(_sqnorm(x), flags)
    acc = acc + 0.5 * f(_sqnorm(ends), flags)
    return acc * h, flags.astype(np.uint8)


def brownian_block(generator, start, t, m, n, mode=0, clip=1e4, scale=1.0, table=None, r_max=1.0):
    start = np.asarray(start, dtype=float)
    d = start.shape[0]
    f = _Integrand(mode, clip, scale, table, r_max)
    h = t / m
    sh = np.sqrt(t / m)
    flags = np.zeros(n, dtype=bool)
    x = np.broadcast_to(start, (n, d)).copy()
    acc = 0.5 * f(_sqnorm(x), flags)
    for k in range(1, m + 1):
        x = x + sh * generator.standard_normal((n, d))
        r2 = _sqnorm(x)
        if k < m:
            acc = acc + f(r2, flags)
        else:
            acc = acc + 0.5 * f(r2, flags)
    return acc * h, np.sqrt(r2), flags.astype(np.uint8)


def pair_block(generator, starts, ends, t, m, n, mode=0, clip=1e4, scale=1.0, table=None, r_max=1.0):
    starts = np.ascontiguousarray(starts, dtype=float)
    ends = np.ascontiguousarray(ends, dtype=float)
    nb, d = starts.shape
    f = _Integrand(mode, clip, scale, table, r_max)
    h = t / m
    flags = np.zeros(n, dtype=bool)
    x = np.broadcast_to(starts, (n, nb, d)).copy()
    acc = np.zeros(n)
    for k in range(0, m + 1):
        if k == m:
            x = np.broadcast_to(ends, (n, nb, d)).copy()
        elif k > 0:
            tau = t - (k - 1) * h
            frac = h / tau
            sd = np.sqrt(h * (tau - h) / tau)
            x = x + (ends - x) * frac + sd * generator.standard_normal((n, nb, d))
        w = 0.5 if (k == 0 or k == m) else 1.0
        for i in range(nb):
            for l in range(i + 1, nb):
                acc = acc + w * f(_sqnorm(x[:, i] - x[:, l]), flags)
    return acc * h, flags.astype(np.uint8)
