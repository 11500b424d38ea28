"""Command-line runner: ``pamlab <subcommand> [flags]``.

Every subcommand resolves a :class:`~pamlab.config.RunConfig` (from
``--config`` plus flag overrides), echoes it, writes its outputs into
``--out`` and finishes with ``manifest.json`` listing a SHA-256 checksum per
output file. Exit status: 0 success, 1 failed assertion, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np
import yaml

from . import experiments as ex
from . import special
from .chaos import chaos_l2_norm_quadrature, chaos_terms, partial_sum_solution
from .config import ConfigError, RunConfig, RunManifest, parse_config, render_config, test_function
from .functions import GaussianBump
from .lattice import ResolutionError
from .moments import DiscreteMeasure, first_moment_exact, h_alpha_norm, second_moment_bridge_rhs
from .noise import build_kernels, empirical_covariance, sample_noise_increment, write_snapshot
from .paths import bessel_binned_exp_moment, pair_interaction_mc
from .spde import run_ensemble
from .streams import SeedStream

__all__ = ["main", "dispatch", "write_csv", "fmt"]

SUBCOMMANDS = ("exact", "bridge-moment", "pair-moment", "noise-check", "simulate", "chaos-verify", "moments",
               "experiment")


class AssertionFailed(Exception):
    pass


def fmt(x) -> str:
    """Locale-independent full-precision text for a number."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _vectors(text: str, d: int):
    """``"x,y,z;x,y,z"`` -> list of points."""
    pts = [[float(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
    if any(len(p) != d for p in pts):
        raise ConfigError(f"expected points with {d} coordinates, got {text!r}")
    return pts


class _Run:
    """Output directory, manifest and config echo for one subcommand invocation."""

    def __init__(self, config: RunConfig, command: str, out_dir: str):
        self.config = config
        self.out = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.manifest = RunManifest.start(config, command)
        text = render_config(config)
        sys.stdout.write("# resolved configuration\n" + text)
        self.text("config.yaml", text)

    def path(self, name):
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)
        self.manifest.record(self.out, name)

    def text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8") as fh:
            fh.write(text)
        self.manifest.record(self.out, name)

    def binary(self, name):
        self.manifest.record(self.out, name)

    def finish(self):
        self.manifest.write(self.out)


# -- subcommands ----------------------------------------------------------------------


def _cmd_exact(args, cfg, run):
    q = args.quantity
    d = cfg["model"]["d"]
    eps = cfg.epsilon
    if q == "alpha":
        value = special.alpha_of_eta(d, args.eta)
    elif q == "density":
        value = special.bessel_transition_density(d, args.t, args.a, args.b)
    elif q == "bridge-moment":
        value = special.bridge_exp_moment_exact(d, args.eta, args.a, args.b, args.t)
    elif q == "mollified-h":
        value = special.mollified_h(d, eps, args.rho)
    else:
        value = special.riesz_constant(d)
    print(repr(float(value)))
    run.csv("exact.csv", ("quantity", "d", "eta", "t", "a", "b", "epsilon", "rho", "value"),
            [(q, d, args.eta, args.t, args.a, args.b, eps, args.rho, value)])


def _cmd_bridge_moment(args, cfg, run):
    p = cfg["paths"]
    d = cfg["model"]["d"]
    est = bessel_binned_exp_moment(d, args.eta, args.a, args.b, p["bin_halfwidth"], args.t, p["m"], p["n_paths"],
                                   SeedStream(cfg.seed, "bridge-moment"), p["clip"], args.workers, p["block"])
    exact = special.bridge_exp_moment_exact(d, args.eta, args.a, args.b, args.t)
    print(f"estimate {fmt(est.mean)} +- {fmt(est.std_error)}  exact {fmt(exact)}")
    run.csv("bridge_moment.csv", ("d", "eta", "a", "b", "t", "bin_halfwidth", "m", "n_in_bin", "estimate",
                                  "std_error", "clip_fraction", "exact", "zscore"),
            [(d, args.eta, args.a, args.b, args.t, p["bin_halfwidth"], p["m"], est.n_samples, est.mean,
              est.std_error, est.clip_fraction, exact, est.zscore(exact))])


def _cmd_pair_moment(args, cfg, run):
    p = cfg["paths"]
    params = cfg.model
    d = params.d
    starts, ends = _vectors(args.starts, d), _vectors(args.ends, d)
    if len(starts) != len(ends):
        raise ConfigError("--starts and --ends need the same number of points")
    est = pair_interaction_mc(params, len(starts), starts, ends, args.t, p["m"], p["n_paths"], p["clip"],
                              SeedStream(cfg.seed, "pair-moment"), args.workers, p["block"])
    print(f"estimate {fmt(est.mean)} +- {fmt(est.std_error)}")
    run.csv("pair_moment.csv", ("n", "t", "m", "n_paths", "estimate", "std_error", "clip_fraction"),
            [(len(starts), args.t, p["m"], p["n_paths"], est.mean, est.std_error, est.clip_fraction)])


def _cmd_noise_check(args, cfg, run):
    params, lat, eps = cfg.model, cfg.lattice, cfg.epsilon
    kern = build_kernels(params, eps, lat)
    dt = cfg.dt or lat.cell**2 / 2.0
    stream = SeedStream(cfg.seed, "noise-check")
    gen = stream.field_generator(0)
    lags = [tuple(int(v) for v in p) for p in _vectors(args.lags, lat.d)]

    def increments():
        for i in range(args.n_increments):
            inc = sample_noise_increment(kern, dt, gen)
            if i == 0 and args.snapshot:
                write_snapshot(run.path("noise_snapshot.bin"), inc.field, dt, eps)
                run.binary("noise_snapshot.bin")
            yield inc

    rows_cov = empirical_covariance(increments(), lags)
    rows, ok = [], True
    for r in rows_cov:
        target = dt * kern.h_at(r.lag)
        z = (r.estimate - target) / r.std_error if r.std_error > 0 else 0.0
        ok &= abs(z) < 4.0
        rows.append((" ".join(map(str, r.lag)), float(np.linalg.norm(r.lag)) * lat.cell, r.estimate, r.std_error,
                     target, z))
    run.csv("noise_covariance.csv", ("lag", "distance", "estimate", "std_error", "dt_h", "zscore"), rows)
    r_tab = kern.h.radii
    sel = (r_tab >= 10 * eps) & (r_tab <= lat.box_length / 4)
    run.csv("noise_kernel.csv", ("r", "h", "h_r2"), [(r, h, h * r * r) for r, h in zip(r_tab, kern.h.values)])
    ratio = kern.h.values[sel] * r_tab[sel] ** 2
    print(f"covariance within 4 SE: {ok}; h r^2 range over [10 eps, L/4]: "
          f"{fmt(ratio.min()) if ratio.size else 'n/a'} .. {fmt(ratio.max()) if ratio.size else 'n/a'}")
    if not ok:
        raise AssertionFailed("empirical covariance outside 4 standard errors")


def _observable_rows(ens, obs):
    header = ["member", "t", "total_mass"]
    header += [f"ball_{i}" for i in range(len(obs.balls))]
    header += [f"test_{i}" for i in range(len(obs.tests))]
    header += [f"quadratic_{i}" for i in range(len(obs.quadratic))]
    header += ["qv", "bracket"]
    rows = []
    for k in range(len(ens)):
        for j, t in enumerate(ens.times):
            rows.append([k, t, ens.total_mass[k, j], *ens.ball_masses[k, j], *ens.test_integrals[k, j],
                         *ens.quadratic[k, j], ens.qv[k, j], ens.bracket[k, j]])
    return header, rows


def _cmd_simulate(args, cfg, run):
    obs = cfg.observables
    ens = run_ensemble(cfg.model, cfg.measure, cfg.epsilon, cfg.lattice, cfg.t_end, cfg.dt, obs,
                       cfg["run"]["n_ensemble"], SeedStream(cfg.seed, "simulate"), args.workers)
    header, rows = _observable_rows(ens, obs)
    run.csv("simulate.csv", header, rows)


def _cmd_chaos_verify(args, cfg, run):
    N = cfg["chaos"]["order"]
    paired = cfg["chaos"]["paired"]
    obs = cfg.observables
    if not obs.tests:
        raise ConfigError("chaos-verify needs at least one observables.tests entry")
    stream = SeedStream(cfg.seed, "simulate")
    n = cfg["run"]["n_ensemble"]
    runs = [chaos_terms(cfg.model, cfg.measure, cfg.epsilon, cfg.lattice, cfg.t_end, cfg.dt, N, obs, stream, k, paired)
            for k in range(n)]
    orders = np.stack([r.orders[-1, :, 0] for r in runs])  # (n, N+1)
    rows = []
    for k in range(N + 1):
        v = orders[:, k]
        rows.append((k, v.mean(), v.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0, v.var(ddof=1) if n > 1 else 0.0,
                     (v * v).mean()))
    run.csv("chaos_variance.csv", ("order", "mean", "mean_std_error", "variance", "second_moment"), rows)
    if paired:
        u = np.array([r.spde[-1, 0] for r in runs])
        res_rows = []
        for k in range(N + 1):
            uN = np.array([partial_sum_solution(r, k)[-1, 0] for r in runs])
            sq = (u - uN) ** 2
            res_rows.append((k, sq.mean(), sq.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0, (u * u).mean()))
        run.csv("chaos_residual.csv", ("N", "mean_sq_residual", "std_error", "spde_second_moment"), res_rows)


def _discrete_measure(cfg) -> DiscreteMeasure:
    ini = cfg["init"]
    if ini["kind"] == "atom_cloud":
        return DiscreteMeasure.from_atoms([(a[:-1], a[-1]) for a in ini["atoms"]])
    if ini["kind"] == "lebesgue":
        return DiscreteMeasure.lebesgue(ini["intensity"])
    raise ConfigError("moments need init.kind atom_cloud or lebesgue")


def _cmd_moments(args, cfg, run):
    mu = _discrete_measure(cfg)
    params = cfg.model
    tests = cfg["observables"]["tests"]
    f = test_function(tests[0]) if tests else GaussianBump([0.0] * params.d, 0.5)
    t = cfg.t_end
    delta = cfg["init"]["delta"]
    q = args.quantity
    rows = []
    if q == "first":
        value = first_moment_exact(mu, f, t)
        rows.append((q, value, 0.0))
    elif q == "alpha-norm":
        value = h_alpha_norm(mu, params.alpha, args.tilt, params.d, include_self=not args.distinct_pairs)
        rows.append((q, value, 0.0))
    elif q == "bridge-rhs":
        p = cfg["paths"]
        est = second_moment_bridge_rhs(params, mu, f, t, p["n_paths"], p["m"], p["clip"],
                                       SeedStream(cfg.seed, "moments"), cfg.epsilon, delta, args.workers, p["block"])
        rows.append((q, est.mean, est.std_error))
    else:
        for n in range(args.order + 1):
            rows.append((f"chaos-l2-{n}", chaos_l2_norm_quadrature(params, mu, f, t, n, cfg.epsilon, delta), 0.0))
    for r in rows:
        print(f"{r[0]} {fmt(r[1])} +- {fmt(r[2])}")
    run.csv("moments.csv", ("quantity", "value", "std_error"), rows)


def run_experiment(cfg: RunConfig, name: str, workers: int = 1) -> ex.ExperimentReport:
    """Run experiment ``name`` with the parameters and master seed of ``cfg``."""
    e = cfg["experiment"]
    if e["name"] not in (None, name):
        raise ConfigError(f"config describes experiment {e['name']!r}, not {name!r}")
    if e["name"] is None:
        cfg = parse_config(render_config(cfg), {"experiment.name": name})
        e = cfg["experiment"]
    params, lat, eps, dt = cfg.model, cfg.lattice, cfg.epsilon, cfg.dt
    n = cfg["run"]["n_ensemble"]
    seed = SeedStream(cfg.seed, name)
    w = workers
    if name == "duality":
        d = params.d
        f = test_function(e["f"]) if e["f"] else GaussianBump([0.0] * d, 0.5)
        g = test_function(e["g"]) if e["g"] else GaussianBump([0.3] + [0.0] * (d - 1), 0.4)
        rep = ex.duality_experiment(params, f, g, e["t"], eps, lat, n, seed, dt, w, e["bias_budget"],
                                    int(e["null_repetitions"]), int(e["null_ensemble"]), e["level"])
    elif name == "scaling":
        rep = ex.scaling_experiment(params, eps, lat, e["t"], e["c"], n, seed, e["intensity"], dt, w, e["bias_budget"],
                                    int(e["null_repetitions"]), int(e["null_ensemble"]), e["level"])
    elif name == "total-mass":
        rep = ex.total_mass_martingale_check(params, cfg.measure, eps, lat, cfg.t_end, n, seed, int(e["n_times"]), dt,
                                             w, e["qv_tolerance"])
    elif name == "death":
        rep = ex.death_diagnostic(params, cfg.measure, eps, lat, e["t_grid"], n, seed, dt, w, e["level"])
    elif name == "singularity":
        eps_list = e["epsilons"] or [eps]
        rep = ex.singularity_diagnostic(params, eps_list, lat, e["t"], n, seed, e["radii"], e["intensity"], dt, w,
                                        e["slope_tolerance"], e["level"], int(e["n_boot"]))
    elif name == "supermartingale":
        rep = ex.supermartingale_rho_check(params, e["rho"], cfg.measure, eps, lat, cfg.t_end, n, seed, e["tilt"],
                                           int(e["n_times"]), dt, w, e["level"])
    else:
        rep = ex.local_extinction_check(params, eps, lat, e["t_grid"], n, seed, e["radius"], e["intensity"],
                                        e["theta_fraction"], dt, w, e["level"])
    return rep


def _cmd_experiment(args, cfg, run):
    name = args.name
    rep = run_experiment(cfg, name, args.workers)
    run.text("report.yaml", yaml.safe_dump(rep.to_dict(), sort_keys=False))
    for series, (header, rows) in rep.series.items():
        run.csv(f"{series}.csv", header, rows)
    for a in rep.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'}  {a.name}: {fmt(a.statistic)} vs {fmt(a.threshold)}")
    if not rep.passed:
        raise AssertionFailed(f"experiment {name} failed")


HANDLERS = {
    "exact": _cmd_exact,
    "bridge-moment": _cmd_bridge_moment,
    "pair-moment": _cmd_pair_moment,
    "noise-check": _cmd_noise_check,
    "simulate": _cmd_simulate,
    "chaos-verify": _cmd_chaos_verify,
    "moments": _cmd_moments,
    "experiment": _cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="64-bit master seed (overrides run.seed)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--out", default="pamlab-out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key (value parsed as YAML)")
    common.add_argument("--kappa", type=float, help="shortcut for model.kappa")
    common.add_argument("--d", type=int, default=None, help="dimension (model.d)")
    common.add_argument("--epsilon", type=float, help="shortcut for discretization.epsilon")
    common.add_argument("--n-ensemble", type=int, help="shortcut for run.n_ensemble")

    parser = argparse.ArgumentParser(prog="pamlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact", parents=[common], help="closed-form special functions")
    p.add_argument("quantity", choices=("alpha", "density", "bridge-moment", "mollified-h", "riesz-constant"))
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=1.0)

    p = sub.add_parser("bridge-moment", parents=[common], help="binned Monte Carlo Bessel-bridge moment")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)

    p = sub.add_parser("pair-moment", parents=[common], help="pair-interaction moment over n bridges")
    p.add_argument("--starts", required=True, help="points 'x,y,z;x,y,z'")
    p.add_argument("--ends", required=True, help="points 'x,y,z;x,y,z'")
    p.add_argument("--t", type=float, default=1.0)

    p = sub.add_parser("noise-check", parents=[common], help="empirical noise covariance against dt h")
    p.add_argument("--n-increments", type=int, default=10000)
    p.add_argument("--lags", default="0,0,0;1,0,0;2,0,0;4,0,0;1,1,0;3,2,1")
    p.add_argument("--snapshot", action="store_true", help="write the first increment as a binary snapshot")

    sub.add_parser("simulate", parents=[common], help="ensemble of SPDE trajectories")
    sub.add_parser("chaos-verify", parents=[common], help="chaos-term variances and residual against the SPDE")

    p = sub.add_parser("moments", parents=[common], help="deterministic moment oracles")
    p.add_argument("quantity", choices=("first", "alpha-norm", "bridge-rhs", "chaos-l2"))
    p.add_argument("--tilt", type=float, default=0.0)
    p.add_argument("--distinct-pairs", action="store_true", help="alpha-norm over distinct atom pairs only")
    p.add_argument("--order", type=int, default=2, help="highest chaos order for chaos-l2")

    p = sub.add_parser("experiment", parents=[common], help="statistical experiment with a pass/fail report")
    p.add_argument("name", choices=sorted(ex_names()))
    return parser


def ex_names():
    from .config import EXPERIMENT_KEYS

    return EXPERIMENT_KEYS.keys()


def _resolve_config(args) -> RunConfig:
    text = ""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    over = {}
    for item in args.set:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        over[key] = yaml.safe_load(value)
    if args.seed is not None:
        over["run.seed"] = args.seed
    if args.kappa is not None:
        over["model.kappa"] = args.kappa
    if args.d is not None:
        over["model.d"] = args.d
    if args.epsilon is not None:
        over["discretization.epsilon"] = args.epsilon
    if args.n_ensemble is not None:
        over["run.n_ensemble"] = args.n_ensemble
    if args.command == "exact":
        over.setdefault("model.kappa", 0.0)
    return parse_config(text, over)


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve_config(args)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        run = _Run(cfg, " ".join([args.command] + ([args.quantity] if hasattr(args, "quantity") else [])
                                  + ([args.name] if hasattr(args, "name") else [])), args.out)
        try:
            HANDLERS[args.command](args, cfg, run)
        finally:
            run.finish()
    except (ConfigError, special.DomainError, ResolutionError, ValueError) as exc:
        print(f"pamlab: error: {exc}", file=sys.stderr)
        return 2
    except (AssertionFailed, ex.NullCheckError) as exc:
        print(f"pamlab: assertion failed: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
