"""Lorenz experiment pipelines behind ``snpdensity reproduce``.

``density_va``
    Objective tables over orders K = 4, 6, 8, 10 from 100 propagated samples
    (initial N([1,1,1], 25 I), T = 3), plus a K = 10 fit from 1000 samples
    with its analytic marginal grids.
``quantile_vb``
    Whitened-box probabilities (x in [-1, -0.5], y in [0, 2]) after T = 0.63
    from N([1,1,1], 0.09 I): SNP trials for K in {6, 8} and N in {1e2, 1e3}
    against raw MC counting with N in {1e2, 1e4, 1e6}.

Trial ``t`` at sample size ``N`` always draws from the same seed, so SNP and
counting estimates at equal ``N`` share their samples and whitening.
"""
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .density import save_density
from .ensemble import (
    GaussianInitial,
    LorenzParams,
    mc_box_probability,
    propagate_ensemble,
    sample_gaussian,
    write_ensemble,
)
from .fit import FitConfig, fit_snp, whiten_samples


@dataclass(frozen=True)
class LorenzSetup:
    mean: tuple
    cov_diag: tuple
    tfinal: float
    step: float = 0.01

    @property
    def initial(self):
        return GaussianInitial(np.array(self.mean), np.diag(self.cov_diag))


DENSITY_SETUP = LorenzSetup((1.0, 1.0, 1.0), (25.0, 25.0, 25.0), 3.0)
QUANTILE_SETUP = LorenzSetup((1.0, 1.0, 1.0), (0.09, 0.09, 0.09), 0.63)

BOX_LOWER = (-1.0, 0.0)
BOX_UPPER = (-0.5, 2.0)
BOX_COORDS = (0, 1)

OBJECTIVE_ORDERS = (4, 6, 8, 10)
SNP_ORDERS = (6, 8)
SNP_SIZES = (100, 1000)
MC_SIZES = (100, 10_000, 1_000_000)
TRIALS = 10


def child_seed(seed, *key):
    """Deterministic 64-bit seed for the sub-stream identified by ``key``."""
    words = np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(2)
    return int(words[0]) << 32 | int(words[1])


def propagated_samples(setup, n, seed):
    ens = sample_gaussian(setup.initial, n, seed)
    return ens, propagate_ensemble(ens, LorenzParams(), setup.tfinal, setup.step)


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_grid(path, axes, values, names):
    """Row-major grid CSV: one column per axis plus ``value``."""
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
    with open(path, "w") as fh:
        fh.write(",".join(list(names) + ["value"]) + "\n")
        for row, v in zip(coords, np.asarray(values).reshape(-1)):
            fh.write(",".join(repr(float(c)) for c in row) + "," + repr(float(v)) + "\n")


def evaluate_grid(func, axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return np.asarray(func(points)).reshape(mesh[0].shape)


def count_local_maxima(values):
    """Indices of strict interior local maxima of a 1-D profile."""
    v = np.asarray(values)
    return np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])) + 1


def bimodality(grid, values, depth=0.2):
    """Find two local maxima separated by a dip at least ``depth`` below the lower one.

    Returns ``None`` or a dict describing the best-separated pair.
    """
    peaks = count_local_maxima(values)
    best = None
    for a_i, a in enumerate(peaks):
        for b in peaks[a_i + 1 :]:
            dip = int(a + np.argmin(values[a : b + 1]))
            lower_peak = min(values[a], values[b])
            drop = 1.0 - values[dip] / lower_peak
            if drop >= depth and (best is None or lower_peak > best["lower_peak"]):
                best = {
                    "peaks": [float(grid[a]), float(grid[b])],
                    "dip": float(grid[dip]),
                    "lower_peak": float(lower_peak),
                    "drop": float(drop),
                }
    return best


def run_density_va(seed, out_dir=None, orders=OBJECTIVE_ORDERS, setup=DENSITY_SETUP,
                   objective_samples=100, density_samples=1000, density_order=10):
    """Objective tables per order and branch, then the bimodal K=10 fit."""
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    initial, ens = propagated_samples(setup, objective_samples, child_seed(seed, 1))
    if out_dir:
        write_ensemble(initial, os.path.join(out_dir, f"initial_N{objective_samples}.csv"))
        write_ensemble(ens, os.path.join(out_dir, f"propagated_N{objective_samples}.csv"))
    objectives = []
    for K in orders:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            density, report = fit_snp(ens.points, FitConfig(order=K))
        row = report.to_dict()
        row.pop("theta")
        row["order"] = K
        objectives.append(row)
        if out_dir:
            save_density(density, os.path.join(out_dir, f"density_K{K}.json"))
            _write_json(os.path.join(out_dir, f"report_K{K}.json"), report.to_dict())

    initial, ens = propagated_samples(setup, density_samples, child_seed(seed, 2))
    density, report = fit_snp(ens.points, FitConfig(order=density_order))
    grid = np.linspace(-4.0, 4.0, 400)
    x_marginal = density.marginal([0]).pdf(grid)
    plane = np.linspace(-4.0, 4.0, 81)
    if out_dir:
        write_ensemble(ens, os.path.join(out_dir, f"propagated_N{density_samples}.csv"))
        save_density(density, os.path.join(out_dir, f"density_N{density_samples}_K{density_order}.json"))
        _write_json(os.path.join(out_dir, f"report_N{density_samples}_K{density_order}.json"),
                    report.to_dict())
        write_grid(os.path.join(out_dir, "marginal_x.csv"), [grid], x_marginal, ["z0"])
        for keep, name in (((0, 1), "xy"), ((0, 2), "xz")):
            marg = density.marginal(keep)
            values = evaluate_grid(marg.pdf, [plane, plane])
            write_grid(os.path.join(out_dir, f"marginal_{name}.csv"), [plane, plane], values,
                       [f"z{k}" for k in keep])
    summary = {
        "experiment": "density_va",
        "seed": int(seed),
        "objective_samples": objective_samples,
        "objectives": objectives,
        "density_fit": {
            "samples": density_samples,
            "order": density_order,
            "chosen_branch": report.chosen_branch,
            "nonlinear_objective": report.nonlinear_objective_pos
            if report.chosen_branch == "positive"
            else report.nonlinear_objective_neg,
            "x_marginal_bimodality": bimodality(grid, x_marginal),
            "x_sign_counts": [int(np.sum(ens.points[:, 0] < 0)), int(np.sum(ens.points[:, 0] > 0))],
        },
    }
    if out_dir:
        _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def _stats(values):
    v = np.asarray(values, dtype=np.float64)
    return {
        "values": [float(x) for x in v],
        "mean": float(v.mean()),
        "std": float(v.std()),
        "min": float(v.min()),
        "max": float(v.max()),
    }


def snp_box_trial(setup, order, n, seed, lower=BOX_LOWER, upper=BOX_UPPER, coords=BOX_COORDS):
    """One SNP trial: returns ``(snp_probability, counting_probability, density, ensemble)``."""
    _, ens = propagated_samples(setup, n, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        density, _ = fit_snp(ens.points, FitConfig(order=order))
    snp = density.box_probability(lower, upper, coords=coords)
    z = density.whitening.whiten(ens.points)
    counted = mc_box_probability(ens, lower, upper, coords, points=z)
    return snp, counted, density, ens


def mc_box_trial(setup, n, seed, lower=BOX_LOWER, upper=BOX_UPPER, coords=BOX_COORDS):
    """Raw counting in the sample's own whitened coordinates."""
    _, ens = propagated_samples(setup, n, seed)
    z, _ = whiten_samples(ens.points)
    return mc_box_probability(ens, lower, upper, coords, points=z)


def run_quantile_vb(seed, out_dir=None, trials=TRIALS, snp_orders=SNP_ORDERS,
                    snp_sizes=SNP_SIZES, mc_sizes=MC_SIZES, setup=QUANTILE_SETUP):
    """SNP box probabilities vs raw MC counting across trial sweeps."""
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    snp_rows = []
    for K in snp_orders:
        for n in snp_sizes:
            values, counts = [], []
            for t in range(trials):
                prob, counted, density, ens = snp_box_trial(setup, K, n, child_seed(seed, n, t))
                values.append(prob)
                counts.append(counted)
                if out_dir:
                    stem = os.path.join(out_dir, f"snp_K{K}_N{n}_trial{t}")
                    save_density(density, stem + ".json")
                    if K == snp_orders[0]:
                        write_ensemble(ens, os.path.join(out_dir, f"propagated_N{n}_trial{t}.csv"))
            # counting on the very samples behind each fit, in the same coordinates
            snp_rows.append({"order": K, "samples": n, **_stats(values), "counting": _stats(counts)})
    mc_rows = []
    for n in mc_sizes:
        values = [mc_box_trial(setup, n, child_seed(seed, n, t)) for t in range(trials)]
        mc_rows.append({"samples": n, **_stats(values)})
    reference = max(mc_rows, key=lambda r: r["samples"])
    summary = {
        "experiment": "quantile_vb",
        "seed": int(seed),
        "box": {"lower": list(BOX_LOWER), "upper": list(BOX_UPPER), "coords": list(BOX_COORDS)},
        "trials": trials,
        "snp": snp_rows,
        "mc": mc_rows,
        "reference": {"samples": reference["samples"], "mean": reference["mean"]},
    }
    if out_dir:
        _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary
