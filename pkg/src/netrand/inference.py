"""Randomization-test engines.

Four ways to handle the unknown effect values a null needs: oracle
(caller supplies them), plug-in (full-sample difference in means,
anti-conservative and flagged as such), confidence-interval (grid over a
moment-based region, p-value inflated by the region's miscoverage), and
sample splitting (estimate on one half, test on the other). All share the
same conditioning machinery and statistic; p-values are the plain
fraction of accepted draws whose statistic reaches the observed one,
with no +1 smoothing.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .conditioning import (AllCells, AllExposures, Cell, ConditioningConfig,
                           PerCell, PerExposure, SuperFocalSet,
                           sample_conditioning_set, select_observed_focal,
                           superfocal_for_cell)
from .data import Dataset
from .errors import (DataError, DegenerateInterval, EmptyArm, MissingParameter,
                     SplitInfeasible, TooFewUnits)
from .exposure import compute_exposures
from .nullspec import (BY_EXPOSURE, BY_EXPOSURE_COVARIATE, CONSTANT_ALL,
                       GENERAL, PLUGIN, SPLIT_ESTIMATE, NuisanceParams,
                       NullSpec)
from .stats import (masked_arm_variances, ratio_stat_rows, ts_per_exposure,
                    variance_ratio)

MIN_OBSERVED_FOCAL = 4  # two per arm is the least that gives two variances


def empirical_pvalue(observed, draw_stats) -> float:
    """Fraction of draw statistics >= the observed one (ties count)."""
    stats = np.asarray(draw_stats, dtype=np.float64)
    if stats.size < 1:
        raise ValueError("need at least one draw statistic")
    obs = float(getattr(observed, "value", observed))
    return float(np.mean(stats >= obs))


def family_cells(family: str, values: Sequence, x_levels: Sequence | None) -> list[Cell]:
    if family in (CONSTANT_ALL, BY_EXPOSURE):
        return [(v,) for v in values]
    if family == BY_EXPOSURE_COVARIATE:
        if not x_levels:
            raise DataError("per-cell families require a covariate column")
        return [(v, l) for v in values for l in x_levels]
    raise MissingParameter(f"family {family!r} has no testable cell structure")


def _target_for_cell(cell: Cell):
    return PerExposure(cell[0]) if len(cell) == 1 else PerCell(cell[0], cell[1])


def _cell_weights(cells: list[Cell], pi_obs: np.ndarray, x: np.ndarray | None,
                  n: int) -> np.ndarray:
    w = []
    for c in cells:
        m = pi_obs == c[0]
        if len(c) == 2:
            m = m & (x == c[1])
        w.append(int(m.sum()) / n)
    return np.asarray(w, dtype=np.float64)


class _CellRun:
    """One cell's accepted draws plus the masks needed for its statistics."""

    def __init__(self, cell: Cell, dataset: Dataset, pi_obs: np.ndarray,
                 draws, diag, inf_mask: np.ndarray | None = None):
        self.cell = cell
        self.diag = diag
        self.y = dataset.y
        self.t_obs = dataset.t.astype(np.float64)
        self.sf_full = superfocal_for_cell(pi_obs, cell, dataset.x)
        ind = self.sf_full.indicator
        if inf_mask is not None:
            ind = ind & inf_mask
        self.sf_sel = SuperFocalSet(indicator=ind, cell=cell)
        self.t_mat = np.stack([d.t_new for d in draws]).astype(np.float64)
        pi_mat = np.stack([d.exposures_new for d in draws])
        self.focal_mat = (pi_mat == cell[0]) & self.sf_sel.indicator
        self.focal_counts = self.focal_mat.sum(axis=1)
        self.fobs_mask: np.ndarray | None = None

    @property
    def mean_focal(self) -> float:
        return float(np.mean(self.focal_counts))

    def select_fobs(self, draws, rng) -> None:
        size = round(self.mean_focal)
        if size < MIN_OBSERVED_FOCAL:
            raise TooFewUnits(
                f"cell {self.cell}: observed focal selection of size {size} "
                f"cannot support two per-arm variances (need >= {MIN_OBSERVED_FOCAL})")
        self.fobs_mask = select_observed_focal(
            self.sf_sel, draws, self.t_obs, rng, min_per_arm=2)

    def observed_stat(self) -> float:
        return ts_per_exposure(self.y, self.t_obs, self.fobs_mask, self.cell).value

    def draw_stats(self, tau: float) -> np.ndarray:
        z = self.y[None, :] + tau * (self.t_mat - self.t_obs[None, :])
        arm1 = self.focal_mat & (self.t_mat == 1)
        arm0 = self.focal_mat & (self.t_mat == 0)
        v1, v0, _, _ = masked_arm_variances(z, (arm1, arm0))
        return ratio_stat_rows(v1, v0)


@dataclass
class CellResult:
    cell: Cell
    pvalue: float
    observed_stat: float
    tau: float | None
    n_superfocal: int
    fobs_size: int
    mean_focal: float
    acceptance_rate: float


@dataclass
class CombinedResult:
    pvalue: float
    observed_stat: float
    reject: bool
    weights: dict


@dataclass
class AdjustResult:
    method: str
    alpha: float
    decisions: dict
    adjusted_pvalues: dict
    any_rejection: bool


@dataclass
class TestReport:
    technique: str
    family: str
    stat_mode: str
    alpha: float
    b: int
    epsilon: float
    cells: list[CellResult] = field(default_factory=list)
    combined: CombinedResult | None = None
    decisions: dict = field(default_factory=dict)
    any_unadjusted_rejection: bool | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def per_cell_pvalues(self) -> dict:
        return {c.cell: c.pvalue for c in self.cells}

    def to_dict(self) -> dict:
        return _json_safe({
            "technique": self.technique,
            "family": self.family,
            "stat": self.stat_mode,
            "alpha": self.alpha,
            "b": self.b,
            "epsilon": self.epsilon,
            "cells": [{
                "pi": c.cell[0],
                "x": c.cell[1] if len(c.cell) == 2 else None,
                "pvalue": c.pvalue,
                "observed_stat": c.observed_stat,
                "tau": c.tau,
                "n_superfocal": c.n_superfocal,
                "fobs_size": c.fobs_size,
                "mean_focal": c.mean_focal,
                "acceptance_rate": c.acceptance_rate,
            } for c in self.cells],
            "combined": None if self.combined is None else {
                "pvalue": self.combined.pvalue,
                "observed_stat": self.combined.observed_stat,
                "reject": self.combined.reject,
                "weights": {_cell_key(k): v for k, v in self.combined.weights.items()},
            },
            "decisions": {m: {_cell_key(k): v for k, v in d.items()}
                          for m, d in self.decisions.items()},
            "any_unadjusted_rejection": self.any_unadjusted_rejection,
            "diagnostics": self.diagnostics,
        })


def _cell_key(cell) -> str:
    if isinstance(cell, tuple):
        return ",".join(str(v) for v in cell)
    return str(cell)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k) if not isinstance(k, str) else k: _json_safe(v)
                for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return "nan"
        return f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def adjust_multiple(pvalues: Mapping, alpha: float, method: str) -> AdjustResult:
    """Family-wise decisions: bonferroni, holm, or unadjusted_any."""
    cells = list(pvalues)
    p = np.asarray([pvalues[c] for c in cells], dtype=np.float64)
    m = len(p)
    if m == 0:
        raise ValueError("no p-values to adjust")
    if method == "bonferroni":
        adj = np.minimum(p * m, 1.0)
        dec = p <= alpha / m
    elif method == "holm":
        order = np.argsort(p, kind="stable")
        adj = np.empty(m)
        running = 0.0
        for rank, idx in enumerate(order):
            running = max(running, min(1.0, (m - rank) * p[idx]))
            adj[idx] = running
        dec = np.zeros(m, dtype=bool)
        for rank, idx in enumerate(order):
            if p[idx] <= alpha / (m - rank):
                dec[idx] = True
            else:
                break
    elif method == "unadjusted_any":
        adj = p.copy()
        dec = p < alpha
    else:
        raise ValueError(f"unknown method {method!r}")
    decisions = {c: bool(d) for c, d in zip(cells, dec)}
    return AdjustResult(method=method, alpha=alpha, decisions=decisions,
                        adjusted_pvalues={c: float(a) for c, a in zip(cells, adj)},
                        any_rejection=bool(dec.any()))


def estimate_tau_plugin(dataset: Dataset, exposures, family: str,
                        mask: np.ndarray | None = None,
                        provenance: str = PLUGIN) -> NuisanceParams:
    """Difference-in-means effect estimates: pooled for the constant
    family, otherwise per cell. Raises EmptyArm when a cell lacks an arm."""
    pi = np.asarray(exposures.values if hasattr(exposures, "values") else exposures)
    sel = np.ones(dataset.n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    y, t = dataset.y, dataset.t

    def dim(cell_mask, label) -> float:
        m1 = cell_mask & (t == 1) & sel
        m0 = cell_mask & (t == 0) & sel
        if not m1.any() or not m0.any():
            raise EmptyArm(f"no {'treated' if not m1.any() else 'control'} units for {label}")
        return float(y[m1].mean() - y[m0].mean())

    if family == CONSTANT_ALL:
        values = {(): dim(np.ones(dataset.n, dtype=bool), "pooled sample")}
    elif family == BY_EXPOSURE:
        values = {(v,): dim(pi == v, f"exposure {v}")
                  for v in exposures.mapping.values}
    elif family == BY_EXPOSURE_COVARIATE:
        if dataset.x is None:
            raise DataError("per-cell families require a covariate column")
        values = {(v, l): dim((pi == v) & (dataset.x == l), f"cell ({v}, {l})")
                  for v in exposures.mapping.values for l in dataset.x_levels}
    else:
        raise MissingParameter(f"family {family!r} has no estimable cells")
    return NuisanceParams(values=values, provenance=provenance)


def _tau_lookup(null: NullSpec, cell: Cell) -> float:
    return null.tau_for(cell[0], cell[1] if len(cell) == 2 else None)


def _build_runs(dataset, mapping, mechanism, cells, epsilon, b, rng,
                max_attempts, inf_mask=None, keep_draws=False):
    """Per-cell sampling for the multiple-statistics mode."""
    pi_obs = compute_exposures(mapping, dataset.t, dataset.graph)
    runs = []
    kept = {}
    for cell in cells:
        cfg = ConditioningConfig(epsilon=epsilon, target=_target_for_cell(cell),
                                 max_attempts_per_accept=max_attempts)
        draws, diag = sample_conditioning_set(mechanism, dataset, pi_obs,
                                              mapping, cfg, b, rng)
        run = _CellRun(cell, dataset, pi_obs.values, draws, diag, inf_mask)
        run.select_fobs(draws, rng)
        runs.append(run)
        if keep_draws:
            kept[cell] = np.stack([d.t_new for d in draws])
    return pi_obs, runs, kept


def _build_combined_run(dataset, mapping, mechanism, cells, family, epsilon,
                        b, rng, max_attempts, inf_mask=None, keep_draws=False):
    """One joint sampling whose draws satisfy every cell's inequalities."""
    pi_obs = compute_exposures(mapping, dataset.t, dataset.graph)
    target = AllCells() if family == BY_EXPOSURE_COVARIATE else AllExposures()
    cfg = ConditioningConfig(epsilon=epsilon, target=target,
                             max_attempts_per_accept=max_attempts)
    draws, diag = sample_conditioning_set(mechanism, dataset, pi_obs, mapping,
                                          cfg, b, rng)
    runs = []
    for cell in cells:
        run = _CellRun(cell, dataset, pi_obs.values, draws, diag, inf_mask)
        run.select_fobs(draws, rng)
        runs.append(run)
    kept = {"combined": np.stack([d.t_new for d in draws])} if keep_draws else {}
    return pi_obs, runs, kept


def _cell_results(runs, taus, b, alpha, keep_draws):
    results = []
    pvals = {}
    draw_stats = {}
    for run in runs:
        tau = taus[run.cell]
        obs = run.observed_stat()
        stats = run.draw_stats(tau)
        p = empirical_pvalue(obs, stats)
        pvals[run.cell] = p
        results.append(CellResult(
            cell=run.cell, pvalue=p, observed_stat=obs, tau=tau,
            n_superfocal=run.sf_sel.n, fobs_size=int(run.fobs_mask.sum()),
            mean_focal=run.mean_focal, acceptance_rate=run.diag.acceptance_rate))
        if keep_draws:
            draw_stats[run.cell] = stats
    return results, pvals, draw_stats


def _combined_pvalue(runs, taus, weights):
    obs = 0.0
    stat_rows = np.zeros(runs[0].t_mat.shape[0], dtype=np.float64)
    for run, w in zip(runs, weights):
        obs += w * run.observed_stat()
        stat_rows = stat_rows + w * run.draw_stats(taus[run.cell])
    return empirical_pvalue(obs, stat_rows), float(obs), stat_rows


def _attach_decisions(report: TestReport, pvals: dict, alpha: float) -> None:
    for method in ("bonferroni", "holm", "unadjusted_any"):
        adj = adjust_multiple(pvals, alpha, method)
        report.decisions[method] = adj.decisions
        if method == "unadjusted_any":
            report.any_unadjusted_rejection = adj.any_rejection


def _run_fixed_tau_test(technique, dataset, mapping, mechanism, null, *,
                        epsilon, b, rng, stat, alpha, max_attempts,
                        keep_draws, inf_mask=None, extra_diag=None):
    family = null.family
    cells = family_cells(family, mapping.values, dataset.x_levels or None)
    taus = {c: _tau_lookup(null, c) for c in cells}
    report = TestReport(technique=technique, family=family, stat_mode=stat,
                        alpha=alpha, b=b, epsilon=epsilon)
    if stat == "multiple":
        _, runs, kept = _build_runs(dataset, mapping, mechanism, cells,
                                    epsilon, b, rng, max_attempts, inf_mask,
                                    keep_draws)
        results, pvals, dstats = _cell_results(runs, taus, b, alpha, keep_draws)
        report.cells = results
        _attach_decisions(report, pvals, alpha)
    elif stat == "combined":
        pi_obs, runs, kept = _build_combined_run(
            dataset, mapping, mechanism, cells, family, epsilon, b, rng,
            max_attempts, inf_mask, keep_draws)
        weights = _cell_weights(cells, pi_obs.values, dataset.x, dataset.n)
        results, pvals, dstats = _cell_results(runs, taus, b, alpha, keep_draws)
        report.cells = results
        p, obs, rows = _combined_pvalue(runs, taus, weights)
        report.combined = CombinedResult(
            pvalue=p, observed_stat=obs, reject=p < alpha,
            weights={c: float(w) for c, w in zip(cells, weights)})
        if keep_draws:
            dstats["combined"] = rows
    else:
        raise ValueError(f"stat must be 'multiple' or 'combined', got {stat!r}")
    report.diagnostics["nuisance"] = {
        "provenance": null.nuisance.provenance,
        "values": {_cell_key(k): v for k, v in null.nuisance.values.items()},
    }
    if keep_draws:
        report.diagnostics["draw_stats"] = {_cell_key(k): v.tolist()
                                            for k, v in dstats.items()}
        report.diagnostics["draw_treatments"] = {_cell_key(k): v.tolist()
                                                 for k, v in kept.items()}
        report.diagnostics["observed_focal"] = {
            _cell_key(run.cell): np.nonzero(run.fobs_mask)[0].tolist()
            for run in runs}
    if extra_diag:
        report.diagnostics.update(extra_diag)
    return report


def run_oracle_test(dataset: Dataset, mapping, mechanism, null: NullSpec, *,
                    epsilon: float, b: int, rng: np.random.Generator,
                    stat: str = "multiple", alpha: float = 0.05,
                    max_attempts_per_accept: int = 10_000,
                    keep_draws: bool = False) -> TestReport:
    """Randomization test with caller-supplied effect values."""
    if null.family == GENERAL:
        raise MissingParameter(
            "general hypotheses are representable but not testable")
    return _run_fixed_tau_test("oracle", dataset, mapping, mechanism, null,
                               epsilon=epsilon, b=b, rng=rng, stat=stat,
                               alpha=alpha, max_attempts=max_attempts_per_accept,
                               keep_draws=keep_draws)


def run_plugin_test(dataset: Dataset, mapping, mechanism, family: str, *,
                    epsilon: float, b: int, rng: np.random.Generator,
                    stat: str = "multiple", alpha: float = 0.05,
                    max_attempts_per_accept: int = 10_000,
                    keep_draws: bool = False) -> TestReport:
    """Full-sample plug-in estimates of the effect values.

    Reusing the whole sample for estimation and testing has no finite- or
    large-sample guarantee; the report carries a warning flag.
    """
    exposures = compute_exposures(mapping, dataset.t, dataset.graph)
    nuisance = estimate_tau_plugin(dataset, exposures, family)
    null = NullSpec(family, nuisance)
    report = _run_fixed_tau_test(
        "plugin", dataset, mapping, mechanism, null,
        epsilon=epsilon, b=b, rng=rng, stat=stat, alpha=alpha,
        max_attempts=max_attempts_per_accept, keep_draws=keep_draws,
        extra_diag={"warning": "plug-in nuisance estimates reuse the full "
                               "sample; size control is not guaranteed"})
    return report


@dataclass
class SplitResult:
    est_mask: np.ndarray
    inf_mask: np.ndarray
    strata: list


def make_balanced_split(dataset: Dataset, exposures, family: str,
                        rng: np.random.Generator) -> SplitResult:
    """Half-split stratified on (treatment, exposure[, covariate]) so both
    halves preserve the joint cell composition; odd cells flip a coin."""
    pi = np.asarray(exposures.values if hasattr(exposures, "values") else exposures)
    keys = [tuple(k) for k in zip(dataset.t.tolist(), pi.tolist())]
    if family == BY_EXPOSURE_COVARIATE:
        if dataset.x is None:
            raise DataError("per-cell families require a covariate column")
        keys = [k + (x,) for k, x in zip(keys, dataset.x.tolist())]
    est = np.zeros(dataset.n, dtype=bool)
    strata = sorted(set(keys))
    for s in strata:
        idx = np.array([i for i, k in enumerate(keys) if k == s])
        idx = rng.permutation(idx)
        half = len(idx) // 2
        if len(idx) % 2 == 1 and rng.random() < 0.5:
            half += 1
        est[idx[:half]] = True
    return SplitResult(est_mask=est, inf_mask=~est, strata=strata)


def _check_split(dataset, pi_obs, cells, split):
    t = dataset.t
    for cell in cells:
        m = pi_obs == cell[0]
        if len(cell) == 2:
            m = m & (dataset.x == cell[1])
        for arm in (0, 1):
            if not (m & (t == arm) & split.est_mask).any():
                raise SplitInfeasible(
                    f"estimation side of cell {cell} has no arm-{arm} units")
            if int((m & (t == arm) & split.inf_mask).sum()) < 2:
                raise SplitInfeasible(
                    f"inference side of cell {cell} has fewer than 2 arm-{arm} units")


def run_ss_test(dataset: Dataset, mapping, mechanism, family: str, *,
                epsilon: float, b: int, split_rng: np.random.Generator,
                rng: np.random.Generator, stat: str = "multiple",
                alpha: float = 0.05, max_attempts_per_accept: int = 10_000,
                keep_draws: bool = False) -> TestReport:
    """Sample splitting: estimate effects on one half, test on the other.

    Conditioning-set inequalities are evaluated on the full sample's
    super-focal sets; statistics (observed selection and per-draw focal
    units) are restricted to the inference half.
    """
    exposures = compute_exposures(mapping, dataset.t, dataset.graph)
    cells = family_cells(family, mapping.values, dataset.x_levels or None)
    split = make_balanced_split(dataset, exposures, family, split_rng)
    _check_split(dataset, exposures.values, cells, split)
    nuisance = estimate_tau_plugin(dataset, exposures, family,
                                   mask=split.est_mask,
                                   provenance=SPLIT_ESTIMATE)
    null = NullSpec(family, nuisance)
    extra = {"split": {
        "n_estimation": int(split.est_mask.sum()),
        "n_inference": int(split.inf_mask.sum()),
    }}
    return _run_fixed_tau_test("ss", dataset, mapping, mechanism, null,
                               epsilon=epsilon, b=b, rng=rng, stat=stat,
                               alpha=alpha, max_attempts=max_attempts_per_accept,
                               keep_draws=keep_draws, inf_mask=split.inf_mask,
                               extra_diag=extra)


@dataclass(frozen=True)
class CIConfig:
    gamma: float = 0.001
    grid_size: int = 20
    total_grid_budget: int = 400

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2 to include both endpoints")


def neyman_interval(y, t, level: float, mask=None) -> tuple[float, float, float]:
    """Normal-approximation interval for a difference in means."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t)
    sel = np.ones(len(y), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    y1 = y[sel & (t == 1)]
    y0 = y[sel & (t == 0)]
    if len(y1) < 2 or len(y0) < 2:
        raise DegenerateInterval(
            f"need >= 2 units per arm, got {len(y1)}/{len(y0)}")
    tau_hat = float(y1.mean() - y0.mean())
    se = math.sqrt(y1.var(ddof=1) / len(y1) + y0.var(ddof=1) / len(y0))
    if not (math.isfinite(se) and se > 0.0):
        raise DegenerateInterval(f"interval width is degenerate (se={se})")
    z = NormalDist().inv_cdf(1.0 - (1.0 - level) / 2.0)
    return tau_hat - z * se, tau_hat + z * se, tau_hat


def _ci_axes(family: str, cells: list[Cell], pi_obs, x):
    """Each axis is one unknown effect value with the unit subset whose
    difference in means estimates it (pooled for the constant family)."""
    if family == CONSTANT_ALL:
        return {(): None}  # None mask = all units
    axes = {}
    for c in cells:
        m = pi_obs == c[0]
        if len(c) == 2:
            m = m & (x == c[1])
        axes[c] = m
    return axes


def run_ci_test(dataset: Dataset, mapping, mechanism, family: str, *,
                epsilon: float, b: int, rng: np.random.Generator,
                ci: CIConfig = CIConfig(), stat: str = "multiple",
                alpha: float = 0.05, max_attempts_per_accept: int = 10_000,
                keep_draws: bool = False) -> TestReport:
    """Grid the effect values over a joint confidence region, run the test
    at every grid point against the same accepted draws and the same
    observed focal selection, and report max(grid p-values) + gamma.
    """
    cells = family_cells(family, mapping.values, dataset.x_levels or None)
    pi_vec = compute_exposures(mapping, dataset.t, dataset.graph)
    axes = _ci_axes(family, cells, pi_vec.values, dataset.x)
    n_axes = len(axes)
    level = 1.0 - ci.gamma / n_axes  # Bonferroni joint coverage >= 1 - gamma
    m_axis = ci.grid_size
    truncated = False
    if m_axis ** n_axes > ci.total_grid_budget:
        m_axis = max(2, int(ci.total_grid_budget ** (1.0 / n_axes)))
        truncated = True
    grids = {}
    intervals = {}
    for key, mask in axes.items():
        lo, hi, tau_hat = neyman_interval(dataset.y, dataset.t, level, mask)
        grids[key] = np.linspace(lo, hi, m_axis)
        intervals[key] = (lo, hi, tau_hat)

    def axis_of(cell: Cell):
        return () if family == CONSTANT_ALL else cell

    report = TestReport(technique="ci", family=family, stat_mode=stat,
                        alpha=alpha, b=b, epsilon=epsilon)
    grid_evals = {}
    if stat == "multiple":
        _, runs, _ = _build_runs(dataset, mapping, mechanism, cells, epsilon,
                                 b, rng, max_attempts_per_accept)
        pvals = {}
        for run in runs:
            obs = run.observed_stat()
            evals = [(float(tau), empirical_pvalue(obs, run.draw_stats(tau)))
                     for tau in grids[axis_of(run.cell)]]
            p = min(1.0, max(e[1] for e in evals) + ci.gamma)
            pvals[run.cell] = p
            grid_evals[_cell_key(run.cell)] = evals
            report.cells.append(CellResult(
                cell=run.cell, pvalue=p, observed_stat=obs, tau=None,
                n_superfocal=run.sf_sel.n, fobs_size=int(run.fobs_mask.sum()),
                mean_focal=run.mean_focal,
                acceptance_rate=run.diag.acceptance_rate))
        _attach_decisions(report, pvals, alpha)
    elif stat == "combined":
        pi_obs, runs, _ = _build_combined_run(
            dataset, mapping, mechanism, cells, family, epsilon, b, rng,
            max_attempts_per_accept)
        weights = _cell_weights(cells, pi_obs.values, dataset.x, dataset.n)
        obs = 0.0
        per_cell_stats = []
        for run, w in zip(runs, weights):
            obs += w * run.observed_stat()
            per_cell_stats.append([run.draw_stats(tau)
                                   for tau in grids[axis_of(run.cell)]])
        axis_keys = list(grids)
        evals = []
        for combo in itertools.product(range(m_axis), repeat=n_axes):
            point = dict(zip(axis_keys, combo))
            rows = np.zeros(b, dtype=np.float64)
            for run, w, stats_by_point in zip(runs, weights, per_cell_stats):
                rows = rows + w * stats_by_point[point[axis_of(run.cell)]]
            taus = tuple(float(grids[k][i]) for k, i in point.items())
            evals.append((taus, empirical_pvalue(obs, rows)))
        p = min(1.0, max(e[1] for e in evals) + ci.gamma)
        grid_evals["combined"] = evals
        report.combined = CombinedResult(
            pvalue=p, observed_stat=float(obs), reject=p < alpha,
            weights={c: float(w) for c, w in zip(cells, weights)})
    else:
        raise ValueError(f"stat must be 'multiple' or 'combined', got {stat!r}")
    report.diagnostics["ci"] = {
        "gamma": ci.gamma,
        "grid_points_per_axis": m_axis,
        "grid_truncated": truncated,
        "intervals": {_cell_key(k): list(v) for k, v in intervals.items()},
        "grid_evaluations": _json_safe(grid_evals),
    }
    return report


def run_permutation_variant(dataset: Dataset, mapping, family: str,
                            split: SplitResult, b: int | None,
                            rng: np.random.Generator, *,
                            stat: str = "multiple", alpha: float = 0.05,
                            cell_stat=None, keep_draws: bool = False,
                            enumeration_limit: int = 10_000) -> TestReport:
    """Permutation analogue on a fixed super-focal set.

    After the split, outcomes on each inference-side super-focal cell are
    adjusted by the estimated effect, permuted within the cell, and the
    statistic recomputed with treatments held fixed. b=None enumerates all
    within-cell permutations when their number is within the limit. The
    spread of this null is narrower than the randomization null's, which
    is the diagnostic comparing the two procedures.
    """
    exposures = compute_exposures(mapping, dataset.t, dataset.graph)
    cells = family_cells(family, mapping.values, dataset.x_levels or None)
    nuisance = estimate_tau_plugin(dataset, exposures, family,
                                   mask=split.est_mask,
                                   provenance=SPLIT_ESTIMATE)
    null = NullSpec(family, nuisance)
    pi = exposures.values
    y, t = dataset.y, dataset.t

    if cell_stat is None:
        def cell_stat(yv, tv):
            return ts_per_exposure(yv, tv, np.ones(len(yv), dtype=bool)).value

    cell_units = {}
    adjusted = {}
    observed = {}
    for cell in cells:
        m = (pi == cell[0]) & split.inf_mask
        if len(cell) == 2:
            m = m & (dataset.x == cell[1])
        idx = np.flatnonzero(m)
        if len(idx) < 2:
            raise TooFewUnits(f"cell {cell}: only {len(idx)} inference-side "
                              "super-focal units")
        tau = _tau_lookup(null, cell)
        cell_units[cell] = idx
        adjusted[cell] = y[idx] - tau * t[idx]
        observed[cell] = float(cell_stat(y[idx], t[idx]))

    taus = {c: _tau_lookup(null, c) for c in cells}

    def stat_under(perms: dict) -> dict:
        out = {}
        for cell in cells:
            idx = cell_units[cell]
            y_star = adjusted[cell][perms[cell]] + taus[cell] * t[idx]
            out[cell] = float(cell_stat(y_star, t[idx]))
        return out

    if b is None:
        spaces = [list(itertools.permutations(range(len(cell_units[c]))))
                  for c in cells]
        total = math.prod(len(s) for s in spaces)
        if total > enumeration_limit:
            raise ValueError(f"{total} permutations exceeds the enumeration "
                             f"limit {enumeration_limit}; pass b instead")
        reps = [dict(zip(cells, [np.array(p) for p in combo]))
                for combo in itertools.product(*spaces)]
    else:
        if b < 1:
            raise ValueError(f"b must be >= 1, got {b}")
        reps = [{c: rng.permutation(len(cell_units[c])) for c in cells}
                for _ in range(b)]

    per_rep = [stat_under(perms) for perms in reps]
    n_reps = len(per_rep)
    report = TestReport(technique="permutation", family=family, stat_mode=stat,
                        alpha=alpha, b=n_reps, epsilon=float("nan"))
    draw_stats = {}
    if stat == "multiple":
        pvals = {}
        for cell in cells:
            stats = np.array([r[cell] for r in per_rep])
            p = empirical_pvalue(observed[cell], stats)
            pvals[cell] = p
            report.cells.append(CellResult(
                cell=cell, pvalue=p, observed_stat=observed[cell],
                tau=taus[cell], n_superfocal=len(cell_units[cell]),
                fobs_size=len(cell_units[cell]),
                mean_focal=float(len(cell_units[cell])), acceptance_rate=1.0))
            if keep_draws:
                draw_stats[cell] = stats
        _attach_decisions(report, pvals, alpha)
    elif stat == "combined":
        weights = _cell_weights(cells, pi, dataset.x, dataset.n)
        obs = float(sum(w * observed[c] for c, w in zip(cells, weights)))
        rows = np.array([sum(w * r[c] for c, w in zip(cells, weights))
                         for r in per_rep])
        p = empirical_pvalue(obs, rows)
        report.combined = CombinedResult(
            pvalue=p, observed_stat=obs, reject=p < alpha,
            weights={c: float(w) for c, w in zip(cells, weights)})
        if keep_draws:
            draw_stats["combined"] = rows
    else:
        raise ValueError(f"stat must be 'multiple' or 'combined', got {stat!r}")
    report.diagnostics["nuisance"] = {
        "provenance": nuisance.provenance,
        "values": {_cell_key(k): v for k, v in nuisance.values.items()},
    }
    if keep_draws:
        report.diagnostics["draw_stats"] = {_cell_key(k): v.tolist()
                                            for k, v in draw_stats.items()}
    return report
