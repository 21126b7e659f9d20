"""Conditioning machinery for randomization tests under interference.

The test conditions on three objects: a super-focal set (units whose
observed exposure equals the cell's value), a set of acceptable treatment
vectors (those keeping enough super-focal units in each arm of the cell),
and a random selection of observed focal units whose size matches the
expected focal count across draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (AcceptanceBudgetExhausted, ArmEmptyAfterRetries,
                     EmptySuperFocal)

Cell = tuple  # (pi,) or (pi, x_level)


@dataclass(frozen=True)
class PerExposure:
    value: object

    def cells(self, values, x_levels=None) -> list[Cell]:
        return [(self.value,)]


@dataclass(frozen=True)
class AllExposures:
    def cells(self, values, x_levels=None) -> list[Cell]:
        return [(v,) for v in values]


@dataclass(frozen=True)
class PerCell:
    value: object
    level: object

    def cells(self, values, x_levels=None) -> list[Cell]:
        return [(self.value, self.level)]


@dataclass(frozen=True)
class AllCells:
    def cells(self, values, x_levels=None) -> list[Cell]:
        if not x_levels:
            raise ValueError("covariate levels required for per-cell targets")
        return [(v, l) for v in values for l in x_levels]


@dataclass(frozen=True)
class ConditioningConfig:
    epsilon: float
    target: object
    max_attempts_per_accept: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must be in (0, 0.5), got {self.epsilon}")
        if self.max_attempts_per_accept < 1:
            raise ValueError("max_attempts_per_accept must be >= 1")


@dataclass
class SuperFocalSet:
    """Units whose observed exposure (and covariate, for per-cell targets)
    matches the cell. cell is None for a union over several cells."""

    indicator: np.ndarray
    cell: Cell | None

    @property
    def n(self) -> int:
        return int(self.indicator.sum())


def superfocal_for_cell(exposures_obs: np.ndarray, cell: Cell,
                        x: np.ndarray | None = None) -> SuperFocalSet:
    pi = np.asarray(exposures_obs)
    mask = pi == cell[0]
    if len(cell) == 2:
        if x is None:
            raise ValueError(f"cell {cell} names a covariate level but x is missing")
        mask = mask & (np.asarray(x) == cell[1])
    if not mask.any():
        raise EmptySuperFocal(f"no units with observed cell {cell}")
    return SuperFocalSet(indicator=mask, cell=cell)


def superfocal_union(exposures_obs: np.ndarray, cells: list[Cell],
                     x: np.ndarray | None = None) -> SuperFocalSet:
    mask = np.zeros(len(np.asarray(exposures_obs)), dtype=bool)
    for c in cells:
        mask |= superfocal_for_cell(exposures_obs, c, x).indicator
    return SuperFocalSet(indicator=mask, cell=None)


def relative_frequency(t_new: np.ndarray, exposures_new: np.ndarray,
                       superfocal: SuperFocalSet, arm: int) -> float:
    """Share of the cell's super-focal units that the candidate vector
    leaves in the given arm with exposure unchanged."""
    if superfocal.cell is None:
        raise ValueError("relative frequency is defined per cell, not for unions")
    denom = superfocal.n
    if denom == 0:
        raise EmptySuperFocal("super-focal set is empty")
    keep = (np.asarray(exposures_new) == superfocal.cell[0]) & superfocal.indicator
    num = int((keep & (np.asarray(t_new) == arm)).sum())
    return num / denom


def focal_indicator(exposures_new: np.ndarray,
                    superfocal: SuperFocalSet) -> np.ndarray:
    """Units of the cell's super-focal set whose exposure is unchanged
    under the candidate vector. Always a subset of the super-focal set."""
    if superfocal.cell is None:
        raise ValueError("focal indicator is defined per cell, not for unions")
    return (np.asarray(exposures_new) == superfocal.cell[0]) & superfocal.indicator


@dataclass
class AcceptedDraw:
    t_new: np.ndarray
    exposures_new: np.ndarray
    focal: np.ndarray  # union over the target's cells
    r_values: dict = field(default_factory=dict)


@dataclass
class ConditioningDiagnostics:
    n_candidates: int
    n_accepted: int
    cells: list
    failure_counts: dict

    @property
    def acceptance_rate(self) -> float:
        if self.n_candidates == 0:
            return 0.0
        return self.n_accepted / self.n_candidates


def sample_conditioning_set(mechanism, dataset, exposures_obs, mapping,
                            config: ConditioningConfig, b: int,
                            rng: np.random.Generator):
    """Draw b i.i.d. vectors from the conditioning set by rejection.

    A candidate from the mechanism is accepted when, for every cell the
    target names and both arms, the relative frequency of retained
    super-focal units strictly exceeds epsilon. Raises
    AcceptanceBudgetExhausted (naming the worst inequality) when
    b * max_attempts_per_accept candidates fail to produce b accepts.
    """
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    pi_obs = np.asarray(exposures_obs.values if hasattr(exposures_obs, "values")
                        else exposures_obs)
    x = dataset.x
    x_levels = dataset.x_levels if x is not None else None
    cells = config.target.cells(mapping.values, x_levels)
    sfs = [superfocal_for_cell(pi_obs, c, x) for c in cells]
    masks = [sf.indicator for sf in sfs]
    counts = [sf.n for sf in sfs]

    budget = b * config.max_attempts_per_accept
    draws: list[AcceptedDraw] = []
    attempts = 0
    acc_est = 0.5
    fail_counts = {(arm, c): 0 for c in cells for arm in (0, 1)}

    while len(draws) < b:
        if attempts >= budget:
            worst = max(fail_counts, key=fail_counts.get)
            raise AcceptanceBudgetExhausted(
                f"accepted {len(draws)}/{b} after {attempts} candidates; "
                f"worst inequality: arm={worst[0]}, cell={worst[1]} "
                f"failed {fail_counts[worst]} times (epsilon={config.epsilon})")
        need = b - len(draws)
        m = int(min(max(64, np.ceil(need / max(acc_est, 0.01) * 1.25)),
                    8192, budget - attempts))
        t_batch = mechanism.draw_batch(m, rng)
        pi_batch = mapping.compute_batch(t_batch, dataset.graph)
        ok = np.ones(m, dtype=bool)
        r_cols = {}
        focal_union = np.zeros((m, dataset.n), dtype=bool)
        for c, mask, cnt in zip(cells, masks, counts):
            in_cell = (pi_batch == c[0]) & mask
            focal_union |= in_cell
            for arm in (0, 1):
                r = (in_cell & (t_batch == arm)).sum(axis=1) / cnt
                r_cols[(arm, c)] = r
                bad = ~(r > config.epsilon)
                fail_counts[(arm, c)] += int(bad.sum())
                ok &= ~bad
        for row in np.flatnonzero(ok):
            if len(draws) == b:
                break
            draws.append(AcceptedDraw(
                t_new=t_batch[row].copy(),
                exposures_new=pi_batch[row].copy(),
                focal=focal_union[row].copy(),
                r_values={k: float(v[row]) for k, v in r_cols.items()}))
        attempts += m
        accepted_so_far = len(draws) if len(draws) < b else b
        acc_est = max(accepted_so_far / attempts, 1e-3)

    diag = ConditioningDiagnostics(n_candidates=attempts, n_accepted=b,
                                   cells=cells, failure_counts=fail_counts)
    return draws, diag


def select_observed_focal(superfocal: SuperFocalSet, accepted_draws,
                          t_obs: np.ndarray, rng: np.random.Generator,
                          min_per_arm: int = 1,
                          max_retries: int = 100) -> np.ndarray:
    """Uniform subset of the super-focal units sized to the mean focal
    count over the accepted draws (round half to even).

    Resamples until each treatment arm holds at least min_per_arm selected
    units; raises ArmEmptyAfterRetries when that is impossible or the
    retry budget runs out.
    """
    t_obs = np.asarray(t_obs)
    counts = [int((d.focal & superfocal.indicator).sum()) for d in accepted_draws]
    if not counts:
        raise ValueError("no accepted draws to size the selection from")
    size = round(float(np.mean(counts)))
    idx = np.flatnonzero(superfocal.indicator)
    arm1 = int(t_obs[idx].sum())
    arm0 = len(idx) - arm1
    lo = max(min_per_arm, size - arm0)
    hi = min(size - min_per_arm, arm1)
    if size < 2 * min_per_arm or lo > hi:
        raise ArmEmptyAfterRetries(
            f"selection of size {size} from {len(idx)} super-focal units "
            f"(arms {arm1}/{arm0}) cannot hold >= {min_per_arm} per arm")
    for _ in range(max_retries):
        pick = rng.choice(idx, size=size, replace=False)
        n1 = int(t_obs[pick].sum())
        if n1 >= min_per_arm and size - n1 >= min_per_arm:
            mask = np.zeros(len(t_obs), dtype=bool)
            mask[pick] = True
            return mask
    raise ArmEmptyAfterRetries(
        f"no selection with >= {min_per_arm} units per arm in {max_retries} tries")


def epsilon_feasibility(dataset, exposures_obs, use_covariate: bool = False) -> float:
    """Recommended upper bound for epsilon: the smallest joint empirical
    cell proportion Pr(T=t, Pi=pi[, X=x]) over arms and observed cells.

    Declared cells with no units at all are skipped: they cannot be
    tested at any epsilon, so they carry no information about the bound.
    """
    pi = np.asarray(exposures_obs.values if hasattr(exposures_obs, "values")
                    else exposures_obs)
    mapping_values = exposures_obs.mapping.values if hasattr(exposures_obs, "mapping") else sorted(set(pi.tolist()))
    t = dataset.t
    n = dataset.n
    best = 1.0
    for v in mapping_values:
        base = pi == v
        if use_covariate:
            if dataset.x is None:
                raise ValueError("use_covariate=True but dataset has no covariate")
            for lvl in dataset.x_levels:
                m = base & (dataset.x == lvl)
                if not m.any():
                    continue
                for arm in (0, 1):
                    best = min(best, int((m & (t == arm)).sum()) / n)
        else:
            if not base.any():
                continue
            for arm in (0, 1):
                best = min(best, int((base & (t == arm)).sum()) / n)
    return best
