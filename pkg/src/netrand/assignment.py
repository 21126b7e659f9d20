"""Randomization mechanisms with known, enumerable support."""
from __future__ import annotations

import numpy as np

from .errors import InfeasibleCounts


class CompleteRandomization:
    """Uniform draw over all treatment vectors with a fixed treated count."""

    def __init__(self, n_units: int, n_treated: int):
        if not 0 <= n_treated <= n_units:
            raise InfeasibleCounts(
                f"n_treated={n_treated} outside 0..{n_units}")
        self.n_units = int(n_units)
        self.n_treated = int(n_treated)
        base = np.zeros(self.n_units, dtype=np.int8)
        base[: self.n_treated] = 1
        self._base = base

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return rng.permutation(self._base)

    def draw_batch(self, m: int, rng: np.random.Generator) -> np.ndarray:
        block = np.tile(self._base, (m, 1))
        return rng.permuted(block, axis=1)

    def supports(self, t: np.ndarray) -> bool:
        t = np.asarray(t)
        if t.shape != (self.n_units,):
            return False
        vals = set(np.unique(t).tolist())
        return vals <= {0, 1} and int(t.sum()) == self.n_treated

    def __repr__(self) -> str:
        return f"CompleteRandomization(n_units={self.n_units}, n_treated={self.n_treated})"


class StratifiedComplete:
    """Complete randomization independently within design strata."""

    def __init__(self, strata: np.ndarray, n_treated_per_stratum: dict):
        self.strata = np.asarray(strata)
        self.n_units = len(self.strata)
        self.levels = sorted(np.unique(self.strata).tolist())
        self.n_treated_per_stratum = dict(n_treated_per_stratum)
        self._index = {}
        for lvl in self.levels:
            idx = np.flatnonzero(self.strata == lvl)
            if lvl not in self.n_treated_per_stratum:
                raise InfeasibleCounts(f"no treated count given for stratum {lvl!r}")
            k = int(self.n_treated_per_stratum[lvl])
            if not 0 <= k <= len(idx):
                raise InfeasibleCounts(
                    f"stratum {lvl!r}: n_treated={k} outside 0..{len(idx)}")
            self._index[lvl] = (idx, k)
        extra = set(self.n_treated_per_stratum) - set(self.levels)
        if extra:
            raise InfeasibleCounts(f"counts given for unknown strata {sorted(extra)!r}")

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.draw_batch(1, rng)[0]

    def draw_batch(self, m: int, rng: np.random.Generator) -> np.ndarray:
        out = np.zeros((m, self.n_units), dtype=np.int8)
        for lvl in self.levels:
            idx, k = self._index[lvl]
            base = np.zeros(len(idx), dtype=np.int8)
            base[:k] = 1
            block = rng.permuted(np.tile(base, (m, 1)), axis=1)
            out[:, idx] = block
        return out

    def supports(self, t: np.ndarray) -> bool:
        t = np.asarray(t)
        if t.shape != (self.n_units,):
            return False
        vals = set(np.unique(t).tolist())
        if not vals <= {0, 1}:
            return False
        for lvl in self.levels:
            idx, k = self._index[lvl]
            if int(t[idx].sum()) != k:
                return False
        return True

    def __repr__(self) -> str:
        return f"StratifiedComplete(n_units={self.n_units}, strata={len(self.levels)})"


def draw(mechanism, rng: np.random.Generator) -> np.ndarray:
    return mechanism.draw(rng)


def supports(mechanism, t: np.ndarray) -> bool:
    return mechanism.supports(t)
