"""Conditioning sets: super-focal units, frequencies, rejection sampling,
observed-focal selection, and the epsilon feasibility bound."""
from collections import Counter

import numpy as np
import pytest

from fixtures import (TEN_MAPPING, TEN_PI_ALT, TEN_PI_OBS, TEN_T_ALT,
                      TEN_T_OBS, TOY12_EPS, TOY12_MAPPING, TOY12_PI_OBS,
                      TOY12_T_OBS, make_line4, make_ten, make_toy12,
                      neighbor_lists, oracle_conditioning_set, oracle_focal,
                      oracle_r, LINE4_EDGES, TOY12_EDGES)
from netrand.conditioning import (AcceptedDraw, AllCells, AllExposures,
                                  ConditioningConfig, PerCell, PerExposure,
                                  SuperFocalSet, epsilon_feasibility,
                                  focal_indicator, relative_frequency,
                                  sample_conditioning_set,
                                  select_observed_focal, superfocal_for_cell,
                                  superfocal_union)
from netrand.errors import (AcceptanceBudgetExhausted, ArmEmptyAfterRetries,
                            EmptySuperFocal)
from netrand.assignment import CompleteRandomization
from netrand.exposure import compute_exposures

# the three vectors of the 4-path instance below that keep at least one
# unit of each arm inside exposure cell 1, worked out by hand
LINE4_T_OBS = (1, 1, 0, 0)
LINE4_PI_OBS = (1, 1, 1, 0)
LINE4_CELL1_SET = {(1, 1, 0, 0), (0, 1, 1, 0), (0, 0, 1, 1)}


class TestTargets:
    def test_cells_per_target(self):
        assert PerExposure(0).cells((0, 1)) == [(0,)]
        assert AllExposures().cells((0, 1)) == [(0,), (1,)]
        assert PerCell(1, "m").cells((0, 1), ("f", "m")) == [(1, "m")]
        assert AllCells().cells((0, 1), ("f", "m")) == [
            (0, "f"), (0, "m"), (1, "f"), (1, "m")]

    def test_all_cells_requires_levels(self):
        with pytest.raises(ValueError):
            AllCells().cells((0, 1), None)

    def test_epsilon_validated(self):
        with pytest.raises(ValueError):
            ConditioningConfig(epsilon=0.5, target=AllExposures())
        with pytest.raises(ValueError):
            ConditioningConfig(epsilon=0.0, target=AllExposures())


class TestSuperFocal:
    def test_fixture_cells(self):
        sf0 = superfocal_for_cell(np.array(TEN_PI_OBS), (0,))
        sf1 = superfocal_for_cell(np.array(TEN_PI_OBS), (1,))
        assert np.flatnonzero(sf0.indicator).tolist() == [1, 3, 4, 5, 9]
        assert np.flatnonzero(sf1.indicator).tolist() == [0, 2, 6, 7, 8]

    def test_fixture_covariate_cells(self):
        ds = make_ten(with_x=True)
        sf = superfocal_for_cell(np.array(TEN_PI_OBS), (0, "f"), ds.x)
        assert np.flatnonzero(sf.indicator).tolist() == [3, 4, 9]

    def test_empty_cell_raises(self):
        with pytest.raises(EmptySuperFocal):
            superfocal_for_cell(np.zeros(4, dtype=int), (1,))

    def test_union_covers_all_cells(self):
        u = superfocal_union(np.array(TEN_PI_OBS), [(0,), (1,)])
        assert u.n == 10 and u.cell is None


class TestRelativeFrequency:
    def test_fixture_hand_values_under_permuted_vector(self):
        pi_obs = np.array(TEN_PI_OBS)
        pi_alt = np.array(TEN_PI_ALT)
        t_alt = np.array(TEN_T_ALT)
        sf0 = superfocal_for_cell(pi_obs, (0,))
        sf1 = superfocal_for_cell(pi_obs, (1,))
        # no treated unit keeps exposure 0, so the permuted vector is
        # outside the conditioning set of cell 0
        assert relative_frequency(t_alt, pi_alt, sf0, arm=1) == 0.0
        assert relative_frequency(t_alt, pi_alt, sf0, arm=0) == pytest.approx(0.4)
        assert relative_frequency(t_alt, pi_alt, sf1, arm=1) == pytest.approx(0.4)
        assert relative_frequency(t_alt, pi_alt, sf1, arm=0) == 0.0

    def test_matches_oracle_on_random_vectors(self):
        ds = make_ten()
        nbrs = neighbor_lists(10, ds.graph.edges)
        rng = np.random.default_rng(2)
        pi_obs = np.array(TEN_PI_OBS)
        for _ in range(20):
            t = rng.permutation(np.array(TEN_T_OBS))
            pi = TEN_MAPPING.compute(t, ds.graph)
            for v in (0, 1):
                sf = superfocal_for_cell(pi_obs, (v,))
                for arm in (0, 1):
                    want = oracle_r(t.tolist(), pi.tolist(), TEN_PI_OBS, arm, v)
                    got = relative_frequency(t, pi, sf, arm)
                    assert got == pytest.approx(want)

    def test_union_rejected(self):
        u = superfocal_union(np.array(TEN_PI_OBS), [(0,), (1,)])
        with pytest.raises(ValueError):
            relative_frequency(np.array(TEN_T_ALT), np.array(TEN_PI_ALT), u, 1)


class TestFocalIndicator:
    def test_fixture_focal_under_permuted_vector(self):
        pi_obs = np.array(TEN_PI_OBS)
        pi_alt = np.array(TEN_PI_ALT)
        f1 = focal_indicator(pi_alt, superfocal_for_cell(pi_obs, (1,)))
        f0 = focal_indicator(pi_alt, superfocal_for_cell(pi_obs, (0,)))
        assert np.flatnonzero(f1).tolist() == [0, 2]
        assert np.flatnonzero(f0).tolist() == [5, 9]

    def test_matches_oracle_and_stays_inside_superfocal(self):
        ds = make_ten()
        rng = np.random.default_rng(4)
        pi_obs = np.array(TEN_PI_OBS)
        for _ in range(20):
            t = rng.permutation(np.array(TEN_T_OBS))
            pi = TEN_MAPPING.compute(t, ds.graph)
            for v in (0, 1):
                sf = superfocal_for_cell(pi_obs, (v,))
                f = focal_indicator(pi, sf)
                assert not (f & ~sf.indicator).any()
                assert tuple(np.flatnonzero(f).tolist()) == oracle_focal(
                    t.tolist(), pi.tolist(), TEN_PI_OBS, v)


class TestSampler:
    def _line4(self):
        ds = make_line4(t=LINE4_T_OBS)
        pi = compute_exposures(TEN_MAPPING, ds.t, ds.graph)
        assert pi.values.tolist() == list(LINE4_PI_OBS)
        return ds, pi

    def test_line4_support_matches_hand_enumeration(self):
        ds, pi = self._line4()
        oracle = oracle_conditioning_set(
            4, 2, neighbor_lists(4, LINE4_EDGES), LINE4_PI_OBS, 0.3, [(1,)])
        assert set(oracle) == LINE4_CELL1_SET
        cfg = ConditioningConfig(epsilon=0.3, target=PerExposure(1))
        draws, diag = sample_conditioning_set(
            CompleteRandomization(4, 2), ds, pi, TEN_MAPPING, cfg, 300,
            np.random.default_rng(0))
        got = Counter(tuple(int(v) for v in d.t_new) for d in draws)
        assert set(got) == LINE4_CELL1_SET
        # i.i.d. uniform over three vectors: each within 5 sigma of 100
        se = np.sqrt(300 * (1 / 3) * (2 / 3))
        assert all(abs(c - 100) < 5 * se for c in got.values())
        assert diag.n_accepted == 300

    def test_line4_draw_bookkeeping(self):
        ds, pi = self._line4()
        cfg = ConditioningConfig(epsilon=0.3, target=PerExposure(1))
        draws, _ = sample_conditioning_set(
            CompleteRandomization(4, 2), ds, pi, TEN_MAPPING, cfg, 50,
            np.random.default_rng(1))
        sf1 = superfocal_for_cell(np.array(LINE4_PI_OBS), (1,))
        for d in draws:
            t = tuple(int(v) for v in d.t_new)
            pi_new = TEN_MAPPING.compute(d.t_new, ds.graph)
            assert pi_new.tolist() == d.exposures_new.tolist()
            for arm in (0, 1):
                want = oracle_r(t, pi_new.tolist(), LINE4_PI_OBS, arm, 1)
                assert d.r_values[(arm, (1,))] == pytest.approx(want)
                assert d.r_values[(arm, (1,))] > 0.3
            want_focal = oracle_focal(t, pi_new.tolist(), LINE4_PI_OBS, 1)
            assert tuple(np.flatnonzero(d.focal & sf1.indicator).tolist()) == want_focal

    def test_line4_single_unit_cell_is_infeasible(self):
        # cell 0 holds only unit 3; one unit cannot sit in both arms, so
        # the sampler must exhaust its budget and name the inequality
        ds, pi = self._line4()
        cfg = ConditioningConfig(epsilon=0.3, target=PerExposure(0),
                                 max_attempts_per_accept=50)
        with pytest.raises(AcceptanceBudgetExhausted) as exc:
            sample_conditioning_set(CompleteRandomization(4, 2), ds, pi,
                                    TEN_MAPPING, cfg, 5, np.random.default_rng(0))
        assert "cell=(0,)" in str(exc.value)

    def test_toy12_joint_target_is_intersection(self):
        nbrs = neighbor_lists(12, TOY12_EDGES)
        t0 = oracle_conditioning_set(12, 6, nbrs, TOY12_PI_OBS, TOY12_EPS,
                                     [(0,)], comparator=">")
        t1 = oracle_conditioning_set(12, 6, nbrs, TOY12_PI_OBS, TOY12_EPS,
                                     [(1,)], comparator=">")
        joint = oracle_conditioning_set(12, 6, nbrs, TOY12_PI_OBS, TOY12_EPS,
                                        [(0,), (1,)], comparator=">")
        assert len(t0) == 94 and len(t1) == 106 and len(joint) == 23
        assert set(joint) == set(t0) & set(t1)
        assert TOY12_T_OBS in joint

    def test_toy12_sampled_draws_lie_in_enumerated_set(self):
        ds = make_toy12()
        pi = compute_exposures(TOY12_MAPPING, ds.t, ds.graph)
        nbrs = neighbor_lists(12, TOY12_EDGES)
        joint = set(oracle_conditioning_set(12, 6, nbrs, TOY12_PI_OBS,
                                            TOY12_EPS, [(0,), (1,)],
                                            comparator=">"))
        cfg = ConditioningConfig(epsilon=TOY12_EPS, target=AllExposures())
        draws, _ = sample_conditioning_set(
            CompleteRandomization(12, 6), ds, pi, TOY12_MAPPING, cfg, 200,
            np.random.default_rng(3))
        for d in draws:
            assert tuple(int(v) for v in d.t_new) in joint

    def test_identity_accepted_when_epsilon_below_bound(self):
        ds = make_toy12()
        pi = compute_exposures(TOY12_MAPPING, ds.t, ds.graph)
        bound = epsilon_feasibility(ds, pi)
        assert bound == pytest.approx(2 / 12)
        sf = {v: superfocal_for_cell(pi.values, (v,)) for v in (0, 1)}
        for v in (0, 1):
            for arm in (0, 1):
                r = relative_frequency(ds.t, pi.values, sf[v], arm)
                assert r > bound - 1e-12 or np.isclose(r, bound)
                assert r > 0.15  # any epsilon below the bound accepts it


class TestSelectObservedFocal:
    def _draws(self, focal_counts, sf_mask):
        idx = np.flatnonzero(sf_mask)
        out = []
        for c in focal_counts:
            f = np.zeros(len(sf_mask), dtype=bool)
            f[idx[:c]] = True
            out.append(AcceptedDraw(t_new=None, exposures_new=None, focal=f))
        return out

    def test_full_focal_counts_force_whole_superfocal(self):
        sf = SuperFocalSet(indicator=np.array([True] * 6 + [False] * 2), cell=(0,))
        t_obs = np.array([1, 1, 1, 0, 0, 0, 1, 0])
        draws = self._draws([6, 6, 6], sf.indicator)
        mask = select_observed_focal(sf, draws, t_obs, np.random.default_rng(0))
        assert mask.tolist() == sf.indicator.tolist()

    def test_rounded_mean_size(self):
        sf = SuperFocalSet(indicator=np.array([True] * 8 + [False] * 2), cell=(0,))
        t_obs = np.array([1, 1, 1, 1, 0, 0, 0, 0, 1, 0])
        draws = self._draws([4, 6], sf.indicator)
        mask = select_observed_focal(sf, draws, t_obs, np.random.default_rng(0))
        assert int(mask.sum()) == 5
        assert not (mask & ~sf.indicator).any()

    def test_round_half_to_even(self):
        sf = SuperFocalSet(indicator=np.array([True] * 8), cell=(0,))
        t_obs = np.array([1, 1, 1, 1, 0, 0, 0, 0])
        rng = np.random.default_rng(0)
        assert select_observed_focal(
            sf, self._draws([4, 5], sf.indicator), t_obs, rng).sum() == 4
        assert select_observed_focal(
            sf, self._draws([5, 6], sf.indicator), t_obs, rng).sum() == 6

    def test_both_arms_present(self):
        sf = SuperFocalSet(indicator=np.array([True] * 6), cell=(0,))
        t_obs = np.array([1, 0, 0, 0, 0, 0])
        rng = np.random.default_rng(0)
        for _ in range(20):
            mask = select_observed_focal(sf, self._draws([2, 2], sf.indicator),
                                         t_obs, rng)
            picked = np.flatnonzero(mask)
            arms = {int(t_obs[i]) for i in picked}
            assert arms == {0, 1}

    def test_impossible_arm_requirement_raises(self):
        sf = SuperFocalSet(indicator=np.array([True] * 6), cell=(0,))
        t_obs = np.array([1, 0, 0, 0, 0, 0])  # one treated unit only
        with pytest.raises(ArmEmptyAfterRetries):
            select_observed_focal(sf, self._draws([4, 4], sf.indicator), t_obs,
                                  np.random.default_rng(0), min_per_arm=2)

    def test_size_below_two_per_arm_raises(self):
        sf = SuperFocalSet(indicator=np.array([True] * 6), cell=(0,))
        t_obs = np.array([1, 1, 1, 0, 0, 0])
        with pytest.raises(ArmEmptyAfterRetries):
            select_observed_focal(sf, self._draws([2, 2], sf.indicator), t_obs,
                                  np.random.default_rng(0), min_per_arm=2)


class TestEpsilonFeasibility:
    def test_fixture_bound(self):
        ds = make_ten()
        exp = compute_exposures(TEN_MAPPING, ds.t, ds.graph)
        assert epsilon_feasibility(ds, exp) == pytest.approx(0.2)

    def test_fixture_bound_with_covariate(self):
        ds = make_ten(with_x=True)
        exp = compute_exposures(TEN_MAPPING, ds.t, ds.graph)
        assert epsilon_feasibility(ds, exp, use_covariate=True) == pytest.approx(0.1)

    def test_balanced_two_by_two(self):
        ds = make_line4(t=(1, 1, 0, 0))
        assert epsilon_feasibility(ds, np.array([0, 1, 0, 1])) == pytest.approx(0.25)

    def test_single_exposure_balanced_arms(self):
        ds = make_line4(t=(1, 1, 0, 0))
        assert epsilon_feasibility(ds, np.array([0, 0, 0, 0])) == pytest.approx(0.5)

    def test_covariate_requested_but_missing(self):
        ds = make_ten()
        exp = compute_exposures(TEN_MAPPING, ds.t, ds.graph)
        with pytest.raises(ValueError):
            epsilon_feasibility(ds, exp, use_covariate=True)
