import numpy as np
import pytest

from conftest import make_dataset
from bvsurv.cox import cox_mle, partial_loglik
from bvsurv.data import submatrix, sort_by_time
from bvsurv.exceptions import DataValidationError
from bvsurv.posterior import ScoredModel, score_model
from bvsurv.priors import PriorSpec
from bvsurv.rng import generator, seed_sequence, stream
from bvsurv.search import (DEFAULT_TEMPERATURES, ModelPool, SearchConfig, _chain_starts, _choose,
                           conditional_utilities, conditional_utility, default_d, neighborhoods,
                           run_search, s5_chain, summaries)
from bvsurv.simulate import simulate_dataset

PRIOR = PriorSpec(tau=0.25)


def fake(model, score):
    return ScoredModel(tuple(model), np.ones(len(model)), score, 0.0, score, np.isfinite(score), 0.0)


def test_defaults():
    assert DEFAULT_TEMPERATURES[0] == 3.0 and DEFAULT_TEMPERATURES[-1] == 1.0
    assert len(DEFAULT_TEMPERATURES) == 10
    assert default_d(1000) == 2 * 7
    assert default_d(300) == 12
    with pytest.raises(DataValidationError):
        SearchConfig(temperatures=(1.0, 2.0))
    with pytest.raises(DataValidationError):
        SearchConfig(temperatures=(0.5,))
    with pytest.raises(DataValidationError):
        SearchConfig(chains=0)


def test_neighborhoods_empty_current():
    d = make_dataset(n=50, p=5, seed=0)
    plus, minus = neighborhoods((), d, np.zeros(0), 2)
    assert len(plus) == 2 and all(len(m) == 1 for m in plus)
    assert minus == []


def test_neighborhoods_with_fixed():
    d = make_dataset(n=60, p=15, seed=1, fixed=(0,))
    current = (0, 7, 12)
    beta = score_model(d, current, PRIOR).beta_map
    plus, minus = neighborhoods(current, d, beta, 3)
    assert sorted(minus) == [(0, 7), (0, 12)]
    assert all(set(current) < set(m) and len(m) == 4 for m in plus)
    plus, minus = neighborhoods((0,), d, score_model(d, (0,), PRIOR).beta_map, 2)
    assert minus == []


def test_neighborhoods_truncated():
    d = make_dataset(n=50, p=4, seed=2)
    beta = score_model(d, (0, 1), PRIOR).beta_map
    plus, _ = neighborhoods((0, 1), d, beta, 10)
    assert sorted(plus) == [(0, 1, 2), (0, 1, 3)]


def test_utility_constant_column():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.standard_normal(40), np.full(40, 2.5)])
    d = sort_by_time(rng.exponential(size=40), np.ones(40), X)
    beta = np.array([0.3])
    u = conditional_utility(1, (0,), d, beta)
    assert u == pytest.approx(partial_loglik(submatrix(d, (0,)), beta, d.status))


def test_utility_empty_model_is_univariate_cox():
    d = make_dataset(n=80, p=6, beta=[1, 0.5, 0, 0, 0, 0], seed=3)
    util, conv, cand = conditional_utilities(d, (), np.zeros(0))
    assert conv.all()
    for j in cand:
        fit = cox_mle(submatrix(d, (j,)), d.status)
        assert util[j] == pytest.approx(fit.loglik, abs=1e-8)


def test_utility_rejects_member():
    d = make_dataset(n=30, p=3, seed=0)
    with pytest.raises(DataValidationError):
        conditional_utility(0, (0,), d, [0.1])


def test_utility_ranks_omitted_true_covariate():
    hits = 0
    for rep in range(20):
        d, beta = simulate_dataset("2", 300, 100, seed=7, replicate=rep)
        current = (0, 1, 2, 3, 4)
        b = score_model(d, current, PRIOR).beta_map
        util, _, cand = conditional_utilities(d, current, b)
        hits += cand[int(np.argmax(util))] == 5
    assert hits >= 18


def test_choose_is_boltzmann():
    scores = np.array([0.0, -0.5, -1.0, -2.0, -np.inf])
    probs = np.exp(scores - np.logaddexp.reduce(scores))
    draws = np.array([_choose(scores, 1.0, stream(3, "boltzmann", i)) for i in range(10_000)])
    counts = np.bincount(draws, minlength=5)
    sigma = np.sqrt(10_000 * probs * (1 - probs))
    assert np.all(np.abs(counts - 10_000 * probs) <= 3 * sigma + 1e-9)
    assert counts[-1] == 0


def test_choose_flattens_at_high_temperature():
    scores = np.array([0.0, -1.0, -2.0])
    draws = np.array([_choose(scores, 100.0, stream(4, "hot", i)) for i in range(6000)])
    freq = np.bincount(draws, minlength=3) / 6000
    np.testing.assert_allclose(freq, 1 / 3, atol=0.03)


def test_choose_all_unscorable():
    assert _choose(np.array([-np.inf, -np.inf]), 1.0, stream(0, "x")) is None


def test_single_step_chain_matches_scores():
    d = make_dataset(n=60, p=6, beta=[1.0, 0, 0, 0, 0, 0], seed=4)
    config = SearchConfig(temperatures=(1.0,), iters_per_temp=1, d=2)
    start = (1,)
    plus, minus = neighborhoods(start, d, score_model(d, start, PRIOR).beta_map, 2)
    cands = [start, *plus, *minus]
    scores = np.array([score_model(d, m, PRIOR).log_score for m in cands])
    probs = np.exp(scores - np.logaddexp.reduce(scores))
    reps = 300
    counts = dict.fromkeys(cands, 0)
    for s in range(reps):
        pool = s5_chain(d, PRIOR, config, start, seed_sequence(s, "chain", 0))
        moved = [m for m, v in pool.visits.items() if m != start or v == 2]
        counts[moved[0] if moved else start] += 1
    for m, pr in zip(cands, probs):
        sigma = np.sqrt(reps * pr * (1 - pr))
        assert abs(counts[m] - reps * pr) <= 3 * sigma + 1


def test_run_search_single_chain_equals_s5_chain(small_data):
    config = SearchConfig(iters_per_temp=3, seed=5)
    pool = run_search(small_data, PRIOR, config)
    start = _chain_starts(small_data, config)[0]
    direct = s5_chain(small_data, PRIOR, config, start, seed_sequence(5, "chain", 0))
    assert sorted(pool.models) == sorted(direct.models)
    assert pool.visits == direct.visits


def test_chain_starts_distinct_and_include_fixed():
    d = make_dataset(n=40, p=10, seed=0, fixed=(9,))
    starts = _chain_starts(d, SearchConfig(chains=9, seed=1))
    assert len(set(starts)) == 9
    assert all(9 in s and len(s) == 2 for s in starts)


def test_pool_merge_union():
    a, b, c = ModelPool(), ModelPool(), ModelPool()
    a.add(fake((0,), -1.0), 0)
    b.add(fake((1,), -2.0), 1)
    c.add(fake((0,), -1.0), 2)
    c.add(fake((2,), -3.0), 2)
    assert len(a.merge(b)) == 2
    ab_c = a.merge(b).merge(c)
    a_bc = a.merge(b.merge(c))
    ca_b = c.merge(a).merge(b)
    assert sorted(ab_c.models) == sorted(a_bc.models) == sorted(ca_b.models)
    assert ab_c.chains[(0,)] == frozenset({0, 2})


def test_summaries_single_model():
    pool = ModelPool()
    pool.add(fake((1, 3), -5.0))
    s = summaries(pool, 5)
    assert s.hppm.model == (1, 3) and s.mpm == (1, 3)
    np.testing.assert_allclose(s.inclusion, [0, 1, 0, 1, 0])


def test_summaries_tie_goes_into_mpm():
    pool = ModelPool()
    pool.add(fake((1,), -5.0))
    pool.add(fake((2,), -5.0))
    s = summaries(pool, 4)
    np.testing.assert_allclose(s.inclusion[[1, 2]], [0.5, 0.5])
    assert s.mpm == (1, 2)


def test_summaries_invariants_and_occam():
    pool = ModelPool()
    for model, score in [((0,), -1.0), ((0, 1), -2.0), ((2,), -1.5), ((1, 2), -9.0), ((3,), -np.inf)]:
        pool.add(fake(model, score))
    s = summaries(pool, 4, occam_window=0.01)
    assert s.probabilities.sum() == pytest.approx(1.0)
    assert np.all((s.inclusion >= 0) & (s.inclusion <= 1))
    sizes = np.array([len(m.model) for m in s.models])
    assert s.inclusion.sum() == pytest.approx((s.probabilities * sizes).sum())
    assert all(s.hppm.log_score >= m.log_score for m in s.models)
    assert {m.model for m in s.occam_models} == {(0,), (0, 1), (2,)}
    assert s.occam_weights.sum() == pytest.approx(1.0)
    with pytest.raises(DataValidationError):
        summaries(ModelPool(), 4)


def test_fixed_columns_probability_one():
    d = make_dataset(n=60, p=8, beta=[0, 1.0, 0, 0, 0, 0, 0, 0], seed=6, fixed=(0,))
    pool = run_search(d, PRIOR, SearchConfig(chains=2, iters_per_temp=3, seed=2))
    assert all(0 in m for m in pool.models)
    s = summaries(pool, d.p, fixed=d.fixed_columns)
    assert s.inclusion[0] == 1.0
    assert 0 in s.mpm and 0 in s.hppm.model


def test_thread_count_does_not_change_pool(small_data):
    base = SearchConfig(chains=3, iters_per_temp=2, seed=9)
    serial = run_search(small_data, PRIOR, base)
    from dataclasses import replace
    parallel = run_search(small_data, PRIOR, replace(base, threads=3))
    assert sorted(serial.models) == sorted(parallel.models)
    for k in serial.models:
        np.testing.assert_array_equal(serial.models[k].beta_map, parallel.models[k].beta_map)
        assert serial.models[k].log_score == parallel.models[k].log_score
    assert serial.visits == parallel.visits


def test_finds_exhaustive_best_small_problem():
    import itertools
    d, _ = simulate_dataset("2", 150, 8, seed=3)
    best = max((score_model(d, m, PRIOR) for k in range(9)
                for m in itertools.combinations(range(8), k)), key=lambda s: s.log_score)
    pool = run_search(d, PRIOR, SearchConfig(chains=2, seed=4))
    assert summaries(pool, 8).hppm.model == best.model
