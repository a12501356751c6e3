"""Screened, annealed stochastic search over models.

Each chain walks the model space: at every step the non-model covariates
are ranked by their conditional utility (the profile partial likelihood of
adding one covariate with the current coefficients held fixed), the ``d``
best form the addition neighbourhood, single-covariate removals form the
deletion neighbourhood, and the next model is drawn with probability
proportional to ``exp(log_score / t)`` for the current temperature ``t``.
Chains run independently and their visited models are pooled.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from threadpoolctl import threadpool_limits

from .cox import suffix_logsumexp, suffix_weighted_means
from .data import ModelId, SurvivalDataset, model_id, submatrix
from .exceptions import DataValidationError
from .posterior import ScoredModel, normalize_scores, score_model
from .priors import PriorSpec
from .rng import generator, seed_sequence

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURES = tuple(float(t) for t in np.linspace(3.0, 1.0, 10))


def default_d(p: int) -> int:
    """Screening-set size ``2 * ceil(log p)`` (natural log), at least 1."""
    return max(1, 2 * math.ceil(math.log(max(p, 2))))


@dataclass(frozen=True)
class SearchConfig:
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    iters_per_temp: int = 30
    d: int | None = None
    chains: int = 1
    seed: int = 0
    start_models: tuple[ModelId, ...] | None = None
    threads: int = 1

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures)
        if not temps or min(temps) < 1 or any(b > a for a, b in zip(temps, temps[1:])):
            raise DataValidationError("temperatures must be >= 1 and non-increasing")
        if self.iters_per_temp < 1 or self.chains < 1 or self.threads < 1:
            raise DataValidationError("iters_per_temp, chains and threads must be >= 1")
        if self.d is not None and self.d < 1:
            raise DataValidationError("d must be >= 1")
        object.__setattr__(self, "temperatures", temps)

    def resolved_d(self, p_nonfixed: int) -> int:
        return self.d if self.d is not None else default_d(p_nonfixed)


@dataclass
class ModelPool:
    """Visited models keyed by :data:`ModelId`, with visit provenance."""

    models: dict[ModelId, ScoredModel] = field(default_factory=dict)
    visits: Counter = field(default_factory=Counter)
    chains: dict[ModelId, frozenset] = field(default_factory=dict)
    stalls: int = 0

    def __len__(self):
        return len(self.models)

    def __contains__(self, model):
        return tuple(model) in self.models

    def add(self, scored: ScoredModel, chain_id: int = 0) -> None:
        key = scored.model
        self.models.setdefault(key, scored)
        self.chains[key] = self.chains.get(key, frozenset()) | {chain_id}

    def merge(self, other: "ModelPool") -> "ModelPool":
        """Key union; the first score seen for a model is kept (scores are
        deterministic, so both copies agree)."""
        out = ModelPool(dict(self.models), self.visits + other.visits,
                        dict(self.chains), self.stalls + other.stalls)
        for key, scored in other.models.items():
            out.models.setdefault(key, scored)
            out.chains[key] = out.chains.get(key, frozenset()) | other.chains[key]
        return out

    def sorted_models(self) -> list[ScoredModel]:
        return [self.models[k] for k in sorted(self.models)]


# -- screening ---------------------------------------------------------------

def _revcumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def _profile_terms(Xc, b, offset, status, events):
    """Profile log-likelihood, score and information for each column of Xc."""
    W = Xc * b + offset[:, None]
    hi = W.max(axis=0)
    wide = hi - W.min(axis=0) >= 600.0
    E = np.exp(W - hi)
    S0 = _revcumsum(E)[events]
    XE = Xc * E
    S1 = _revcumsum(XE)[events]
    S2 = _revcumsum(Xc * XE)[events]
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.sum(W[events] - hi - np.log(S0), axis=0)
        mean = S1 / S0
        grad = np.sum(Xc[events] - mean, axis=0)
        curv = np.sum(S2 / S0 - mean * mean, axis=0)
    for j in np.flatnonzero(wide):
        lp = W[:, j]
        log_psi = suffix_logsumexp(lp)
        x = Xc[:, j]
        m = suffix_weighted_means(np.column_stack([x, x * x]), lp, log_psi)[events]
        ll[j] = float(status @ (lp - log_psi))
        grad[j] = float(np.sum(x[events] - m[:, 0]))
        curv[j] = float(np.sum(m[:, 1] - m[:, 0] ** 2))
    return ll, grad, np.maximum(curv, 0.0)


def conditional_utilities(dataset: SurvivalDataset, current: ModelId, beta_current,
                          candidates: Sequence[int] | None = None, tol: float = 1e-6,
                          max_iter: int = 50):
    """Conditional utility of each candidate column given the current model.

    For every candidate ``m`` maximizes over the scalar ``b`` the log partial
    likelihood of ``X_k beta_k + b x_m`` with ``beta_k`` held fixed, using
    safeguarded Newton steps vectorized across candidates.

    Returns
    -------
    utilities : (m,) array
    converged : (m,) bool array
    candidates : (m,) int array
    """
    if candidates is None:
        mask = np.ones(dataset.p, dtype=bool)
        mask[list(current)] = False
        candidates = np.flatnonzero(mask)
    candidates = np.asarray(candidates, dtype=int)
    status = dataset.status
    events = status > 0
    if len(current):
        offset = submatrix(dataset, current) @ np.asarray(beta_current, dtype=float)
    else:
        offset = np.zeros(dataset.n)
    Xc = dataset.design[:, candidates]
    b = np.zeros(len(candidates))
    ll, grad, curv = _profile_terms(Xc, b, offset, status, events)
    done = np.abs(grad) < tol
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        g, h = grad[act], curv[act]
        step = np.where(h > 1e-12, g / np.where(h > 1e-12, h, 1.0), np.sign(g))
        step = np.clip(step, -5.0, 5.0)
        Xa = Xc[:, act]
        pending = np.arange(act.size)
        for _ in range(30):
            idx = act[pending]
            t_ll, t_grad, t_curv = _profile_terms(
                Xa[:, pending], b[idx] + step[pending], offset, status, events)
            ok = t_ll >= ll[idx] - 1e-12 * np.abs(ll[idx])
            acc = idx[ok]
            b[acc] += step[pending][ok]
            ll[acc], grad[acc], curv[acc] = t_ll[ok], t_grad[ok], t_curv[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            step[pending] *= 0.5
        stuck = act[pending] if pending.size else np.zeros(0, dtype=int)
        done[act] = np.abs(grad[act]) < tol
        done[stuck] = True
        done |= np.abs(b) > 50.0
    converged = np.abs(grad) < tol
    return ll, converged, candidates


def conditional_utility(m: int, current: ModelId, dataset: SurvivalDataset, beta_current) -> float:
    """Conditional utility of a single column ``m`` not in ``current``."""
    if m in current:
        raise DataValidationError(f"column {m} already in the model")
    u, _, _ = conditional_utilities(dataset, current, beta_current, candidates=[m])
    return float(u[0])


def neighborhoods(current: ModelId, dataset: SurvivalDataset, beta_current, d: int):
    """Addition set (top-``d`` utility columns) and deletion set of a model."""
    fixed = set(dataset.fixed_columns)
    plus: list[ModelId] = []
    if len(current) < dataset.p:
        util, _, cand = conditional_utilities(dataset, current, beta_current)
        top = cand[np.argsort(-util, kind="stable")[:d]]
        plus = [model_id(current + (int(m),)) for m in top]
    minus = [tuple(j for j in current if j != drop) for drop in current if drop not in fixed]
    return plus, minus


# -- chains -------------------------------------------------------------------

def _choose(log_scores: np.ndarray, temperature: float, rng) -> int | None:
    finite = np.isfinite(log_scores)
    if not finite.any():
        return None
    z = np.where(finite, log_scores / temperature, -np.inf)
    probs = np.exp(z - logsumexp(z))
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(probs) - 1)


def s5_chain(dataset: SurvivalDataset, prior: PriorSpec, config: SearchConfig,
             start: ModelId, chain_seed, chain_id: int = 0) -> ModelPool:
    """Run one annealed chain from ``start``; return every model it scored."""
    fixed = dataset.fixed_columns
    start = model_id(start, fixed)
    rng = generator(chain_seed)
    d = config.resolved_d(dataset.p - len(fixed))
    pool = ModelPool()
    screens: dict[ModelId, tuple] = {}

    def score(model):
        if model not in pool.models:
            pool.add(score_model(dataset, model, prior), chain_id)
        return pool.models[model]

    current = start
    score(current)
    pool.visits[current] += 1
    for temperature in config.temperatures:
        for _ in range(config.iters_per_temp):
            if current not in screens:
                screens[current] = neighborhoods(current, dataset, score(current).beta_map, d)
            plus, minus = screens[current]
            candidates = [current, *plus, *minus]
            log_scores = np.array([score(m).log_score for m in candidates])
            pick = _choose(log_scores, temperature, rng)
            if pick is None:
                pool.stalls += 1
                pick = 0
            current = candidates[pick]
            pool.visits[current] += 1
    return pool


def _chain_starts(dataset: SurvivalDataset, config: SearchConfig) -> list[ModelId]:
    fixed = dataset.fixed_columns
    if config.start_models:
        starts = [model_id(m, fixed) for m in config.start_models]
        return [starts[i % len(starts)] for i in range(config.chains)]
    free = dataset.nonfixed_columns
    if free.size == 0:
        return [model_id((), fixed)] * config.chains
    rng = generator(seed_sequence(config.seed, "starts"))
    reps = -(-config.chains // free.size)
    order = np.concatenate([rng.permutation(free) for _ in range(reps)])
    return [model_id((int(order[i]),), fixed) for i in range(config.chains)]


_WORKER: dict = {}


def _init_worker(dataset, prior, config):
    _WORKER.update(dataset=dataset, prior=prior, config=config)


def _chain_task(args):
    start, chain_id = args
    return _run_chain(_WORKER["dataset"], _WORKER["prior"], _WORKER["config"], start, chain_id)


def _run_chain(dataset, prior, config, start, chain_id):
    with threadpool_limits(limits=1):
        seed = seed_sequence(config.seed, "chain", chain_id)
        return s5_chain(dataset, prior, config, start, seed, chain_id)


def run_search(dataset: SurvivalDataset, prior: PriorSpec, config: SearchConfig) -> ModelPool:
    """Run ``config.chains`` independent chains and pool their models.

    Chain ``i`` uses its own random stream derived from ``(seed, i)``, so the
    result does not depend on ``config.threads`` or scheduling order.
    """
    starts = _chain_starts(dataset, config)
    tasks = list(zip(starts, range(config.chains)))
    if config.threads == 1 or config.chains == 1:
        pools = [_run_chain(dataset, prior, config, s, i) for s, i in tasks]
    else:
        workers = min(config.threads, config.chains)
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(dataset, prior, config)) as ex:
            pools = list(ex.map(_chain_task, tasks))
    merged = ModelPool()
    for pool in pools:
        merged = merged.merge(pool)
    return merged


# -- summaries ------------------------------------------------------------------

@dataclass
class SearchSummary:
    models: list[ScoredModel]
    probabilities: np.ndarray
    hppm: ScoredModel
    mpm: ModelId
    inclusion: np.ndarray
    occam_models: list[ScoredModel]
    occam_weights: np.ndarray

    def top(self, count: int = 50) -> list[tuple[ScoredModel, float]]:
        order = np.argsort(-self.probabilities, kind="stable")[:count]
        return [(self.models[i], float(self.probabilities[i])) for i in order]


def summaries(pool: ModelPool, p: int, occam_window: float = 0.01,
              fixed: Sequence[int] = ()) -> SearchSummary:
    """HPPM, median probability model, inclusion probabilities and the
    Occam's-window model set with renormalized weights.

    ``p`` is the total number of design columns; ``fixed`` columns are in
    every model and get inclusion probability exactly 1.
    """
    if len(pool) == 0:
        raise DataValidationError("empty model pool")
    models = pool.sorted_models()
    probs = normalize_scores(models)
    best = int(np.argmax([m.log_score for m in models]))
    inclusion = np.zeros(p)
    for m, w in zip(models, probs):
        if m.model:
            inclusion[list(m.model)] += w
    inclusion = np.clip(inclusion, 0.0, 1.0)
    inclusion[list(fixed)] = 1.0
    # ">= 0.5" with room for summation rounding at exact ties
    mpm = tuple(int(j) for j in np.flatnonzero(inclusion >= 0.5 - 1e-12))
    keep = np.flatnonzero(probs >= occam_window * probs[best])
    weights = probs[keep] / probs[keep].sum()
    return SearchSummary(models, probs, models[best], mpm, inclusion,
                         [models[i] for i in keep], weights)
