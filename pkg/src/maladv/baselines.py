"""Reference attacks the annealing attack is benchmarked against.

* jsmf: white-box saliency walk that greedily flips the zero feature with
  the largest positive gradient of the benign probability.
* genattack: query-only genetic search with fitness-proportional selection,
  OR-crossover of added-feature sets and a light random mutation.
* pointwise: query-only two-phase search; random additive noise of rising
  intensity until the verdict flips, then greedy reversion of the added
  features down to a 1-minimal set.

All three preserve the add-only contract and the flip budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadConfig,
    DimensionError,
    NoCandidates,
    NotMalicious,
    QueryBudgetExceeded,
)
from .features import BinaryFeatureVector, FeatureMask
from .ofei import AttackResult, _vec_of
from .oracle import OracleSession

logger = logging.getLogger(__name__)


def _setup(x0, session: OracleSession, mask: FeatureMask):
    """Shared preamble: dimension checks, candidate pool, malicious check."""
    xv = _vec_of(x0)
    m = session.input_dim
    if xv.m != m:
        raise DimensionError(f"sample m={xv.m}, model expects {m}")
    if mask.m != m:
        raise DimensionError(f"mask m={mask.m}, model expects {m}")
    eligible = np.zeros(m, dtype=bool)
    if mask.allowed:
        eligible[sorted(mask.allowed)] = True
    if xv.active:
        eligible[list(xv.active)] = False
    if not eligible.any():
        raise NoCandidates("mask leaves no zero-valued feature to flip")
    q0 = session.query(xv)
    if q0[0] >= q0[1]:
        raise NotMalicious("oracle already classifies the sample as benign")
    return xv, eligible


def _failure(xv, reason: str, queries: int) -> AttackResult:
    return AttackResult(
        success=False,
        original=xv,
        adversarial=xv,
        flipped=(),
        perturbations=0,
        total_queries=queries,
        failure_reason=reason,
    )


def _success(xv, adv_dense: np.ndarray, flips, queries: int) -> AttackResult:
    adv = BinaryFeatureVector.from_dense(adv_dense)
    return AttackResult(
        success=True,
        original=xv,
        adversarial=adv,
        flipped=tuple(int(f) for f in flips),
        perturbations=len(flips),
        total_queries=queries,
    )


# ---- saliency walk -------------------------------------------------------


def jsmf_attack(x0, session: OracleSession, mask: FeatureMask, max_flips: int = 20) -> AttackResult:
    """Greedy white-box attack: each iteration flips the allowed zero
    feature with the largest positive d p_benign / d x_i (ties break to the
    lowest index), until benign or the flip budget runs out."""
    q_start = session.query_count
    xv, eligible = _setup(x0, session, mask)
    base = xv.to_dense()
    flips: list[int] = []
    try:
        while len(flips) < max_flips:
            sal = session.jacobian(base)[0]
            pool = np.flatnonzero(eligible)
            pos = pool[sal[pool] > 0.0]
            if pos.size == 0:
                return _failure(xv, "no positive-saliency candidate", session.query_count - q_start)
            best = int(pos[np.argmax(sal[pos])])  # first max wins: lowest index
            base[best] = 1.0
            eligible[best] = False
            flips.append(best)
            q = session.query(base)
            if q[0] >= q[1]:
                return _success(xv, base, flips, session.query_count - q_start)
    except QueryBudgetExceeded:
        return _failure(xv, "query budget exceeded", session.query_count - q_start)
    return _failure(xv, "flip budget exhausted", session.query_count - q_start)


# ---- genetic search ------------------------------------------------------


@dataclass(frozen=True)
class GenAttackParams:
    population: int = 6
    mutation: float = 0.05
    max_generations: int = 1000
    seed: int = 0

    def validate(self) -> None:
        if self.population < 1:
            raise BadConfig("population must be at least 1")
        if not (0.0 <= self.mutation <= 1.0):
            raise BadConfig("mutation must lie in [0, 1]")
        if self.max_generations < 1:
            raise BadConfig("max_generations must be at least 1")


def or_crossover(
    parent_a: frozenset, parent_b: frozenset, max_flips: int, rng: np.random.Generator
) -> frozenset:
    """Union of the parents' added sets, trimmed at random down to budget."""
    child = parent_a | parent_b
    if len(child) > max_flips:
        keep = rng.choice(sorted(child), size=max_flips, replace=False)
        child = frozenset(int(i) for i in keep)
    return child


def genattack(
    x0,
    session: OracleSession,
    mask: FeatureMask,
    max_flips: int = 20,
    params: GenAttackParams = GenAttackParams(),
) -> AttackResult:
    """Population search over added-feature sets.

    One query per member per generation scores fitness as the benign
    probability.  The fittest member survives unchanged; the rest are
    OR-crossovers of parents drawn with probability proportional to
    fitness.  Each child mutates with probability `mutation` by toggling
    a geometric burst of gene slots: a toggled slot drops one added
    feature when the set is large relative to a soft cap at 60% of the
    budget, and otherwise adds a random open one.  Bursts let the search
    escape regions where no single flip moves the score, and the
    occupancy-weighted drop keeps set size selection-driven instead of
    union-driven.
    """
    params.validate()
    q_start = session.query_count
    xv, eligible = _setup(x0, session, mask)
    base = xv.to_dense()
    rng = np.random.default_rng(params.seed)
    pool = np.flatnonzero(eligible)
    pool_set = frozenset(int(i) for i in pool)

    population = [frozenset({int(rng.choice(pool))}) for _ in range(params.population)]
    slim_cap = max(6, (3 * max_flips) // 5)
    try:
        for gen in range(params.max_generations):
            fits = np.empty(len(population))
            for i, member in enumerate(population):
                dense = base.copy()
                dense[sorted(member)] = 1.0
                fits[i] = float(session.query(dense)[0])
            best_i = int(np.argmax(fits))
            if fits[best_i] >= 0.5:  # fittest member classifies benign
                member = population[best_i]
                dense = base.copy()
                dense[sorted(member)] = 1.0
                return _success(xv, dense, sorted(member), session.query_count - q_start)
            if gen == params.max_generations - 1:
                break
            total = float(fits.sum())
            probs = fits / total if total > 0.0 else np.full(len(fits), 1.0 / len(fits))
            # elite survives; near-ties favor the leanest member so junk
            # genes wash out instead of compounding
            near = [i for i in range(len(population)) if fits[i] >= 0.98 * fits[best_i]]
            elite_i = min(near, key=lambda i: (len(population[i]), -fits[i]))
            nxt = [population[elite_i]]
            while len(nxt) < params.population:
                pa, pb = rng.choice(len(population), size=2, replace=True, p=probs)
                child = or_crossover(population[pa], population[pb], max_flips, rng)
                if rng.random() < params.mutation:
                    for _ in range(int(rng.geometric(0.5))):
                        if int(rng.integers(slim_cap)) < len(child):
                            child = child - {sorted(child)[rng.integers(len(child))]}
                        else:
                            open_feats = sorted(pool_set - child)
                            if open_feats:
                                child = child | {open_feats[rng.integers(len(open_feats))]}
                nxt.append(child)
            population = nxt
    except QueryBudgetExceeded:
        return _failure(xv, "query budget exceeded", session.query_count - q_start)
    return _failure(xv, "generation budget exhausted", session.query_count - q_start)


# ---- pointwise noise-then-revert ------------------------------------------


@dataclass(frozen=True)
class PointwiseParams:
    step: float = 0.001
    repeats: int = 10
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.step <= 1.0):
            raise BadConfig("step must lie in (0, 1]")
        if self.repeats < 1:
            raise BadConfig("repeats must be at least 1")


def pointwise_attack(
    x0,
    session: OracleSession,
    mask: FeatureMask,
    max_flips: int = 20,
    params: PointwiseParams = PointwiseParams(),
) -> AttackResult:
    """Additive noise at rising intensity, then greedy 1-minimal reversion.

    Phase 1 gives every allowed zero feature a noise threshold drawn once
    per repeat; at intensity q = step, 2*step, ... the features whose
    thresholds lie below q are flipped, so each is flipped with
    probability q and the noise mask grows with the intensity.  The climb
    stops at the first benign vector; the cheapest one over `repeats`
    tries seeds phase 2, which repeatedly reverts any single added
    feature whose removal keeps the benign verdict.  Fails when the
    surviving set exceeds the flip budget.
    """
    params.validate()
    q_start = session.query_count
    xv, eligible = _setup(x0, session, mask)
    base = xv.to_dense()
    rng = np.random.default_rng(params.seed)
    pool = np.flatnonzero(eligible)
    n_levels = int(round(1.0 / params.step))

    best_added: np.ndarray | None = None
    try:
        for _rep in range(params.repeats):
            thresholds = rng.random(pool.size)
            for level in range(1, n_levels + 1):
                q = level * params.step
                added = pool[thresholds < q]
                dense = base.copy()
                dense[added] = 1.0
                resp = session.query(dense)
                if resp[0] >= resp[1]:
                    if best_added is None or added.size < best_added.size:
                        best_added = added
                    break
        if best_added is None:
            return _failure(xv, "no benign noise vector found", session.query_count - q_start)

        survivors = set(int(i) for i in best_added)
        changed = True
        while changed:
            changed = False
            for f in sorted(survivors):
                trial = survivors - {f}
                dense = base.copy()
                dense[sorted(trial)] = 1.0
                resp = session.query(dense)
                if resp[0] >= resp[1]:
                    survivors = trial
                    changed = True
    except QueryBudgetExceeded:
        return _failure(xv, "query budget exceeded", session.query_count - q_start)

    if len(survivors) > max_flips:
        return _failure(
            xv,
            f"1-minimal set needs {len(survivors)} flips, budget is {max_flips}",
            session.query_count - q_start,
        )
    dense = base.copy()
    if survivors:
        dense[sorted(survivors)] = 1.0
    return _success(xv, dense, sorted(survivors), session.query_count - q_start)
