"""Query-sparing evasion attack: one feature committed per annealing round.

Each restart walks outward from the original sample.  A round opens with a
fresh surrogate (GP over benign probability) and a reset temperature, then
repeatedly proposes single-feature additions to the current base vector.
Proposals are scored by the surrogate's negated upper confidence bound and
gated by a Metropolis rule: improvements always pass, regressions pass with
probability exp(-delta / T).  Only accepted proposals spend an oracle
query, which feeds the surrogate and is checked for a benign verdict; the
verdict ends the attack on the spot.  When the temperature floor or the
step cap ends a round, the accepted flip with the highest observed benign
probability is committed to the base vector and barred from further
modification, and the next round starts one feature deeper.  The cheapest
success across restarts wins.

Gradient-guided variants restrict proposals to features ranked by a
white-box signal (loss gradient, or accumulated movement of an iterative
minimal-perturbation walk in the dense relaxation); the ranked pool
shrinks geometrically as rounds progress.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    BadConfig,
    DimensionError,
    NoCandidates,
    NotMalicious,
    QueryBudgetExceeded,
)
from .features import BinaryFeatureVector, FeatureMask, Sample
from .gp import GpState, KernelParams, UcbParams, ucb_fitness
from .oracle import OracleSession

logger = logging.getLogger(__name__)

GUIDANCE_NONE = "none"
GUIDANCE_FGSM = "fgsm"
GUIDANCE_DEEPFOOL = "deepfool"

_DEEPFOOL_MAX_ITERS = 50


@dataclass(frozen=True)
class OfeiParams:
    max_flips: int = 20
    restarts: int = 10
    max_query_times: int = 200
    t_initial: float = 200.0
    droprate: float = 0.5
    t_min: float = 1e-3
    ucb: UcbParams = field(default_factory=UcbParams)
    kernel: KernelParams = field(default_factory=KernelParams)
    gp_window: int = 300
    guidance: str = GUIDANCE_NONE
    guidance_pool: int = 50
    guidance_shrink: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if self.max_flips < 0:
            raise BadConfig("max_flips must be non-negative")
        if self.restarts < 1:
            raise BadConfig("restarts must be at least 1")
        if self.max_query_times < 0:
            raise BadConfig("max_query_times must be non-negative")
        if self.t_initial <= 0 or self.t_min <= 0:
            raise BadConfig("temperatures must be positive")
        if not (0.0 < self.droprate <= 1.0):
            raise BadConfig("droprate must lie in (0, 1]")
        if self.guidance not in (GUIDANCE_NONE, GUIDANCE_FGSM, GUIDANCE_DEEPFOOL):
            raise BadConfig(f"unknown guidance {self.guidance!r}")
        if self.guidance_pool < 1 or not (0.0 < self.guidance_shrink <= 1.0):
            raise BadConfig("bad guidance pool parameters")


@dataclass(frozen=True)
class AttackResult:
    success: bool
    original: BinaryFeatureVector
    adversarial: BinaryFeatureVector
    flipped: tuple[int, ...]
    perturbations: int
    total_queries: int
    restart_index: int = -1
    failure_reason: Optional[str] = None


class AttackTrace:
    """Collects one record per inner annealing step; JSON lines on disk."""

    def __init__(self, context: Optional[dict] = None):
        self.context = dict(context or {})
        self.records: list[dict] = []

    def record(self, **fields) -> None:
        rec = dict(self.context)
        rec.update(fields)
        self.records.append(rec)

    def write(self, path, append: bool = False) -> None:
        mode = "a" if append else "w"
        with open(path, mode, encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_trace(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def metropolis_accept(delta: float, temperature: float, rng: np.random.Generator) -> bool:
    """Accept improvements outright, regressions with prob exp(-delta/T)."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if delta < 0.0:
        return True
    return math.exp(-delta / temperature) > rng.random()


def _vec_of(x) -> BinaryFeatureVector:
    if isinstance(x, Sample):
        return x.features
    if isinstance(x, BinaryFeatureVector):
        return x
    raise TypeError(f"expected Sample or BinaryFeatureVector, got {type(x)!r}")


def fgsm_candidates(x, session: OracleSession, mask: FeatureMask, pool: int = 50) -> list[int]:
    """Allowed zero features ranked by the one-step gradient signal.

    Uses the input gradient of the loss toward the benign class; only
    features whose increase lowers that loss qualify.  Returns at most
    `pool` indices, best first; empty when the gradient offers nothing.
    """
    xv = _vec_of(x)
    g = session.grad(xv, target_class=0)
    active = set(xv.active)
    cands = [i for i in sorted(mask.allowed) if i not in active and g[i] < 0.0]
    cands.sort(key=lambda i: g[i])  # most negative first
    return cands[:pool]


def deepfool_candidates(
    x, session: OracleSession, mask: FeatureMask, pool: int = 50
) -> list[int]:
    """Allowed zero features ranked by an iterative boundary walk.

    Repeatedly steps the dense relaxation by |g| / ||w||^2 * w, where w is
    the gradient of (p_benign - p_malicious) and g the logit gap, until the
    relaxed point classifies benign or the iteration cap is hit.  Features
    are ranked by the total positive increase they received.  Each step
    spends one oracle query for the class check.
    """
    xv = _vec_of(x)
    x0 = xv.to_dense()
    xd = x0.copy()
    converged = False
    for _ in range(_DEEPFOOL_MAX_ITERS):
        q = session.query(xd)
        if q[0] >= q[1]:
            converged = True
            break
        J = session.jacobian(xd)
        w = J[0] - J[1]
        wnorm2 = float(w @ w)
        if wnorm2 < 1e-18:
            break
        gap = float(np.log(max(q[0], 1e-300)) - np.log(max(q[1], 1e-300)))
        xd = np.clip(xd + (abs(gap) / wnorm2) * w, 0.0, 1.0)
    if not converged:
        logger.info("boundary walk did not converge; ranking by partial movement")
    increase = xd - x0
    active = set(xv.active)
    cands = [i for i in sorted(mask.allowed) if i not in active and increase[i] > 0.0]
    cands.sort(key=lambda i: -increase[i])
    return cands[:pool]


@dataclass
class _RestartOutcome:
    success: bool
    flips: list[int]
    final_score: float
    adv_dense: Optional[np.ndarray]
    index: int


def ofei_attack(
    x0,
    session: OracleSession,
    mask: FeatureMask,
    params: OfeiParams = OfeiParams(),
    trace: Optional[AttackTrace] = None,
) -> AttackResult:
    """Run the full multi-restart attack against one malicious sample.

    Raises NotMalicious when the oracle already calls x0 benign and
    NoCandidates when the mask leaves nothing to flip.  A spent query
    budget ends the attack as a flagged failure.
    """
    params.validate()
    xv = _vec_of(x0)
    m = session.input_dim
    if xv.m != m:
        raise DimensionError(f"sample m={xv.m}, model expects {m}")
    if mask.m != m:
        raise DimensionError(f"mask m={mask.m}, model expects {m}")

    eligible0 = np.zeros(m, dtype=bool)
    if mask.allowed:
        eligible0[sorted(mask.allowed)] = True
    if xv.active:
        eligible0[list(xv.active)] = False
    if not eligible0.any():
        raise NoCandidates("mask leaves no zero-valued feature to flip")

    if params.max_flips == 0:
        return AttackResult(
            success=False,
            original=xv,
            adversarial=xv,
            flipped=(),
            perturbations=0,
            total_queries=0,
            failure_reason="zero flip budget",
        )

    q_start = session.query_count
    q0 = session.query(xv)
    if q0[0] >= q0[1]:
        raise NotMalicious("oracle already classifies the sample as benign")

    prior_fit = -(params.ucb.sqrt_beta * math.sqrt(params.kernel.signal_var))
    seeds = np.random.SeedSequence(params.seed).spawn(params.restarts)
    outcomes: list[_RestartOutcome] = []
    budget_hit = False

    for r in range(params.restarts):
        rng = np.random.default_rng(seeds[r])
        base_dense = xv.to_dense()
        eligible = eligible0.copy()
        flips: list[int] = []
        pool_scale = float(params.guidance_pool)
        outcome = _RestartOutcome(False, flips, math.inf, None, r)

        try:
            while len(flips) < params.max_flips:
                pool = np.flatnonzero(eligible)
                if pool.size == 0:
                    break
                if params.guidance != GUIDANCE_NONE:
                    n_pool = max(5, int(round(pool_scale)))
                    ranked = (
                        fgsm_candidates(BinaryFeatureVector.from_dense(base_dense), session, mask, n_pool)
                        if params.guidance == GUIDANCE_FGSM
                        else deepfool_candidates(BinaryFeatureVector.from_dense(base_dense), session, mask, n_pool)
                    )
                    guided = np.array([i for i in ranked if eligible[i]], dtype=np.int64)
                    if guided.size:
                        pool = guided
                    else:
                        logger.info("guidance produced no candidates; using the full pool")

                gp = GpState(
                    kernel=params.kernel,
                    window=params.gp_window,
                    adapt_lengthscale=True,
                )
                round_no = len(flips)
                cur_fit = prior_fit
                # step 0 always accepts (delta 0), so Best is always set
                best_feat = -1
                best_score = math.inf
                temperature = params.t_initial
                benign_found = False

                for step in range(params.max_query_times):
                    cand = int(rng.choice(pool))
                    cand_dense = base_dense.copy()
                    cand_dense[cand] = 1.0
                    cand_fit = ucb_fitness(gp, cand_dense, params.ucb)
                    delta = cand_fit - cur_fit
                    accepted = metropolis_accept(delta, temperature, rng)
                    queried = False
                    if accepted:
                        q = session.query(cand_dense)
                        queried = True
                        gp.update(cand_dense, float(q[0]))
                        cur_fit = cand_fit
                        score = -float(q[0])
                        if score < best_score:
                            best_score = score
                            best_feat = cand
                        if q[0] >= q[1]:
                            flips.append(cand)
                            outcome.success = True
                            outcome.final_score = score
                            outcome.adv_dense = cand_dense
                            benign_found = True
                    if trace is not None:
                        trace.record(
                            restart=r,
                            round=round_no,
                            step=step,
                            feature=cand,
                            fitness=cand_fit,
                            delta_fitness=delta,
                            temperature=temperature,
                            accepted=accepted,
                            queried=queried,
                        )
                    if benign_found:
                        break
                    temperature *= params.droprate
                    if temperature < params.t_min:
                        break

                if benign_found:
                    break
                flips.append(best_feat)
                base_dense[best_feat] = 1.0
                eligible[best_feat] = False
                pool_scale = max(5.0, pool_scale * params.guidance_shrink)
        except QueryBudgetExceeded:
            budget_hit = True
            outcomes.append(outcome)
            break

        outcomes.append(outcome)

    total = session.query_count - q_start
    winners = [o for o in outcomes if o.success]
    if budget_hit and not winners:
        return AttackResult(
            success=False,
            original=xv,
            adversarial=xv,
            flipped=(),
            perturbations=0,
            total_queries=total,
            failure_reason="query budget exceeded",
        )
    if not winners:
        return AttackResult(
            success=False,
            original=xv,
            adversarial=xv,
            flipped=(),
            perturbations=0,
            total_queries=total,
            failure_reason="no adversarial found",
        )
    best = min(winners, key=lambda o: (len(o.flips), o.final_score, o.index))
    adv = BinaryFeatureVector.from_dense(best.adv_dense)
    return AttackResult(
        success=True,
        original=xv,
        adversarial=adv,
        flipped=tuple(best.flips),
        perturbations=len(best.flips),
        total_queries=total,
        restart_index=best.index,
    )


def with_guidance(params: OfeiParams, guidance: str) -> OfeiParams:
    return replace(params, guidance=guidance)
