"""TTL estimators: the policies a simulation can attach.

An estimator answers decide() on every cache miss and may react to
invalidation issues, DEI due events and train ticks. The Poisson baseline
treats result-key writes as independent Poisson processes and bets on the
minimum expected gap; the NAF estimators learn the TTL online, differing only
in when unfinished transitions are completed.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dei import DeiQueue, IncompleteTransition, RewardConfig, transition_reward
from .nafagent import NafAgent, NafConfig, Transition, build_state

DEFAULT_TTL_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 60.0, 120.0, 300.0, 600.0)


def poisson_ttl(result_keys, telemetry, now: float, max_ttl: float = 300.0) -> float:
    """TTL = 1 / sum of result-key write rates, capped at max_ttl.

    The first invalidating write is the minimum over per-key exponential
    waits, itself exponential with the summed rate. Keys with no observed
    writes contribute the default rate 1/max_ttl, aggregated as one division
    so an all-unknown result stays exact (k unknowns -> max_ttl / k).
    """
    if max_ttl <= 0.0:
        raise ValueError("max_ttl must be positive")
    if len(result_keys) == 0:
        raise ValueError("poisson_ttl needs a non-empty result key set")
    known = 0.0
    unknown = 0
    for k in result_keys:
        r = telemetry.write_rate(int(k), now)
        if r is None:
            unknown += 1
        else:
            known += r
    if known == 0.0:
        return max_ttl / unknown
    lam = known + unknown / max_ttl
    return min(max_ttl, 1.0 / lam)


def best_default_ttl(true_ttls, candidates=DEFAULT_TTL_GRID) -> tuple[float, float]:
    """Hindsight-best constant TTL over a grid, scored by truncated RMSE."""
    from .benchcli import truncated_rmse  # local import, benchcli owns the metric

    if len(true_ttls) == 0:
        raise ValueError("no resolved true TTLs to score against")
    best_c, best_err = None, np.inf
    for c in candidates:
        err = truncated_rmse([c - t for t in true_ttls])
        if err < best_err:
            best_c, best_err = c, err
    return float(best_c), float(best_err)


class TtlEstimator:
    """Base: a policy bound to one simulation."""

    kind = "base"

    def attach(self, sim) -> None:
        self.sim = sim

    def decide(self, serve_id: int, unit: int, result_keys, now: float) -> float:
        raise NotImplementedError

    def on_invalidation_issued(self, serve_id: int, unit: int, now: float) -> None:
        pass

    def on_due(self, serve_id: int, now: float) -> None:
        pass

    def on_train(self, now: float) -> None:
        pass


class FixedEstimator(TtlEstimator):
    kind = "fixed"

    def __init__(self, ttl: float):
        if ttl <= 0.0:
            raise ValueError("fixed ttl must be positive")
        self.ttl = float(ttl)

    def decide(self, serve_id, unit, result_keys, now):
        return self.ttl


class PoissonEstimator(TtlEstimator):
    kind = "poisson"

    def __init__(self, max_ttl: float = 300.0):
        if max_ttl <= 0.0:
            raise ValueError("max_ttl must be positive")
        self.max_ttl = max_ttl

    def decide(self, serve_id, unit, result_keys, now):
        if len(result_keys) == 0:
            # An empty result carries no rate information; fall back to the cap.
            return self.max_ttl
        return poisson_ttl(result_keys, self.sim.telemetry, now, self.max_ttl)


class InjectionRow(NamedTuple):
    serve_id: int
    unit: int
    decided_at: float
    due_at: float
    action: float
    reward: float


class _NafEstimator(TtlEstimator):
    """Shared plumbing for the learning estimators."""

    def __init__(
        self,
        naf_cfg: NafConfig,
        reward_cfg: RewardConfig,
        rng: np.random.Generator,
        log_transitions: bool = False,
    ):
        reward_cfg.validate()
        self.agent = NafAgent(naf_cfg, rng)
        self.reward_cfg = reward_cfg
        self.injection_log: list[InjectionRow] | None = [] if log_transitions else None
        self.train_log: list[tuple[float, list[int], float]] | None = None

    def _state(self, result_keys, unit: int, now: float) -> np.ndarray:
        return build_state(result_keys, self.sim.telemetry, unit, now, self.agent.cfg.rate_inputs)

    def _inject(self, it: IncompleteTransition, reward: float, s_next: np.ndarray, now: float) -> None:
        self.agent.remember(Transition(it.s, it.a, reward, s_next, it.serve_id, it.unit))
        if self.injection_log is not None:
            self.injection_log.append(
                InjectionRow(it.serve_id, it.unit, it.decided_at, now, it.a, reward)
            )
        self.sim.engine.schedule(now, "train", ())

    def on_train(self, now: float) -> None:
        res = self.agent.train_step()
        if res is not None and self.train_log is not None:
            loss, batch = res
            self.train_log.append((now, [t.serve_id for t in batch], loss))


class NafDeiEstimator(_NafEstimator):
    """NAF with delayed experience injection: each transition completes at
    decided_at + action, scored against the invalidation stamp (if any issued
    meanwhile) or the cache load at that moment."""

    kind = "naf-dei"

    def __init__(self, naf_cfg, reward_cfg, rng, log_transitions=False):
        super().__init__(naf_cfg, reward_cfg, rng, log_transitions)
        self.queue = DeiQueue()

    def decide(self, serve_id, unit, result_keys, now):
        s = self._state(result_keys, unit, now)
        a = self.agent.act(s)
        self.queue.enqueue(
            IncompleteTransition(serve_id, unit, s, a, decided_at=now, due_at=now + a,
                                 result_keys=result_keys)
        )
        self.sim.engine.schedule(now + a, "dei", (serve_id,))
        return a

    def on_invalidation_issued(self, serve_id, unit, now):
        self.queue.stamp_invalidation(serve_id, now)

    def on_due(self, serve_id, now):
        it = self.queue.pop_due(serve_id)
        load = self.sim.cache.current_load(now)
        r = transition_reward(it.inval_at, it.due_at, load, self.reward_cfg)
        s_next = self._state(it.result_keys, it.unit, now)
        self._inject(it, r, s_next, now)


class NafNaiveEstimator(_NafEstimator):
    """Ablation without DEI: rewards are computed instantly at decision time,
    so the only finished episode to score is the unit's previous one. The new
    (s, a) is injected immediately with that stale reward and s_next = s; the
    misattribution is the point."""

    kind = "naf-naive"

    def __init__(self, naf_cfg, reward_cfg, rng, log_transitions=False):
        super().__init__(naf_cfg, reward_cfg, rng, log_transitions)
        self._last_episode: dict[int, IncompleteTransition] = {}
        self._by_serve: dict[int, IncompleteTransition] = {}

    def decide(self, serve_id, unit, result_keys, now):
        s = self._state(result_keys, unit, now)
        a = self.agent.act(s)
        it = IncompleteTransition(serve_id, unit, s, a, decided_at=now, due_at=now + a,
                                  result_keys=result_keys)
        prev = self._last_episode.get(unit)
        if prev is not None:
            load = self.sim.cache.current_load(now)
            r = transition_reward(prev.inval_at, prev.due_at, load, self.reward_cfg)
            del self._by_serve[prev.serve_id]
            self._inject(it, r, s, now)
        self._last_episode[unit] = it
        self._by_serve[serve_id] = it
        return a

    def on_invalidation_issued(self, serve_id, unit, now):
        it = self._by_serve.get(serve_id)
        if it is not None and it.inval_at is None:
            it.inval_at = now


def make_estimator(
    kind: str,
    naf_cfg: NafConfig | None = None,
    reward_cfg: RewardConfig | None = None,
    rng: np.random.Generator | None = None,
    fixed_ttl: float = 60.0,
    poisson_max_ttl: float = 300.0,
    log_transitions: bool = False,
) -> TtlEstimator:
    if kind == "fixed":
        return FixedEstimator(fixed_ttl)
    if kind == "poisson":
        return PoissonEstimator(poisson_max_ttl)
    if kind in ("naf-dei", "naf-naive"):
        if rng is None:
            raise ValueError(f"{kind} needs an RNG")
        cls = NafDeiEstimator if kind == "naf-dei" else NafNaiveEstimator
        return cls(naf_cfg or NafConfig(), reward_cfg or RewardConfig(), rng, log_transitions)
    raise ValueError(f"unknown estimator kind {kind!r}")
