"""Personalised feedback control of compliance via token costs.

Each agent carries a fixed proclivity ``q_i``; the controller maintains one
global cost ``C`` and one individual cost ``c_i`` per agent, and the bond an
agent must stake is ``max(0, C + c_i)``.  The probability that an agent
complies next step is ``p(q_i + C + c_i)`` with ``p`` a monotone map into
[0, 1] (logistic by default).  Both costs are driven by integral control
laws on delayed measurements:

    C(k+1)   = C(k)   + alpha * (Q* - meanـcompliance(k - m))
    c_i(k+1) = c_i(k) + beta  * (Q* - windowed_avg_i(k - m))

where the windowed average of a bit sequence is the exponentially
discounted mean

    avg(k) = (1 - gamma) * sum_{j=1..k} gamma^(k-j) * M(j),     avg(0) = 0

maintained recursively as ``avg(k) = gamma*avg(k-1) + (1-gamma)*M(k)``.

Until ``m`` measurements exist the oldest available one is held (zero-order
hold), and a missing per-agent record freezes that agent's windowed average
for the step and is logged as a gap event.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .ledger import MamChannel, Tangle

_COST_MAGIC = b"CST1"
# full per-agent vector fits the 4 KiB transaction limit up to this size
_COST_VECTOR_LIMIT = 1000


# =============================================================================
# Monotone links
# =============================================================================

@dataclass(frozen=True)
class MonotoneLink:
    """A named monotone increasing map from the reals into [0, 1]."""
    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = self.fn(arr)
        return float(out[0]) if np.ndim(x) == 0 else out


def _stable_logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


LOGISTIC = MonotoneLink("logistic", _stable_logistic)


def scaled_logistic(scale: float, shift: float) -> MonotoneLink:
    """Logistic squashed/translated for calibration; scale must stay > 0."""
    if scale <= 0:
        raise ValueError("scale must be positive to keep the link monotone")
    return MonotoneLink(
        f"scaled_logistic(scale={scale},shift={shift})",
        lambda x: _stable_logistic((x - shift) / scale),
    )


def make_link(spec: Mapping | None) -> MonotoneLink:
    """Build a link from its config form, e.g. ``{"name": "logistic"}``."""
    if spec is None:
        return LOGISTIC
    name = spec.get("name", "logistic")
    if name == "logistic":
        return LOGISTIC
    if name == "scaled_logistic":
        return scaled_logistic(float(spec.get("scale", 1.0)),
                               float(spec.get("shift", 0.0)))
    raise ValueError(f"unknown link {name!r}")


# =============================================================================
# Control laws
# =============================================================================

def update_windowed_average(prev_avg: float, m: int, gamma: float) -> float:
    """One step of the discounted compliance average."""
    return gamma * prev_avg + (1.0 - gamma) * m


def update_global_cost(cost: float, mean_compliance: float, alpha: float,
                       q_star: float) -> float:
    """Integral update of the global cost from delayed mean compliance."""
    if not 0.0 <= mean_compliance <= 1.0:
        raise ValueError(f"mean compliance {mean_compliance} outside [0, 1]")
    return cost + alpha * (q_star - mean_compliance)


def update_individual_cost(cost: float, windowed_avg: float, beta: float,
                           q_star: float) -> float:
    """Integral update of one agent's cost from its delayed windowed average."""
    return cost + beta * (q_star - windowed_avg)


def compliance_probability(q: float, global_cost: float, individual_cost: float,
                           link: MonotoneLink = LOGISTIC):
    """Probability of compliance next step; the raw sum may be negative."""
    return link(q + global_cost + individual_cost)


def stake_amount(global_cost: float, individual_cost: float) -> float:
    """Tokens the agent must deposit: the cost sum clamped at zero.

    Only the deposit clamps; the unclamped sum still feeds the compliance
    probability so the control law is unaffected.
    """
    return max(0.0, global_cost + individual_cost)


# =============================================================================
# Controller state and stepper
# =============================================================================

@dataclass(frozen=True)
class ComplianceRecord:
    """One agent's mask bit for one step; at most one per (agent, step)."""
    agent_id: str
    step: int
    m: int


@dataclass
class ControllerParams:
    alpha: float = 0.25
    beta: float = 0.25
    gamma: float = 0.95    # discount window of (1-gamma)^-1 = 20 steps
    q_star: float = 0.9
    delay: int = 1
    link: MonotoneLink = LOGISTIC
    initial_global_cost: float = 0.0   # warm start; fresh deployments use 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.q_star <= 1.0:
            raise ValueError("q_star must lie in [0, 1]")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")


@dataclass
class StepResult:
    step: int
    stakes: dict[str, float]
    global_cost: float
    mean_individual_cost: float
    mean_compliance: float


class ComplianceController:
    """Single-threaded stepper applying the control laws over a ledger feed.

    Agents are registered up front; every agent has a cost and a windowed
    average from the start.  If a ledger channel is attached, each step's
    cost vector is published on it.
    """

    def __init__(self, params: ControllerParams, agent_ids: Iterable[str],
                 tangle: Tangle | None = None,
                 channel: MamChannel | None = None):
        self.params = params
        self.agents = list(agent_ids)
        if len(set(self.agents)) != len(self.agents):
            raise ValueError("duplicate agent ids")
        self._index = {a: i for i, a in enumerate(self.agents)}
        n = len(self.agents)
        self.global_cost = params.initial_global_cost
        self.individual_costs = np.zeros(n)
        self.windowed_avgs = np.zeros(n)
        depth = params.delay + 1
        self._mean_history: deque[float] = deque(maxlen=depth)
        self._avg_history: deque[np.ndarray] = deque(maxlen=depth)
        self.gap_events: list[tuple[int, str]] = []
        self._tangle = tangle
        self._channel = channel

    # -- views ------------------------------------------------------------

    def cost_of(self, agent_id: str) -> float:
        return float(self.individual_costs[self._index[agent_id]])

    def windowed_avg_of(self, agent_id: str) -> float:
        return float(self.windowed_avgs[self._index[agent_id]])

    def stakes(self) -> dict[str, float]:
        return {a: stake_amount(self.global_cost, float(self.individual_costs[i]))
                for a, i in self._index.items()}

    def probabilities(self, q: np.ndarray) -> np.ndarray:
        """Compliance probabilities for proclivities aligned to agent order."""
        return self.params.link(q + self.global_cost + self.individual_costs)

    # -- stepping ---------------------------------------------------------

    def _coerce_bits(self, records, step: int) -> tuple[np.ndarray, np.ndarray]:
        """Normalize records to (bits, present-mask) over the agent order."""
        n = len(self.agents)
        bits = np.zeros(n)
        present = np.zeros(n, dtype=bool)

        def put(agent_id, m):
            try:
                i = self._index[agent_id]
            except KeyError:
                raise KeyError(f"agent {agent_id!r} is not registered") from None
            bits[i] = float(m)
            present[i] = True

        if isinstance(records, Mapping):
            for agent_id, m in records.items():
                put(agent_id, m)
        elif isinstance(records, np.ndarray):
            if records.shape != (n,):
                raise ValueError(f"expected {n} bits, got shape {records.shape}")
            bits[:] = records
            present[:] = True
        else:
            for rec in records:
                put(rec.agent_id, rec.m)
        for i, got in enumerate(present):
            if not got:
                self.gap_events.append((step, self.agents[i]))
        return bits, present

    def step(self, step: int, records) -> StepResult:
        """Apply one control step with the compliance records of ``step``.

        ``records`` may be a dict ``agent_id -> bit``, an ndarray of bits in
        agent order, or an iterable of :class:`ComplianceRecord`.  Returns
        the stakes every agent must deposit for the next step.
        """
        p = self.params
        bits, present = self._coerce_bits(records, step)

        # windowed averages update before either cost; gaps hold their value
        self.windowed_avgs = np.where(
            present,
            p.gamma * self.windowed_avgs + (1.0 - p.gamma) * bits,
            self.windowed_avgs,
        )
        if present.any():
            mean_now = float(bits[present].mean())
        elif self._mean_history:
            mean_now = self._mean_history[-1]
        else:
            mean_now = p.q_star  # nothing measured yet: assume on-target
        self._mean_history.append(mean_now)
        self._avg_history.append(self.windowed_avgs.copy())

        # delayed measurements: index 0 is k-m once the buffer is full,
        # otherwise the oldest available value (zero-order hold)
        delayed_mean = self._mean_history[0]
        delayed_avgs = self._avg_history[0]

        self.global_cost = update_global_cost(
            self.global_cost, delayed_mean, p.alpha, p.q_star)
        self.individual_costs = (
            self.individual_costs + p.beta * (p.q_star - delayed_avgs))

        result = StepResult(
            step=step,
            stakes=self.stakes(),
            global_cost=self.global_cost,
            mean_individual_cost=float(self.individual_costs.mean()),
            mean_compliance=mean_now,
        )
        if self._channel is not None and self._tangle is not None:
            self._channel.publish(self._tangle,
                                  encode_cost_vector(step, self.global_cost,
                                                     self.individual_costs))
        return result


# =============================================================================
# Cost vector codec (controller channel payloads)
# =============================================================================

def encode_cost_vector(step: int, global_cost: float,
                       individual_costs: np.ndarray) -> bytes:
    """Binary cost record: full vector when it fits, summary otherwise."""
    n = len(individual_costs)
    if n <= _COST_VECTOR_LIMIT:
        return (_COST_MAGIC + struct.pack(">IdB", step, global_cost, 1)
                + struct.pack(">I", n)
                + np.asarray(individual_costs, dtype=">f4").tobytes())
    mean_c = float(np.mean(individual_costs)) if n else 0.0
    return (_COST_MAGIC + struct.pack(">IdB", step, global_cost, 0)
            + struct.pack(">d", mean_c))


def decode_cost_vector(payload: bytes) -> dict:
    if payload[:4] != _COST_MAGIC:
        raise ValueError("not a cost record")
    step, global_cost, full = struct.unpack(">IdB", payload[4:17])
    if full:
        (n,) = struct.unpack(">I", payload[17:21])
        costs = np.frombuffer(payload[21:21 + 4 * n], dtype=">f4").astype(float)
        return {"step": step, "C": global_cost, "c": costs,
                "mean_c": float(costs.mean()) if n else 0.0}
    (mean_c,) = struct.unpack(">d", payload[17:25])
    return {"step": step, "C": global_cost, "c": None, "mean_c": mean_c}


# =============================================================================
# Closed compliance loop (no epidemic, no escrow)
# =============================================================================

@dataclass
class ComplianceRun:
    mean_compliance: np.ndarray   # per step
    global_cost: np.ndarray       # per step, after the update
    mean_individual_cost: np.ndarray
    windowed_avgs: np.ndarray     # final per-agent values
    stakes: np.ndarray            # final per-agent stakes


def simulate_compliance(params: ControllerParams, q: np.ndarray, steps: int,
                        seed: int, tangle: Tangle | None = None,
                        channel: MamChannel | None = None) -> ComplianceRun:
    """Run the pure compliance loop: sample bits, feed them back, repeat.

    Each step every agent complies with probability ``p(q_i + C + c_i)``
    using the costs from the previous update; the sampled bits then drive
    the next update.  Deterministic per seed.
    """
    n = len(q)
    agents = [f"a{i}" for i in range(n)]
    ctrl = ComplianceController(params, agents, tangle=tangle, channel=channel)
    rng = np.random.default_rng(seed)
    mean_compliance = np.zeros(steps)
    global_cost = np.zeros(steps)
    mean_c = np.zeros(steps)
    for k in range(1, steps + 1):
        probs = ctrl.probabilities(q)
        bits = (rng.random(n) < probs).astype(float)
        res = ctrl.step(k, bits)
        mean_compliance[k - 1] = res.mean_compliance
        global_cost[k - 1] = res.global_cost
        mean_c[k - 1] = res.mean_individual_cost
    stakes = np.maximum(0.0, ctrl.global_cost + ctrl.individual_costs)
    return ComplianceRun(mean_compliance, global_cost, mean_c,
                         ctrl.windowed_avgs.copy(), stakes)
