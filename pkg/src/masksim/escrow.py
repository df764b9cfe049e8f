"""Token wallets and bond policies as an explicit, conservation-checked
state machine.

All amounts are held internally as integer micro-tokens (1e-6 token units);
floats coming from the controller are rounded half-even at deposit time.
That makes the conservation invariant exact:

    sum(wallets) + sum(active bonds) + forfeited pool == initial total

at every step, under every policy, for every compliance sequence.

Policies:

* ``FIXED_PENALTY``        one bond per stay; full refund on exit iff the
                           whole history was compliant, else nothing back.
* ``ADAPTIVE``             the bond is reissued every step: compliant agents
                           get the stake back and stake the next amount,
                           non-compliant agents forfeit the stake.
* ``ADAPTIVE_WITH_RETURN`` adaptive, plus a compliant step after earlier
                           forfeitures claws back ``rho`` of the cumulative
                           forfeited total (geometric drawdown).
* ``EVENT_DRIVEN``         the bond persists while compliant; a violation
                           forfeits it and staying in the scheme requires a
                           fresh deposit at the current controller price.

A deposit the wallet cannot cover is never an error: it is recorded as an
exclusion event (the agent is barred for the step) and state is unchanged.
Every executed transfer is appended to the ledger channel when one is
attached, so replaying the channel reconstructs all balances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum

from .ledger import MamChannel, Tangle

MICRO_PER_TOKEN = 10**6

_RECORD_VERSION = 1


class EscrowFault(Exception):
    """Bond state machine misuse (settling a non-active bond, ...)."""


def to_micro(tokens: float) -> int:
    """Round a token amount to integer micro-tokens, ties to even."""
    if tokens < 0:
        raise ValueError("token amounts are non-negative")
    return int(Decimal(tokens).scaleb(6).quantize(Decimal(1),
                                                  rounding=ROUND_HALF_EVEN))


def micro_to_str(micro: int) -> str:
    """Exact decimal rendering of a micro-token amount."""
    sign = "-" if micro < 0 else ""
    micro = abs(micro)
    return f"{sign}{micro // MICRO_PER_TOKEN}.{micro % MICRO_PER_TOKEN:06d}"


class PenaltyPolicy(Enum):
    FIXED_PENALTY = "fixed_penalty"
    ADAPTIVE = "adaptive"
    ADAPTIVE_WITH_RETURN = "adaptive_with_return"
    EVENT_DRIVEN = "event_driven"


class BondState(Enum):
    ACTIVE = "active"
    REFUNDED = "refunded"
    FORFEITED = "forfeited"


@dataclass
class Wallet:
    agent_id: str
    balance_micro: int

    @property
    def balance(self) -> float:
        return self.balance_micro / MICRO_PER_TOKEN


@dataclass
class Bond:
    """One agent's escrow slot; re-deposits reactivate the same slot."""
    agent_id: str
    policy: PenaltyPolicy
    amount_micro: int = 0
    state: BondState = BondState.REFUNDED
    forfeited_micro: int = 0   # cumulative, drawn down by partial returns


@dataclass(frozen=True)
class Transfer:
    step: int
    agent_id: str
    kind: str            # deposit | refund | forfeit | partial_return
    amount_micro: int


@dataclass(frozen=True)
class ExclusionEvent:
    step: int
    agent_id: str
    required_micro: int
    available_micro: int


class EscrowBank:
    """All wallets and bonds of one run, plus the forfeited pool.

    Settlements for one step are plain sequential calls; the bank is not
    itself thread-safe and is driven by the single-threaded runner.
    """

    def __init__(self, initial_balances: dict[str, float],
                 policy: PenaltyPolicy, rho: float = 0.5,
                 tangle: Tangle | None = None,
                 channel: MamChannel | None = None):
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        self.policy = policy
        self.rho = rho
        self.wallets = {a: Wallet(a, to_micro(b))
                        for a, b in initial_balances.items()}
        self.bonds = {a: Bond(a, policy) for a in self.wallets}
        self.forfeited_pool_micro = 0
        self.transfers: list[Transfer] = []
        self.exclusions: list[ExclusionEvent] = []
        self.initial_total_micro = sum(w.balance_micro
                                       for w in self.wallets.values())
        self._tangle = tangle
        self._channel = channel
        for agent, wallet in self.wallets.items():
            self._publish({"v": _RECORD_VERSION, "kind": "init", "agent": agent,
                           "step": 0, "amount": wallet.balance_micro})

    # -- ledger mirroring -------------------------------------------------

    def _publish(self, record: dict) -> None:
        if self._channel is not None and self._tangle is not None:
            payload = json.dumps(record, separators=(",", ":"),
                                 sort_keys=True).encode("utf-8")
            self._channel.publish(self._tangle, payload)

    def _record(self, step: int, agent: str, kind: str, amount_micro: int) -> None:
        self.transfers.append(Transfer(step, agent, kind, amount_micro))
        self._publish({"v": _RECORD_VERSION, "kind": kind, "agent": agent,
                       "step": step, "amount": amount_micro})

    # -- operations ---------------------------------------------------------

    def deposit(self, agent_id: str, amount_tokens: float, step: int) -> bool:
        """Stake a bond; returns False (and logs an exclusion) if the wallet
        cannot cover it."""
        wallet = self.wallets[agent_id]
        bond = self.bonds[agent_id]
        if bond.state is BondState.ACTIVE:
            raise EscrowFault(f"agent {agent_id} already has an active bond")
        amount = to_micro(amount_tokens)
        if wallet.balance_micro < amount:
            self.exclusions.append(
                ExclusionEvent(step, agent_id, amount, wallet.balance_micro))
            return False
        wallet.balance_micro -= amount
        bond.amount_micro = amount
        bond.state = BondState.ACTIVE
        self._record(step, agent_id, "deposit", amount)
        return True

    def settle_step(self, agent_id: str, m: int, next_stake_tokens: float,
                    step: int) -> bool:
        """Adaptive-policy settlement: refund or forfeit, then re-stake.

        Returns whether the re-stake succeeded (False means the agent is
        excluded from the next step).
        """
        if self.policy not in (PenaltyPolicy.ADAPTIVE,
                               PenaltyPolicy.ADAPTIVE_WITH_RETURN):
            raise EscrowFault(f"settle_step does not apply to {self.policy.value}")
        bond = self._active_bond(agent_id)
        wallet = self.wallets[agent_id]
        if m:
            wallet.balance_micro += bond.amount_micro
            bond.state = BondState.REFUNDED
            self._record(step, agent_id, "refund", bond.amount_micro)
            if (self.policy is PenaltyPolicy.ADAPTIVE_WITH_RETURN
                    and bond.forfeited_micro > 0):
                returned = int((Decimal(str(self.rho)) * bond.forfeited_micro)
                               .quantize(Decimal(1), rounding=ROUND_HALF_EVEN))
                if returned > 0:
                    self.forfeited_pool_micro -= returned
                    bond.forfeited_micro -= returned
                    wallet.balance_micro += returned
                    self._record(step, agent_id, "partial_return", returned)
        else:
            self.forfeited_pool_micro += bond.amount_micro
            bond.forfeited_micro += bond.amount_micro
            bond.state = BondState.FORFEITED
            self._record(step, agent_id, "forfeit", bond.amount_micro)
        return self.deposit(agent_id, next_stake_tokens, step)

    def settle_event(self, agent_id: str, m: int, required_tokens: float,
                     step: int) -> bool:
        """Event-driven settlement: a violation costs the bond and staying
        in the scheme needs a fresh deposit at the current price."""
        if self.policy is not PenaltyPolicy.EVENT_DRIVEN:
            raise EscrowFault(f"settle_event does not apply to {self.policy.value}")
        bond = self._active_bond(agent_id)
        if m:
            return True
        self.forfeited_pool_micro += bond.amount_micro
        bond.forfeited_micro += bond.amount_micro
        bond.state = BondState.FORFEITED
        self._record(step, agent_id, "forfeit", bond.amount_micro)
        return self.deposit(agent_id, required_tokens, step)

    def settle_exit(self, agent_id: str, fully_compliant: bool, step: int) -> None:
        """Fixed-penalty settlement at exit: all back or nothing back."""
        if self.policy is not PenaltyPolicy.FIXED_PENALTY:
            raise EscrowFault(f"settle_exit does not apply to {self.policy.value}")
        bond = self._active_bond(agent_id)
        if fully_compliant:
            self.wallets[agent_id].balance_micro += bond.amount_micro
            bond.state = BondState.REFUNDED
            self._record(step, agent_id, "refund", bond.amount_micro)
        else:
            self.forfeited_pool_micro += bond.amount_micro
            bond.forfeited_micro += bond.amount_micro
            bond.state = BondState.FORFEITED
            self._record(step, agent_id, "forfeit", bond.amount_micro)

    def _active_bond(self, agent_id: str) -> Bond:
        bond = self.bonds[agent_id]
        if bond.state is not BondState.ACTIVE:
            raise EscrowFault(
                f"bond of {agent_id} is {bond.state.value}, not active")
        return bond

    # -- invariants and reporting ------------------------------------------

    def total_micro(self) -> int:
        active = sum(b.amount_micro for b in self.bonds.values()
                     if b.state is BondState.ACTIVE)
        wallets = sum(w.balance_micro for w in self.wallets.values())
        return wallets + active + self.forfeited_pool_micro

    def conservation_ok(self) -> bool:
        return self.total_micro() == self.initial_total_micro

    def totals_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for t in self.transfers:
            out[t.kind] = out.get(t.kind, 0) + t.amount_micro
        return out

    def write_transfer_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("step,agent,kind,amount\n")
            for t in self.transfers:
                fh.write(f"{t.step},{t.agent_id},{t.kind},"
                         f"{micro_to_str(t.amount_micro)}\n")


# =============================================================================
# Ledger replay (audit)
# =============================================================================

@dataclass
class ReplayedState:
    wallets: dict[str, int] = field(default_factory=dict)
    active_bonds: dict[str, int] = field(default_factory=dict)
    forfeited_pool: int = 0

    def total(self) -> int:
        return (sum(self.wallets.values()) + sum(self.active_bonds.values())
                + self.forfeited_pool)


def replay_records(payloads: list[bytes]) -> ReplayedState:
    """Rebuild balances from raw escrow channel payloads, in order."""
    state = ReplayedState()
    for payload in payloads:
        rec = json.loads(payload.decode("utf-8"))
        if rec.get("v") != _RECORD_VERSION:
            raise ValueError(f"unknown escrow record version: {rec!r}")
        agent, kind, amount = rec["agent"], rec["kind"], int(rec["amount"])
        if kind == "init":
            state.wallets[agent] = state.wallets.get(agent, 0) + amount
        elif kind == "deposit":
            state.wallets[agent] -= amount
            state.active_bonds[agent] = amount
        elif kind == "refund":
            state.wallets[agent] += amount
            state.active_bonds.pop(agent, None)
        elif kind == "forfeit":
            state.forfeited_pool += amount
            state.active_bonds.pop(agent, None)
        elif kind == "partial_return":
            state.forfeited_pool -= amount
            state.wallets[agent] += amount
        else:
            raise ValueError(f"unknown escrow record kind {kind!r}")
    return state
