"""Spectrum broker: posted-price orders, compatibility rules, pair matching
that maximizes the number of successful matches, and the record-keeping
ledger of executed trades.

Orders carry frequency, 3D-region, time-window, and market-epoch
attributes; matching is one bid to one ask with partial fills at the ask
price. SRUs are conserved exactly across any sequence of settlements.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

EPOCH_TAGS = ("rt", "near_rt", "non_rt")
SIDES = ("bid", "ask")


class MarketError(ValueError):
    """Raised for order, matching, or settlement contract violations."""


@dataclass(frozen=True)
class Region:
    """Axis-aligned 3D box in meters, one (low, high) pair per axis."""

    x: tuple[float, float]
    y: tuple[float, float]
    z: tuple[float, float]

    def __post_init__(self):
        for axis in (self.x, self.y, self.z):
            if axis[1] < axis[0]:
                raise MarketError(f"region extent is negative: {axis}")

    def contains(self, other: "Region") -> bool:
        return all(
            a[0] <= b[0] and b[1] <= a[1]
            for a, b in ((self.x, other.x), (self.y, other.y), (self.z, other.z))
        )

    def as_dict(self) -> dict:
        return {"x": list(self.x), "y": list(self.y), "z": list(self.z)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Region":
        return cls(tuple(data["x"]), tuple(data["y"]), tuple(data["z"]))


@dataclass(frozen=True)
class Order:
    order_id: str
    operator_id: str
    side: str  # "bid" buys, "ask" sells
    quantity: float  # SRUs
    price: float     # currency per SRU
    freq_range: tuple[float, float]  # Hz
    region: Region
    time_window: tuple[float, float]
    epoch_tag: str
    attrs: Mapping = field(default_factory=dict)  # power/interference etc., opaque

    def __post_init__(self):
        if self.side not in SIDES:
            raise MarketError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.quantity <= 0:
            raise MarketError("quantity must be positive")
        if self.price < 0:
            raise MarketError("price must be non-negative")
        if self.freq_range[0] >= self.freq_range[1]:
            raise MarketError(f"invalid frequency range {self.freq_range}")
        if self.time_window[0] > self.time_window[1]:
            raise MarketError(f"invalid time window {self.time_window}")
        if self.epoch_tag not in EPOCH_TAGS:
            raise MarketError(f"unknown epoch tag {self.epoch_tag!r}")
        object.__setattr__(self, "attrs", MappingProxyType(dict(self.attrs)))


@dataclass(frozen=True)
class Match:
    match_id: str
    bid_id: str
    ask_id: str
    quantity: float
    execution_price: float
    epoch_tag: str
    timestamp: float


def price_of(demand: float, c: float) -> float:
    """Posted price per SRU as a linear function of traffic demand: c * demand."""
    if demand < 0:
        raise MarketError("demand must be non-negative")
    return c * demand


def quote_for(target_side: str, counterparty_demand: float, own_demand: float,
              c: float, driver: str = "counterparty") -> float:
    """Quote for one side of a prospective trade.

    By default the counterparty's demand drives both the buy and the sell
    quote; ``driver="own"`` switches to the caller's demand instead.
    """
    if target_side not in SIDES:
        raise MarketError(f"side must be one of {SIDES}")
    if counterparty_demand < 0 or own_demand < 0:
        raise MarketError("demands must be non-negative")
    if driver == "counterparty":
        return price_of(counterparty_demand, c)
    if driver == "own":
        return price_of(own_demand, c)
    raise MarketError(f"unknown quote driver {driver!r}")


def _windows_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def _freq_contains(outer: tuple[float, float], inner: tuple[float, float]) -> bool:
    return outer[0] <= inner[0] and inner[1] <= outer[1]


def compatible(bid: Order, ask: Order) -> bool:
    """True iff the ask can serve the bid: acceptable price, the ask's
    frequency range and region contain the bid's, overlapping time windows,
    and the same market epoch."""
    if bid.side != "bid" or ask.side != "ask":
        raise MarketError("compatible() expects a bid and an ask, in that order")
    return (
        bid.price >= ask.price
        and _freq_contains(ask.freq_range, bid.freq_range)
        and ask.region.contains(bid.region)
        and _windows_overlap(bid.time_window, ask.time_window)
        and bid.epoch_tag == ask.epoch_tag
    )


def match_epoch(bids: Iterable[Order], asks: Iterable[Order],
                timestamp: float = 0.0) -> list[Match]:
    """Match bids to asks one-to-one, maximizing the number of matched pairs.

    Greedy price-time priority (higher bid price first, then earlier
    order id; each bid takes the cheapest compatible ask) seeds the
    assignment, and augmenting passes restore maximum cardinality when the
    greedy choice blocks another bid. Partial fills trade
    min(bid, ask) quantity at the ask price. Deterministic for a given
    order set.
    """
    bids = list(bids)
    asks = list(asks)
    epochs = {o.epoch_tag for o in bids} | {o.epoch_tag for o in asks}
    if len(epochs) > 1:
        raise MarketError(f"orders span multiple epochs: {sorted(epochs)}")

    bid_order = sorted(bids, key=lambda o: (-o.price, o.order_id))
    ask_order = sorted(asks, key=lambda o: (o.price, o.order_id))
    adjacency = [
        [j for j, ask in enumerate(ask_order) if compatible(bid, ask)]
        for bid in bid_order
    ]

    ask_owner: dict[int, int] = {}  # ask index -> bid index

    def assign(i: int, visited: set[int]) -> bool:
        for j in adjacency[i]:
            if j in visited:
                continue
            visited.add(j)
            if j not in ask_owner or assign(ask_owner[j], visited):
                ask_owner[j] = i
                return True
        return False

    for i in range(len(bid_order)):
        assign(i, set())

    bid_for_ask = {i: j for j, i in ask_owner.items()}
    matches = []
    for i, bid in enumerate(bid_order):
        if i not in bid_for_ask:
            continue
        ask = ask_order[bid_for_ask[i]]
        matches.append(Match(
            match_id=f"m-{bid.order_id}-{ask.order_id}",
            bid_id=bid.order_id,
            ask_id=ask.order_id,
            quantity=float(min(bid.quantity, ask.quantity)),
            execution_price=float(ask.price),
            epoch_tag=bid.epoch_tag,
            timestamp=timestamp,
        ))
    return matches


@dataclass(frozen=True)
class LedgerEntry:
    match: Match
    bid_operator: str
    ask_operator: str
    transaction_cost: float   # charged to the initiator
    initiator: str | None


class Ledger:
    """Append-only trade record plus per-operator SRU holdings and balances.

    Replaying the recorded entries from the initial holdings reproduces the
    final holdings and balances exactly.
    """

    def __init__(self, holdings: Mapping[str, float],
                 balances: Mapping[str, float] | None = None):
        if any(v < 0 for v in holdings.values()):
            raise MarketError("initial holdings must be non-negative")
        self.holdings: dict[str, float] = dict(holdings)
        self.balances: dict[str, float] = dict(balances or {})
        for op in self.holdings:
            self.balances.setdefault(op, 0.0)
        self._initial_holdings = dict(self.holdings)
        self._initial_balances = dict(self.balances)
        self.entries: list[LedgerEntry] = []

    def total_srus(self) -> float:
        return sum(self.holdings.values())

    def settle(self, matches: Iterable[Match], orders: Mapping[str, Order],
               transaction_cost: float = 0.0,
               initiator: str | None = None) -> None:
        """Move SRUs ask->bid and currency bid->ask for every match.

        The whole batch is validated against seller holdings before any
        state changes, so a rejected match leaves the ledger untouched.
        The flat transaction cost is debited from the initiating operator
        (once per match) when one is named.
        """
        matches = list(matches)
        resolved = []
        scratch = dict(self.holdings)
        for m in matches:
            if m.bid_id not in orders or m.ask_id not in orders:
                raise MarketError(f"match {m.match_id} references unknown orders")
            bid_op = orders[m.bid_id].operator_id
            ask_op = orders[m.ask_id].operator_id
            scratch.setdefault(ask_op, 0.0)
            scratch.setdefault(bid_op, 0.0)
            if scratch[ask_op] < m.quantity:
                raise MarketError(
                    f"match {m.match_id}: seller {ask_op} holds "
                    f"{scratch[ask_op]} < {m.quantity} SRUs")
            scratch[ask_op] -= m.quantity
            scratch[bid_op] += m.quantity
            resolved.append((m, bid_op, ask_op))

        for m, bid_op, ask_op in resolved:
            self.holdings.setdefault(ask_op, 0.0)
            self.holdings.setdefault(bid_op, 0.0)
            self.balances.setdefault(ask_op, 0.0)
            self.balances.setdefault(bid_op, 0.0)
            self.holdings[ask_op] -= m.quantity
            self.holdings[bid_op] += m.quantity
            payment = m.quantity * m.execution_price
            self.balances[bid_op] -= payment
            self.balances[ask_op] += payment
            cost = transaction_cost if initiator is not None else 0.0
            if cost:
                self.balances.setdefault(initiator, 0.0)
                self.balances[initiator] -= cost
            self.entries.append(LedgerEntry(
                match=m, bid_operator=bid_op, ask_operator=ask_op,
                transaction_cost=cost, initiator=initiator))

    def replay(self) -> tuple[dict[str, float], dict[str, float]]:
        """Recompute holdings and balances from the initial state and the
        recorded entries; used to audit append-only integrity."""
        holdings = dict(self._initial_holdings)
        balances = dict(self._initial_balances)
        for e in self.entries:
            holdings.setdefault(e.ask_operator, 0.0)
            holdings.setdefault(e.bid_operator, 0.0)
            balances.setdefault(e.ask_operator, 0.0)
            balances.setdefault(e.bid_operator, 0.0)
            holdings[e.ask_operator] -= e.match.quantity
            holdings[e.bid_operator] += e.match.quantity
            payment = e.match.quantity * e.match.execution_price
            balances[e.bid_operator] -= payment
            balances[e.ask_operator] += payment
            if e.transaction_cost:
                balances.setdefault(e.initiator, 0.0)
                balances[e.initiator] -= e.transaction_cost
        return holdings, balances

    def export_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["match_id", "epoch", "bid_op", "ask_op", "qty", "price", "timestamp"])
            for e in self.entries:
                m = e.match
                writer.writerow([
                    m.match_id, m.epoch_tag, e.bid_operator, e.ask_operator,
                    repr(float(m.quantity)), repr(float(m.execution_price)),
                    repr(float(m.timestamp)),
                ])


def orders_to_json(orders: Iterable[Order], path: str | Path) -> None:
    """Write orders as a JSON array with the documented field names."""
    payload = []
    for o in orders:
        payload.append({
            "order_id": o.order_id,
            "operator_id": o.operator_id,
            "side": o.side,
            "quantity": o.quantity,
            "price": o.price,
            "freq_range": list(o.freq_range),
            "region": o.region.as_dict(),
            "time_window": list(o.time_window),
            "epoch_tag": o.epoch_tag,
            "attrs": dict(o.attrs),
        })
    with Path(path).open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def orders_from_json(path: str | Path) -> list[Order]:
    with Path(path).open() as fh:
        payload = json.load(fh)
    return [
        Order(
            order_id=item["order_id"],
            operator_id=item["operator_id"],
            side=item["side"],
            quantity=item["quantity"],
            price=item["price"],
            freq_range=tuple(item["freq_range"]),
            region=Region.from_dict(item["region"]),
            time_window=tuple(item["time_window"]),
            epoch_tag=item["epoch_tag"],
            attrs=item.get("attrs", {}),
        )
        for item in payload
    ]
