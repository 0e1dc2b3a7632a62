"""Exact Shapley attribution over a small set of players."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..neuron import PROPERTIES

MAX_PLAYERS = 8


def coalition_key(coalition, players: Sequence[str] = PROPERTIES) -> int:
    """Bitmask of a coalition given as a bitmask, a mask of booleans, or player names."""
    if isinstance(coalition, (int, np.integer)):
        key = int(coalition)
    elif isinstance(coalition, str):
        raise TypeError("give a coalition as a set of names, not a single string")
    else:
        items = list(coalition)
        if len(items) == len(players) and all(isinstance(b, (bool, np.bool_)) for b in items):
            key = sum(1 << i for i, on in enumerate(items) if on)
        else:
            key = 0
            for name in items:
                if name not in players:
                    raise KeyError(f"unknown player {name!r}")
                key |= 1 << players.index(name)
    if not 0 <= key < 1 << len(players):
        raise ValueError(f"coalition {coalition!r} out of range")
    return key


def coalition_names(key: int, players: Sequence[str] = PROPERTIES) -> tuple[str, ...]:
    return tuple(p for i, p in enumerate(players) if key >> i & 1)


@dataclass
class ShapleyReport:
    players: tuple[str, ...]
    values: dict[str, float]
    table: dict[int, float]
    efficiency_residual: float
    value_std: dict[int, float] = field(default_factory=dict)

    @property
    def total_gain(self) -> float:
        return self.table[(1 << len(self.players)) - 1] - self.table[0]

    def normalized(self) -> dict[str, float]:
        """Values as fractions of the grand-coalition gain."""
        gain = self.total_gain
        return {p: (v / gain if gain else math.nan) for p, v in self.values.items()}

    def ranking(self) -> list[str]:
        return sorted(self.players, key=lambda p: -self.values[p])


def shapley_exact(
    coalition_values: Mapping,
    players: Sequence[str] = PROPERTIES,
    value_std: Mapping | None = None,
) -> ShapleyReport:
    """Average marginal contribution of each player over all join orders.

    ``coalition_values`` must contain every subset of ``players`` including the
    empty one. Optional standard deviations are carried through unchanged.
    """
    players = tuple(players)
    n = len(players)
    if n > MAX_PLAYERS:
        raise ValueError(f"exact enumeration supports at most {MAX_PLAYERS} players")
    table: dict[int, float] = {}
    for coalition, value in coalition_values.items():
        table[coalition_key(coalition, players)] = float(value)
    missing = [k for k in range(1 << n) if k not in table]
    if missing:
        names = coalition_names(missing[0], players)
        raise KeyError(f"missing coalition {{{', '.join(names)}}}")
    totals = np.zeros(n)
    orders = 0
    for order in itertools.permutations(range(n)):
        members = 0
        for p in order:
            totals[p] += table[members | 1 << p] - table[members]
            members |= 1 << p
        orders += 1
    phi = totals / orders
    residual = float(phi.sum() - (table[(1 << n) - 1] - table[0]))
    stds = {coalition_key(c, players): float(s) for c, s in (value_std or {}).items()}
    return ShapleyReport(players, dict(zip(players, phi.tolist())), table, residual, stds)
