"""Player measures on the cake [0, 1] and the two Robertson-Webb queries.

A player's measure is a piecewise-constant density. Protocol code only sees a
:class:`MeasureOracle`, which answers ``eval`` and ``cut`` queries and logs
every distinct query in a shared :class:`QueryLedger`. Auditors integrate the
density directly through :meth:`PiecewiseConstantMeasure.mass` and friends,
which never touch a ledger.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InsufficientMass

MASS_TOL = 1e-12
LOAD_TOL = 1e-9


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (0.0 <= lo <= hi <= 1.0):
            raise DomainError(f"invalid interval [{self.lo}, {self.hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo


class PieceSet:
    """A finite union of closed intervals, kept sorted and merged.

    Stored as two float arrays so that allocations with many thousands of
    intervals stay cheap; :attr:`intervals` materializes :class:`Interval`
    objects on demand.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, intervals: Iterable[Interval | tuple[float, float]] = ()):
        pairs = [(iv.lo, iv.hi) if isinstance(iv, Interval) else tuple(iv) for iv in intervals]
        if pairs:
            arr = np.asarray(pairs, dtype=float)
            lo, hi = arr[:, 0], arr[:, 1]
        else:
            lo = hi = np.empty(0)
        self.lo, self.hi = _normalize(lo, hi)

    @classmethod
    def from_arrays(cls, lo, hi) -> "PieceSet":
        obj = cls.__new__(cls)
        obj.lo, obj.hi = _normalize(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        return obj

    @classmethod
    def union(cls, sets: Iterable["PieceSet"]) -> "PieceSet":
        sets = list(sets)
        if not sets:
            return cls()
        return cls.from_arrays(np.concatenate([s.lo for s in sets]),
                               np.concatenate([s.hi for s in sets]))

    @property
    def intervals(self) -> list[Interval]:
        return [Interval(a, b) for a, b in zip(self.lo.tolist(), self.hi.tolist())]

    @property
    def length(self) -> float:
        return float(np.sum(self.hi - self.lo))

    def __len__(self):
        return len(self.lo)

    def __eq__(self, other):
        if not isinstance(other, PieceSet):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self):
        body = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(self.lo[:4], self.hi[:4]))
        more = f", ... ({len(self)} total)" if len(self) > 4 else ""
        return f"PieceSet({body}{more})"

    def to_list(self) -> list[list[float]]:
        return [[a, b] for a, b in zip(self.lo.tolist(), self.hi.tolist())]


def _normalize(lo: np.ndarray, hi: np.ndarray):
    if lo.shape != hi.shape:
        raise DomainError("lo/hi arrays differ in shape")
    if lo.size == 0:
        return np.empty(0), np.empty(0)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise DomainError("non-finite interval endpoint")
    if np.any(lo < 0) or np.any(hi > 1) or np.any(lo > hi):
        raise DomainError("interval outside [0, 1] or reversed")
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    if lo.size > 1 and np.any(hi[:-1] > lo[1:]):
        raise DomainError("intervals overlap")
    # start a new run wherever the previous interval does not touch this one
    starts = np.ones(lo.size, dtype=bool)
    starts[1:] = hi[:-1] != lo[1:]
    first = np.flatnonzero(starts)
    last = np.append(first[1:] - 1, lo.size - 1)
    return lo[first].copy(), hi[last].copy()


class PiecewiseConstantMeasure:
    """Absolutely continuous probability measure with a step density."""

    def __init__(self, breakpoints: Sequence[float], densities: Sequence[float], *,
                 renormalize: bool = False, tol: float = MASS_TOL):
        b = np.asarray(breakpoints, dtype=float)
        d = np.asarray(densities, dtype=float)
        if b.ndim != 1 or d.ndim != 1 or b.size != d.size + 1 or d.size == 0:
            raise DomainError("need B+1 breakpoints for B densities")
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise DomainError("breakpoints must increase strictly from 0 to 1")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise DomainError("densities must be finite and non-negative")
        cells = d * np.diff(b)
        total = float(math.fsum(cells))
        if total <= 0 or (not renormalize and abs(total - 1.0) > tol):
            raise DomainError(f"total mass {total!r} is not 1")
        if abs(total - 1.0) > tol:
            d = d / total
            cells = cells / total
        prefix = np.concatenate(([0.0], np.cumsum(cells)))
        prefix /= prefix[-1]
        prefix[-1] = 1.0
        self.breakpoints = b
        self.densities = d
        self.prefix_masses = np.maximum.accumulate(prefix)

    @property
    def n_cells(self) -> int:
        return self.densities.size

    # -- direct (non-query) access, for auditors and the oracle internals --

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        b, d, p = self.breakpoints, self.densities, self.prefix_masses
        idx = np.clip(np.searchsorted(b, x, side="right") - 1, 0, d.size - 1)
        val = p[idx] + d[idx] * (x - b[idx])
        val = np.where(x >= 1.0, 1.0, np.where(x <= 0.0, 0.0, val))
        return np.minimum(val, p[idx + 1])

    def mass(self, x, y):
        """mu([x, y]); vectorized over x and y. Not a query."""
        return np.maximum(self.cdf(y) - self.cdf(x), 0.0)

    def mass_of(self, pieces: PieceSet) -> float:
        if len(pieces) == 0:
            return 0.0
        return float(math.fsum(self.mass(pieces.lo, pieces.hi)))

    def inverse(self, x: float, amounts):
        """Leftmost y >= x with mu([x, y]) = a, for each a. Not a query."""
        a = np.asarray(amounts, dtype=float)
        b, d, p = self.breakpoints, self.densities, self.prefix_masses
        c = int(np.clip(np.searchsorted(b, x, side="right") - 1, 0, d.size - 1))
        px = float(self.cdf(x))
        target = np.minimum(px + a, 1.0)
        # zero-density cells left of x share x's prefix mass; never search there
        idx = np.clip(np.searchsorted(p, target, side="left"), c + 1, d.size)
        dens = d[idx - 1]
        safe = np.where(dens > 0, dens, 1.0)
        y = np.where(p[idx] == target, b[idx], b[idx - 1] + (target - p[idx - 1]) / safe)
        # answers inside x's own cell are taken relative to x for accuracy
        if d[c] > 0:
            same = px + a <= p[c + 1]
            y = np.where(same, x + a / d[c], y)
        y = np.minimum(np.maximum(y, x), b[idx])
        return np.where((a <= 0) | (target <= px), x, np.minimum(y, 1.0))

    # -- serialization --

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "densities": self.densities.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "PiecewiseConstantMeasure":
        b = np.asarray(obj["breakpoints"], dtype=float)
        d = np.asarray(obj["densities"], dtype=float)
        total = float(np.sum(d * np.diff(b)))
        if abs(total - 1.0) > LOAD_TOL:
            raise DomainError(f"measure total mass {total!r} is off by more than {LOAD_TOL}")
        return cls(b, d, renormalize=True)

    def __repr__(self):
        return f"PiecewiseConstantMeasure({self.n_cells} cells)"


def uniform_measure() -> PiecewiseConstantMeasure:
    return PiecewiseConstantMeasure([0.0, 1.0], [1.0])


def load_measures(path) -> list[PiecewiseConstantMeasure]:
    """Read a measures file: a single measure object, a list, or {"measures": [...]}."""
    with open(path) as fh:
        obj = json.load(fh)
    if isinstance(obj, dict) and "measures" in obj:
        obj = obj["measures"]
    if isinstance(obj, dict):
        obj = [obj]
    return [PiecewiseConstantMeasure.from_dict(m) for m in obj]


def _key(x, y):
    return complex(float(x) + 0.0, float(y) + 0.0)


class QueryLedger:
    """Counts distinct eval/cut queries per player.

    A query is identified by (player, kind, x, y-or-a) with exact float
    equality; repeating an identical query is free because the mediator
    keeps every answer it has been given.
    """

    KINDS = ("eval", "cut")

    def __init__(self, n_players: int, trace: bool = False):
        self.n_players = n_players
        self.eval_count = [0] * n_players
        self.cut_count = [0] * n_players
        self._scalar = {(p, k): set() for p in range(n_players) for k in self.KINDS}
        self._bulk = {(p, k): np.empty(0, dtype=complex) for p in range(n_players) for k in self.KINDS}
        self.trace: list[tuple[str, int, float, float]] | None = [] if trace else None

    def _bump(self, player, kind, count):
        if kind == "eval":
            self.eval_count[player] += count
        else:
            self.cut_count[player] += count

    def _in_bulk(self, slot, keys):
        bulk = self._bulk[slot]
        if bulk.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.clip(np.searchsorted(bulk, keys), 0, bulk.size - 1)
        return bulk[pos] == keys

    def record(self, player: int, kind: str, x: float, y: float) -> bool:
        """Log one query; True when it had not been asked before."""
        if self.trace is not None:
            self.trace.append((kind, player, float(x), float(y)))
        slot = (player, kind)
        key = _key(x, y)
        if key in self._scalar[slot] or bool(self._in_bulk(slot, np.array([key]))[0]):
            return False
        self._scalar[slot].add(key)
        self._bump(player, kind, 1)
        return True

    def record_many(self, player: int, kind: str, xs, ys) -> int:
        """Log a batch of queries; returns how many were new."""
        xs = np.broadcast_to(np.asarray(xs, dtype=float), np.shape(ys))
        ys = np.asarray(ys, dtype=float)
        if self.trace is not None:
            self.trace.extend((kind, player, a, b) for a, b in zip(xs.tolist(), ys.tolist()))
        slot = (player, kind)
        keys = np.unique((xs + 0.0) + 1j * (ys + 0.0))
        keys = keys[~self._in_bulk(slot, keys)]
        scalars = self._scalar[slot]
        if scalars and keys.size:
            keys = keys[~np.isin(keys, np.fromiter(scalars, dtype=complex, count=len(scalars)))]
        if keys.size:
            merged = np.concatenate((self._bulk[slot], keys))
            merged.sort(kind="mergesort")
            self._bulk[slot] = merged
            self._bump(player, kind, int(keys.size))
        return int(keys.size)

    @property
    def evals(self) -> int:
        return sum(self.eval_count)

    @property
    def cuts(self) -> int:
        return sum(self.cut_count)

    @property
    def total(self) -> int:
        return self.evals + self.cuts

    def snapshot(self) -> dict:
        return {
            "eval": self.evals,
            "cut": self.cuts,
            "total": self.total,
            "eval_per_player": list(self.eval_count),
            "cut_per_player": list(self.cut_count),
        }


def recount_trace(trace) -> int:
    """Number of distinct queries in a ledger trace, counted from scratch."""
    return len({(kind, p, x + 0.0, y + 0.0) for kind, p, x, y in trace})


class MeasureOracle:
    """One player behind the eval/cut query interface."""

    def __init__(self, player: int, measure: PiecewiseConstantMeasure, ledger: QueryLedger):
        self.player = player
        self.measure = measure  # auditors only; protocols go through eval/cut
        self.ledger = ledger

    def eval(self, x: float, y: float) -> float:
        x, y = float(x), float(y)
        if not (0.0 <= x <= y <= 1.0):
            raise DomainError(f"eval needs 0 <= x <= y <= 1, got ({x}, {y})")
        self.ledger.record(self.player, "eval", x, y)
        return float(self.measure.mass(x, y))

    def eval_many(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.size and not (np.all(xs >= 0) and np.all(ys <= 1) and np.all(xs <= ys)):
            raise DomainError("eval batch needs 0 <= x <= y <= 1")
        self.ledger.record_many(self.player, "eval", xs, ys)
        return self.measure.mass(xs, ys)

    def _check_cut(self, x, a):
        if not (0.0 <= x <= 1.0):
            raise DomainError(f"cut start {x} outside [0, 1]")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise DomainError("cut amount must be a finite non-negative number")
        avail = float(self.measure.mass(x, 1.0))
        if np.any(a > avail + MASS_TOL):
            raise InsufficientMass(f"cut asks for {np.max(a)!r} but only {avail!r} remains right of {x}")

    def cut(self, x: float, a: float) -> float:
        x, a = float(x), float(a)
        self._check_cut(x, np.asarray(a))
        self.ledger.record(self.player, "cut", x, a)
        return float(self.measure.inverse(x, a))

    def cut_many(self, x: float, amounts) -> np.ndarray:
        x = float(x)
        a = np.asarray(amounts, dtype=float)
        self._check_cut(x, a)
        self.ledger.record_many(self.player, "cut", x, a)
        return self.measure.inverse(x, a)

    def eval_pieces(self, pieces: PieceSet) -> float:
        if len(pieces) == 0:
            return 0.0
        return float(math.fsum(self.eval_many(pieces.lo, pieces.hi)))

    def quantile_cuts(self, w: Interval, K: int) -> np.ndarray:
        """K-1 points splitting w into K parts of equal value to this player.

        Returns an empty array when K == 1 or the player values w at zero.
        """
        if not isinstance(w, Interval):
            w = Interval(*w)
        if K < 1:
            raise DomainError("K must be >= 1")
        mu = self.eval(w.lo, w.hi)
        if K == 1 or mu <= 0.0:
            return np.empty(0)
        a = np.arange(1, K, dtype=float) * mu / K
        y = self.cut_many(w.lo, a)
        return np.minimum(np.maximum.accumulate(y), w.hi)


def make_oracles(measures: Sequence[PiecewiseConstantMeasure], trace: bool = False) -> list[MeasureOracle]:
    ledger = QueryLedger(len(measures), trace=trace)
    return [MeasureOracle(i, m, ledger) for i, m in enumerate(measures)]
