"""Near-exact subdivision, Webb's super envy-free algorithm, and fairness audits.

The protocols talk to players only through :class:`~cakecut.measure.MeasureOracle`
queries. Audits read the densities directly and never touch a ledger.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, ResourceError, SingularError, SingularWitnessMatrix
from .linalg import (
    SINGULAR_TOL,
    delta as webb_delta,
    invert,
    matrix_to_dict,
    min_entry,
    ratio_matrix,
    sigma_query_bound,
    singular_values,
    target_matrix,
    webb_query_bound,
)
from .measure import Interval, MeasureOracle, PieceSet, PiecewiseConstantMeasure
from .models import check_partition, jittered_grid, uniform_grid

RATIO_TOL = 1e-12
WEAK_TOL = 1e-12
_MACHINE_EPS = np.finfo(float).eps


@dataclass
class NearExactConfig:
    """Knobs for the near-exact subroutine and the protocols built on it.

    ``assignment="random"`` starts at the Hoeffding piece count
    ceil(ln(4 n^2) / (2 eps^2)) and only draws random assignments.
    ``assignment="greedy"`` starts at ceil(2 / eps) pieces per player, tries a
    deterministic greedy assignment first, then falls back to random draws.
    Both double K after ``retry_cap`` failed assignments.
    """

    epsilon_mode: str = "fast"
    retry_cap: int = 64
    k_cap: int = 2 ** 20
    assignment: str = "greedy"
    seed: int = 0
    merge_tol: float = 1e-12
    jitter_retry: bool = True
    key: tuple = ()

    def __post_init__(self):
        if self.epsilon_mode not in ("fast", "paper"):
            raise DomainError(f"epsilon_mode must be 'fast' or 'paper', got {self.epsilon_mode!r}")
        if self.assignment not in ("greedy", "random"):
            raise DomainError(f"assignment must be 'greedy' or 'random', got {self.assignment!r}")
        if self.retry_cap < 1:
            raise DomainError("retry_cap must be >= 1")
        if self.k_cap < 1:
            raise DomainError("k_cap must be >= 1")

    def rng(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=tuple(self.key) + key)
        return np.random.Generator(np.random.PCG64(ss))

    def to_dict(self) -> dict:
        return {
            "epsilon_mode": self.epsilon_mode,
            "retry_cap": self.retry_cap,
            "k_cap": self.k_cap,
            "assignment": self.assignment,
            "seed": self.seed,
            "merge_tol": self.merge_tol,
            "jitter_retry": self.jitter_retry,
            "key": list(self.key),
        }


@dataclass
class AuditRecord:
    passed: bool
    margin: float | None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "margin": self.margin, **self.detail}


@dataclass
class Division:
    """Output of :func:`near_exact_divide` plus what it cost."""

    pieces: list[PieceSet]
    K: int = 0
    levels: int = 0
    attempts: int = 0
    n_pieces: int = 1
    shortcut: bool = False
    mediator_margin: float | None = None

    def stats(self) -> dict:
        return {
            "K": self.K,
            "levels": self.levels,
            "attempts": self.attempts,
            "retries": max(self.attempts - 1, 0),
            "pieces": self.n_pieces,
            "shortcut": self.shortcut,
            "mediator_margin": self.mediator_margin,
        }


def initial_k(n: int, epsilon: float, assignment: str) -> int:
    if assignment == "random":
        return max(n, math.ceil(math.log(4 * n * n) / (2 * epsilon * epsilon)))
    return max(n, math.ceil(2.0 / epsilon))


def _refine(w: Interval, cut_sets, tol: float) -> np.ndarray:
    """Sorted edges of the atomic pieces induced by all players' cut points."""
    if cut_sets:
        pts = np.unique(np.concatenate(cut_sets))
        pts = pts[(pts > w.lo + tol) & (pts < w.hi - tol)]
        if pts.size > 1:
            # cut points that agree up to rounding would leave sliver pieces
            keep = np.ones(pts.size, dtype=bool)
            keep[1:] = np.diff(pts) > tol
            pts = pts[keep]
    else:
        pts = np.empty(0)
    return np.concatenate(([w.lo], pts, [w.hi]))


def near_exact_divide(w, ratios, epsilon: float, oracles: Sequence[MeasureOracle],
                      cfg: NearExactConfig | None = None,
                      rng: np.random.Generator | None = None) -> Division:
    """Split w into len(ratios) piece sets, each worth ratios[j] of w to every player up to epsilon.

    For every player i valuing w at mu_i > 0 the result satisfies
    |mu_i(A_j) - ratios[j] mu_i| < epsilon mu_i. Pieces come from the union of
    all players' K-quantile cuts of w; the mediator assigns them to buckets and
    checks the condition on values it has already been told, doubling K when
    ``retry_cap`` assignments in a row fail.
    """
    cfg = cfg or NearExactConfig()
    rng = rng if rng is not None else cfg.rng()
    w = w if isinstance(w, Interval) else Interval(*w)
    r = np.asarray(ratios, dtype=float)
    nb = r.size
    if nb < 1 or np.any(r < -RATIO_TOL) or abs(r.sum() - 1.0) > 1e-9 or not np.all(np.isfinite(r)):
        raise DomainError(f"ratios must be non-negative and sum to 1, got {r}")
    if not (0.0 < epsilon < 1.0):
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    empty = [PieceSet() for _ in range(nb)]
    top = int(np.argmax(r))
    if r[top] >= 1.0 - RATIO_TOL:
        pieces = list(empty)
        pieces[top] = PieceSet([w])
        return Division(pieces, shortcut=True)

    mu = np.array([o.eval(w.lo, w.hi) for o in oracles])
    active = mu > 0
    if not active.any():
        pieces = list(empty)
        pieces[top] = PieceSet([w])
        return Division(pieces, shortcut=True)

    r_pos = np.clip(r, 0.0, None)
    allowed = r_pos > RATIO_TOL
    probs = np.where(allowed, r_pos, 0.0)
    probs /= probs.sum()
    K = initial_k(len(oracles), epsilon, cfg.assignment)
    attempts = levels = 0
    while True:
        if K > cfg.k_cap:
            raise ResourceError(f"near-exact division needs K={K} > k_cap={cfg.k_cap} (epsilon={epsilon:.3g})")
        levels += 1
        cut_sets = [o.quantile_cuts(w, K) for o, a in zip(oracles, active) if a]
        edges = _refine(w, cut_sets, cfg.merge_tol)
        m = edges.size - 1
        values = np.vstack([o.eval_many(edges[:-1], edges[1:]) for o in oracles])
        scaled = values[active] / mu[active, None]
        slack = 4.0 * m * _MACHINE_EPS + 1e-12
        for attempt in range(cfg.retry_cap):
            attempts += 1
            if attempt == 0 and cfg.assignment == "greedy":
                assign = _kernels.greedy_assign(np.ascontiguousarray(scaled), r_pos, allowed)
            else:
                assign = rng.choice(nb, size=m, p=probs)
            sums = np.vstack([np.bincount(assign, weights=row, minlength=nb) for row in scaled])
            margin = float(epsilon - np.max(np.abs(sums - r[None, :])))
            if margin > slack:
                lo, hi = edges[:-1], edges[1:]
                pieces = [PieceSet.from_arrays(lo[assign == j], hi[assign == j]) for j in range(nb)]
                return Division(pieces, K=K, levels=levels, attempts=attempts,
                                n_pieces=m, mediator_margin=margin)
        K *= 2


# -- audits -----------------------------------------------------------------

def _measures(objs) -> list[PiecewiseConstantMeasure]:
    return [o.measure if isinstance(o, MeasureOracle) else o for o in objs]


def value_matrix(measures, allocation) -> np.ndarray:
    """V[i, j] = mu_i(C_j) by direct integration."""
    ms = _measures(measures)
    pieces = allocation.pieces if isinstance(allocation, Allocation) else list(allocation)
    return np.array([[m.mass_of(p) for p in pieces] for m in ms])


def audit_near_exact(measures, pieces, ratios, epsilon: float) -> AuditRecord:
    """Check |mu_i(A_j) - r_j mu_i(A)| < eps mu_i(A) for players with mu_i(A) > 0.

    The margin is the smallest eps - |error| / mu_i(A), so it is positive
    exactly when the strict condition holds everywhere.
    """
    v = value_matrix(measures, pieces)
    total = v.sum(axis=1)
    r = np.asarray(ratios, dtype=float)
    active = total > 0
    if not active.any():
        return AuditRecord(True, None, {"vacuous": True})
    rel = np.abs(v[active] - r[None, :] * total[active, None]) / total[active, None]
    margin = float(epsilon - rel.max())
    return AuditRecord(margin > 0, margin)


def audit_envy_free(measures, allocation) -> AuditRecord:
    v = value_matrix(measures, allocation)
    n = v.shape[0]
    if n == 1:
        return AuditRecord(True, None)
    own = np.diag(v)
    gaps = own[:, None] - v
    np.fill_diagonal(gaps, np.inf)
    margin = float(gaps.min())
    return AuditRecord(margin >= -WEAK_TOL, margin)


def audit_proportional(measures, allocation) -> AuditRecord:
    v = value_matrix(measures, allocation)
    n = v.shape[0]
    margin = float(np.min(np.diag(v)) - 1.0 / n)
    return AuditRecord(margin >= -WEAK_TOL, margin)


def audit_super_envy_free(measures, allocation) -> AuditRecord:
    """mu_i(C_i) > 1/n > mu_i(C_j) for all i != j.

    ``own_margin`` is min_i mu_i(C_i) - 1/n and is the reported margin;
    ``other_margin`` is min_{i != j} 1/n - mu_i(C_j). Both must be positive
    to pass.
    """
    v = value_matrix(measures, allocation)
    n = v.shape[0]
    if n == 1:
        return AuditRecord(True, None, {"own_margin": None, "other_margin": None})
    own = float(np.min(np.diag(v)) - 1.0 / n)
    off = v.copy()
    np.fill_diagonal(off, -np.inf)
    other = float(1.0 / n - off.max())
    return AuditRecord(own > 0 and other > 0, own, {"own_margin": own, "other_margin": other})


# -- allocations and reports --------------------------------------------------

@dataclass
class Allocation:
    pieces: list[PieceSet]

    def check(self, tol: float = 1e-9) -> None:
        """Raise DomainError unless the pieces tile [0, 1] with disjoint interiors."""
        lo = np.concatenate([p.lo for p in self.pieces]) if self.pieces else np.empty(0)
        hi = np.concatenate([p.hi for p in self.pieces]) if self.pieces else np.empty(0)
        order = np.argsort(lo, kind="stable")
        lo, hi = lo[order], hi[order]
        if lo.size > 1 and np.any(hi[:-1] > lo[1:]):
            raise DomainError("allocation pieces overlap")
        total = float(math.fsum((hi - lo).tolist()))
        if abs(total - 1.0) > tol:
            raise DomainError(f"allocation covers length {total}, not 1")

    def to_list(self) -> list:
        return [p.to_list() for p in self.pieces]

    @classmethod
    def from_list(cls, obj) -> "Allocation":
        return cls([PieceSet([tuple(iv) for iv in player]) for player in obj])


@dataclass
class WebbReport:
    allocation: Allocation
    witness: np.ndarray
    partition: list[Interval]
    t: float
    delta: float
    sigma_n: float
    epsilon: float
    epsilon_mode: str
    ratios: np.ndarray
    queries: dict
    bounds: dict
    audits: dict
    cells: list[dict]
    jittered: bool = False
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.allocation.pieces)

    @property
    def queries_total(self) -> int:
        return self.queries["total"]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "allocation": self.allocation.to_list(),
            "witness": matrix_to_dict(self.witness),
            "partition": [[w.lo, w.hi] for w in self.partition],
            "t": self.t,
            "delta": self.delta,
            "sigma_n": self.sigma_n,
            "epsilon": self.epsilon,
            "epsilon_mode": self.epsilon_mode,
            "ratios": matrix_to_dict(self.ratios),
            "queries": self.queries,
            "query_counting": "distinct queries; repeated identical queries are not charged",
            "bounds": self.bounds,
            "audits": self.audits,
            "cells": self.cells,
            "jittered": self.jittered,
            "config": self.config,
        }


def witness_matrix(oracles: Sequence[MeasureOracle], partition: Sequence[Interval]) -> np.ndarray:
    return np.array([[o.eval(w.lo, w.hi) for w in partition] for o in oracles])


def _full_audits(measures, allocation) -> dict:
    return {
        "envy_free": audit_envy_free(measures, allocation).to_dict(),
        "super_envy_free": audit_super_envy_free(measures, allocation).to_dict(),
        "proportional": audit_proportional(measures, allocation).to_dict(),
    }


def _webb_from_witness(oracles, partition, M, cfg: NearExactConfig, stream: int,
                       jittered: bool = False) -> WebbReport:
    n = len(oracles)
    measures = _measures(oracles)
    if n == 1:
        alloc = Allocation([PieceSet([Interval(0.0, 1.0)])])
        audits = _full_audits(measures, alloc)
        audits["near_exact"] = {"passed": True, "margin": None}
        return WebbReport(alloc, M, list(partition), t=1.0, delta=0.0, sigma_n=float(abs(M[0, 0])),
                          epsilon=0.0, epsilon_mode=cfg.epsilon_mode, ratios=np.ones((1, 1)),
                          queries=oracles[0].ledger.snapshot(),
                          bounds={"webb_query_bound": None, "sigma_query_bound": None,
                                  "sigma_bound_in_range": False},
                          audits=audits, cells=[], jittered=jittered, config=cfg.to_dict())
    sv = singular_values(M)
    sigma_n = float(sv[-1])
    if sigma_n < SINGULAR_TOL * sv[0]:
        raise SingularError(f"witness sigma_n / sigma_1 = {sigma_n / sv[0]:.3g}")
    m_inv = invert(M, check_sigma=False)
    t = min_entry(m_inv)
    d = webb_delta(n, t)
    R = ratio_matrix(m_inv, target_matrix(n, d))
    eps = d / n ** 2 if cfg.epsilon_mode == "paper" else d / (2 * (n - 1))
    cells, per_cell = [], []
    for j, w in enumerate(partition):
        div = near_exact_divide(w, R[j], eps, oracles, cfg, rng=cfg.rng(stream, j))
        audit = audit_near_exact(measures, div.pieces, R[j], eps)
        cells.append({"cell": j, **div.stats(), "near_exact": audit.to_dict()})
        per_cell.append(div.pieces)
    alloc = Allocation([PieceSet.union(per_cell[j][i] for j in range(n)) for i in range(n)])
    audits = _full_audits(measures, alloc)
    ne_margins = [c["near_exact"]["margin"] for c in cells if c["near_exact"]["margin"] is not None]
    audits["near_exact"] = {
        "passed": all(c["near_exact"]["passed"] for c in cells),
        "margin": min(ne_margins) if ne_margins else None,
    }
    sb = sigma_query_bound(n, sigma_n) if sigma_n > 0 else None
    bounds = {
        "webb_query_bound": webb_query_bound(n, t),
        "sigma_query_bound": sb.value if sb else None,
        "sigma_bound_in_range": bool(sb.in_range) if sb else False,
    }
    return WebbReport(alloc, M, list(partition), t=t, delta=d, sigma_n=sigma_n, epsilon=eps,
                      epsilon_mode=cfg.epsilon_mode, ratios=R, queries=oracles[0].ledger.snapshot(),
                      bounds=bounds, audits=audits, cells=cells, jittered=jittered,
                      config=cfg.to_dict())


def webb_super_envy_free(oracles: Sequence[MeasureOracle], partition: Sequence[Interval],
                         cfg: NearExactConfig | None = None) -> WebbReport:
    """Webb's algorithm on a given partition; SingularError if its witness matrix is singular."""
    cfg = cfg or NearExactConfig()
    check_partition(partition)
    if len(partition) != len(oracles):
        raise DomainError(f"{len(partition)} cells for {len(oracles)} players")
    M = witness_matrix(oracles, partition)
    return _webb_from_witness(oracles, partition, M, cfg, stream=0)


def envy_free(oracles: Sequence[MeasureOracle], cfg: NearExactConfig | None = None) -> WebbReport:
    """Envy-free division: Webb's algorithm on the uniform grid.

    A singular witness matrix gets one retry on a jittered grid; if that is
    singular too, :class:`SingularWitnessMatrix` is raised.
    """
    cfg = cfg or NearExactConfig()
    n = len(oracles)
    if n < 1:
        raise DomainError("need at least one player")
    tried, sigmas, grids = [], [], []
    grid = uniform_grid(n)
    attempts = 2 if cfg.jitter_retry else 1
    for attempt in range(attempts):
        if attempt == 1:
            grid = jittered_grid(n, cfg.rng(2))
        M = witness_matrix(oracles, grid)
        try:
            return _webb_from_witness(oracles, grid, M, cfg, stream=attempt, jittered=attempt == 1)
        except SingularError:
            tried.append(M)
            sigmas.append(float(singular_values(M)[-1]))
            grids.append([[w.lo, w.hi] for w in grid])
    raise SingularWitnessMatrix(
        f"witness matrix singular on {len(tried)} partition(s); sigma_n = {sigmas}",
        matrices=tried, sigmas=sigmas, partitions=grids)
