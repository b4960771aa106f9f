"""Random witness matrices under the full-independence (H1) and smoothed (H2) models.

Both models produce M = D X with D the diagonal of reciprocal row sums of X:

* H1: X_ij i.i.d. Exp(1), drawn by inverse transform, so each row of M is
  uniform on the simplex.
* H2(eps): X_ij = a_ij + e_ij with a fixed stochastic base (all a_ij > eps)
  and i.i.d. mean-zero noise strictly inside (-eps, eps).

Every draw takes its randomness from a PCG64 stream keyed by a seed path,
so a trial can be replayed on its own in any order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, PartitionError
from .linalg import as_square, check_stochastic, matrix_from_dict, matrix_to_dict
from .measure import Interval, PiecewiseConstantMeasure

NOISE_KINDS = ("uniform", "triangular", "zero")
_HALF_ULP = 2.0 ** -54


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream for (seed, *key), independent of the order streams are made."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _open_unit(rng, size):
    # random() returns k / 2^53; shifting by half a step keeps 0 and 1 out
    return rng.random(size) + _HALF_ULP


def default_base(n: int) -> np.ndarray:
    if n < 1:
        raise ConfigError("n must be >= 1")
    return np.full((n, n), 1.0 / n)


@dataclass
class ModelConfig:
    kind: str
    n: int
    epsilon: float | None = None
    base: np.ndarray | None = None
    noise: str = "uniform"

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("h1", "h2"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        self.n = int(self.n)
        if self.kind == "h1":
            return
        if self.epsilon is None or not (0.0 < self.epsilon < 1.0):
            raise ConfigError(f"H2 needs epsilon in (0, 1), got {self.epsilon}")
        if self.noise not in NOISE_KINDS:
            raise ConfigError(f"unknown noise {self.noise!r}; choose from {NOISE_KINDS}")
        base = default_base(self.n) if self.base is None else as_square(self.base)
        if base.shape != (self.n, self.n):
            raise ConfigError(f"base is {base.shape}, expected {(self.n, self.n)}")
        try:
            check_stochastic(base, tol=1e-9)
        except Exception as exc:
            raise ConfigError(f"base is not stochastic: {exc}") from exc
        if np.any(base <= self.epsilon):
            raise ConfigError(f"every base entry must exceed epsilon={self.epsilon}")
        self.base = base

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "n": self.n}
        if self.kind == "h2":
            out.update(epsilon=self.epsilon, base=matrix_to_dict(self.base), noise=self.noise)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        base = obj.get("base")
        if isinstance(base, dict):
            base = matrix_from_dict(base)
        return cls(kind=obj["kind"], n=obj["n"], epsilon=obj.get("epsilon"),
                   base=base, noise=obj.get("noise", "uniform"))

    def with_n(self, n: int) -> "ModelConfig":
        base = None if self.base is None or self.base.shape[0] != n else self.base
        if self.kind == "h2" and self.base is not None and base is None:
            if not np.allclose(self.base, default_base(self.n)):
                raise ConfigError("a custom base matrix fixes n; cannot resize it")
        return ModelConfig(self.kind, n, self.epsilon, base, self.noise)


@dataclass
class SampleRecord:
    X: np.ndarray
    D: np.ndarray
    M: np.ndarray
    seed_path: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def to_dict(self) -> dict:
        return {
            "seed_path": list(self.seed_path),
            "X": matrix_to_dict(self.X),
            "D": matrix_to_dict(self.D),
            "M": matrix_to_dict(self.M),
        }


def _assemble(x: np.ndarray, seed_path) -> SampleRecord:
    d = 1.0 / x.sum(axis=1)
    return SampleRecord(X=x, D=np.diag(d), M=x * d[:, None], seed_path=tuple(seed_path))


def sample_h1(n: int, rng: np.random.Generator, seed_path=()) -> SampleRecord:
    if n < 1:
        raise ConfigError("n must be >= 1")
    u = rng.random((n, n))
    x = -np.log1p(-u)
    # u == 0 gives an exact zero entry; legal (Exp(1) has zero at its support edge)
    return _assemble(x, seed_path)


def sample_h2(cfg: ModelConfig, rng: np.random.Generator, seed_path=()) -> SampleRecord:
    if cfg.kind != "h2":
        raise ConfigError("sample_h2 needs an H2 config")
    n, eps = cfg.n, cfg.epsilon
    if cfg.noise == "uniform":
        noise = eps * (2.0 * _open_unit(rng, (n, n)) - 1.0)
    elif cfg.noise == "triangular":
        noise = eps * (_open_unit(rng, (n, n)) - _open_unit(rng, (n, n)))
    else:
        noise = np.zeros((n, n))
    x = cfg.base + noise
    if np.any(x <= 0):
        raise ConfigError("perturbed entry is not positive; base must exceed epsilon")
    return _assemble(x, seed_path)


def sample(cfg: ModelConfig, rng: np.random.Generator, seed_path=()) -> SampleRecord:
    if cfg.kind == "h1":
        return sample_h1(cfg.n, rng, seed_path)
    return sample_h2(cfg, rng, seed_path)


def uniform_grid(n: int) -> list[Interval]:
    return [Interval(j / n, (j + 1) / n) for j in range(n)]


def jittered_grid(n: int, rng: np.random.Generator) -> list[Interval]:
    """Uniform grid with each interior point moved by up to +-1/(4n)."""
    pts = np.arange(n + 1) / n
    if n > 1:
        pts[1:-1] += (2.0 * _open_unit(rng, n - 1) - 1.0) / (4 * n)
    return [Interval(pts[j], pts[j + 1]) for j in range(n)]


def check_partition(partition: Sequence[Interval]) -> np.ndarray:
    """Validate a contiguous left-to-right partition of [0, 1]; return its breakpoints."""
    if not partition:
        raise PartitionError("empty partition")
    pts = [partition[0].lo]
    for prev, cur in zip(partition, partition[1:]):
        if prev.hi != cur.lo:
            kind = "gap" if prev.hi < cur.lo else "overlap"
            raise PartitionError(f"{kind} between {prev} and {cur}")
    for w in partition:
        if w.hi <= w.lo:
            raise PartitionError(f"empty cell {w}")
        pts.append(w.hi)
    if pts[0] != 0.0 or pts[-1] != 1.0:
        raise PartitionError("partition must span [0, 1]")
    return np.asarray(pts)


def measures_from_matrix(M, partition: Sequence[Interval] | None = None) -> list[PiecewiseConstantMeasure]:
    """Player i gets constant density M_ij / |W_j| on cell W_j."""
    m = check_stochastic(M, tol=1e-9)
    n = m.shape[0]
    if partition is None:
        partition = uniform_grid(m.shape[1])
    if len(partition) != m.shape[1]:
        raise PartitionError(f"{len(partition)} cells for a {n}x{n} matrix")
    pts = check_partition(partition)
    widths = np.diff(pts)
    return [PiecewiseConstantMeasure(pts, m[i] / widths, renormalize=True) for i in range(n)]


def load_config(path) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.from_dict(json.load(fh))
