"""Forward simulation of the branching-within-branching process.

The population is stored aggregated by parasite count, but every contaminated
cell still draws its own number of daughters and its own parasite vectors.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np

from . import laws
from .model import ModelSpec, compute_moments
from .rng import stream

TAG = "engine"


@dataclass(frozen=True)
class Caps:
    parasites: int = 10**7
    cells: int = 10**6

    @classmethod
    def parse(cls, text: str) -> "Caps":
        a, b = text.split(",")
        return cls(int(float(a)), int(float(b)))


@dataclass
class PopulationState:
    zs: np.ndarray  # distinct parasite counts, all >= 1, increasing
    counts: np.ndarray  # number of cells holding zs[i] parasites
    empty_cells: int = 0
    generation: int = 0

    @classmethod
    def initial(cls, z: int = 1, cells: int = 1) -> "PopulationState":
        return cls(np.array([z], dtype=np.int64), np.array([cells], dtype=np.int64))

    @classmethod
    def from_map(cls, m: dict[int, int], empty_cells: int = 0, generation: int = 0):
        items = sorted((int(z), int(c)) for z, c in m.items() if c > 0)
        if any(z <= 0 for z, _ in items):
            raise ValueError("state map cannot hold z <= 0")
        zs = np.array([z for z, _ in items], dtype=np.int64)
        cs = np.array([c for _, c in items], dtype=np.int64)
        return cls(zs, cs, empty_cells, generation)

    def as_map(self) -> dict[int, int]:
        return {int(z): int(c) for z, c in zip(self.zs, self.counts)}

    @property
    def Tstar(self) -> int:
        return int(self.counts.sum())

    @property
    def Z(self) -> int:
        return int(self.zs @ self.counts) if len(self.zs) else 0

    @property
    def T(self) -> int:
        return self.Tstar + self.empty_cells

    @property
    def extinct(self) -> bool:
        return len(self.zs) == 0


def _aggregate(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Split daughter parasite counts into (distinct z>0, multiplicities, #zeros)."""
    if len(values) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), 0
    top = int(values.max())
    if top <= 4 * len(values) + 64:
        bins = np.bincount(values)
        zs = np.flatnonzero(bins[1:]) + 1
        return zs.astype(np.int64), bins[zs].astype(np.int64), int(bins[0])
    zeros = int(np.count_nonzero(values == 0))
    zs, cs = np.unique(values[values > 0], return_counts=True)
    return zs.astype(np.int64), cs.astype(np.int64), zeros


def reproduce_cells(
    z_cells: np.ndarray, spec: ModelSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One generation for an explicit list of cells.

    Returns (N per cell, flat daughter parasite counts in cell order). Daughter
    j of a cell receives the componentwise sum of the cell's parasite vectors.
    """
    z_cells = np.asarray(z_cells, dtype=np.int64)
    ks, ps = spec.cell_law.arrays
    if len(ks) == 1:
        N = np.full(len(z_cells), ks[0], dtype=np.int64)
    else:
        N = ks[laws.draw_index(spec.cell_law.cum, rng, len(z_cells))]
    out = np.empty(int(N.sum()), dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(N)[:-1]))
    for k in spec.positive_k:
        idx = np.flatnonzero(N == k)
        if len(idx) == 0:
            continue
        sums = spec.kernel(k).sample_sums(z_cells[idx], rng)
        pos = offsets[idx][:, None] + np.arange(k)[None, :]
        out[pos.ravel()] = sums.ravel()
    return N, out


def step(
    state: PopulationState, spec: ModelSpec, rng: np.random.Generator, track_empty: bool = False
) -> PopulationState:
    if state.extinct:
        zs, cs, zeros = state.zs[:0], state.counts[:0], 0
    else:
        z_cells = np.repeat(state.zs, state.counts)
        _, daughters = reproduce_cells(z_cells, spec, rng)
        zs, cs, zeros = _aggregate(daughters)
    empty = 0
    if track_empty:
        ks, ps = spec.cell_law.arrays
        born = 0
        if state.empty_cells:
            born = int(rng.multinomial(state.empty_cells, ps) @ ks)
        empty = zeros + born
    return PopulationState(zs, cs, empty, state.generation + 1)


@dataclass
class Trajectory:
    n: list[int]
    T: list[Optional[int]]
    Tstar: list[int]
    Z: list[int]
    W: list[float]
    S: list[float]
    status: str  # Extinct | Alive | CapHit
    status_n: int

    def rows(self) -> Iterable[tuple]:
        return zip(self.n, self.T, self.Tstar, self.Z, self.W, self.S)


def run(
    spec: ModelSpec,
    horizon: int,
    caps: Caps = Caps(),
    track_empty: bool = False,
    seed: int = 0,
    *,
    rng: Optional[np.random.Generator] = None,
    z0: int = 1,
) -> Trajectory:
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if rng is None:
        rng = stream(seed, TAG, 0)
    mom = compute_moments(spec)
    gamma, nu = mom.gamma, mom.nu
    state = PopulationState.initial(z0)
    tr = Trajectory([0], [1 if track_empty else None], [1], [z0], [float(z0)], [1.0], "Alive", horizon)
    for n in range(1, horizon + 1):
        if state.extinct:
            tr.status, tr.status_n = "Extinct", n - 1
            return tr
        if state.Z > caps.parasites or state.Tstar > caps.cells:
            tr.status, tr.status_n = "CapHit", n - 1
            return tr
        state = step(state, spec, rng, track_empty)
        Z, Ts = state.Z, state.Tstar
        tr.n.append(n)
        tr.T.append(state.T if track_empty else None)
        tr.Tstar.append(Ts)
        tr.Z.append(Z)
        tr.W.append(Z / gamma**n if gamma > 0 else math.nan)
        tr.S.append(Ts / nu**n if nu > 0 else math.nan)
    if state.extinct:
        tr.status, tr.status_n = "Extinct", horizon
    elif state.Z > caps.parasites or state.Tstar > caps.cells:
        tr.status, tr.status_n = "CapHit", horizon
    return tr


# ---------------------------------------------------------------------- batch


@dataclass
class SummaryRow:
    n: int
    mean_W: float
    se_W: float
    mean_S: float
    se_S: float
    mean_log_Tstar: float
    se: float
    extinct_frac: float
    n_obs: int
    n_survivors: int


@dataclass
class EnsembleSummary:
    rows: list[SummaryRow]
    trajectories: list[Trajectory] = field(default_factory=list)

    def row(self, n: int) -> SummaryRow:
        return self.rows[n]


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if len(x) == 0:
        return math.nan, math.nan
    if len(x) == 1:
        return float(x[0]), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def value_at(tr: Trajectory, n: int, col: str):
    """Column value at generation n; extinct runs read as 0, capped runs as None."""
    if n < len(tr.n):
        return getattr(tr, col)[n]
    if tr.status == "Extinct":
        return 0
    return None


def summarize(trajs: list[Trajectory], horizon: int) -> EnsembleSummary:
    rows = []
    for n in range(horizon + 1):
        W, S, logT = [], [], []
        extinct = 0
        for tr in trajs:
            w = value_at(tr, n, "W")
            if w is None:
                continue
            W.append(w)
            S.append(value_at(tr, n, "S"))
            t = value_at(tr, n, "Tstar")
            if t > 0:
                logT.append(math.log(t))
            else:
                extinct += 1
        mw, sw = _mean_se(np.array(W, dtype=float))
        ms, ss = _mean_se(np.array(S, dtype=float))
        ml, sl = _mean_se(np.array(logT, dtype=float))
        rows.append(
            SummaryRow(n, mw, sw, ms, ss, ml, sl, extinct / len(W) if W else math.nan, len(W), len(logT))
        )
    return EnsembleSummary(rows, trajs)


def _run_reps(args) -> list[Trajectory]:
    spec, reps, horizon, caps, track_empty, seed, tag = args
    return [
        run(spec, horizon, caps, track_empty, rng=stream(seed, tag, r)) for r in reps
    ]


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def map_reps(fn, common: tuple, reps: int, threads: int = 1) -> list:
    """Apply ``fn((*common[:1], rep_range, *common[1:]))`` over replicate
    chunks; results come back in replicate order whatever the worker count."""
    threads = max(1, int(threads))
    if threads == 1 or reps < 2:
        return fn((common[0], range(reps), *common[1:]))
    chunk = math.ceil(reps / (threads * 4))
    jobs = [(common[0], range(i, min(reps, i + chunk)), *common[1:]) for i in range(0, reps, chunk)]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        out = []
        for part in ex.map(fn, jobs):
            out.extend(part)
    return out


def run_batch(
    spec: ModelSpec,
    reps: int,
    horizon: int,
    caps: Caps = Caps(),
    seed: int = 0,
    track_empty: bool = False,
    threads: int = 1,
    tag: str = TAG,
) -> EnsembleSummary:
    """``reps`` independent runs; replicate r uses the stream (seed, tag, r)."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    trajs = map_reps(_run_reps, (spec, horizon, caps, track_empty, seed, tag), reps, threads)
    return summarize(trajs, horizon)


# ------------------------------------------------------------------------ csv


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_trajectories(trajs: list[Trajectory], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["rep", "n", "T", "Tstar", "Z", "W", "S", "status"])
    for r, tr in enumerate(trajs):
        last = len(tr.n) - 1
        for i, row in enumerate(tr.rows()):
            status = tr.status if i == last else "Alive"
            w.writerow([r, *map(_fmt, row), status])


def write_summary(summary: EnsembleSummary, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "mean_W", "se_W", "mean_S", "se_S", "mean_log_Tstar", "se", "extinct_frac"])
    for r in summary.rows:
        w.writerow(
            [r.n, *map(_fmt, (r.mean_W, r.se_W, r.mean_S, r.se_S, r.mean_log_Tstar, r.se, r.extinct_frac))]
        )
