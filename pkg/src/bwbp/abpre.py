"""Branching processes in iid random environment, with or without immigration.

Covers the cell-line process Z'_n (no immigration, Z'_0 = 1), generic
processes with immigration (Z_0 = 0), and the immigration process that the
spinal parasite count minus one follows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, TextIO

import numpy as np
from scipy import stats

from . import laws
from .analysis import AbpreEnv, abpre_env
from .model import ModelError, ModelSpec, compute_moments
from .rng import stream

TAG_ABPRE = "abpre"
TAG_BPREI = "bprei"


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamAtom:
    weight: float
    offspring: tuple[tuple[int, float], ...]
    immigrants: tuple[tuple[int, float], ...] = ((0, 1.0),)
    label: tuple[int, int] = (0, 0)

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in self.offspring)

    @property
    def immigrant_mean(self) -> float:
        return math.fsum(v * p for v, p in self.immigrants)

    @property
    def xlogx_over_mean(self) -> float:
        """E[X log+ X] / mu, finite for every finite-support atom."""
        m = self.mean
        if m == 0:
            return 0.0
        return math.fsum(p * laws.xlogx(v) for v, p in self.offspring if v >= 1) / m


@dataclass(frozen=True)
class EnvAtomStream:
    """iid environment: each generation draws one atom by weight."""

    atoms: tuple[StreamAtom, ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise StreamError("stream needs at least one atom")
        tot = math.fsum(a.weight for a in self.atoms)
        if abs(tot - 1.0) > 1e-9:
            raise StreamError(f"atom weights sum to {tot!r}")
        for a in self.atoms:
            for name, law in (("offspring", a.offspring), ("immigrants", a.immigrants)):
                s = math.fsum(p for _, p in law)
                if abs(s - 1.0) > 1e-9 or any(v < 0 or p < 0 for v, p in law):
                    raise StreamError(f"atom {a.label}: invalid {name} law")

    # -------------------------------------------------------- constructors

    @classmethod
    def from_env(cls, env: AbpreEnv) -> "EnvAtomStream":
        return cls(tuple(StreamAtom(a.weight, a.law, ((0, 1.0),), (a.j, a.k)) for a in env.atoms))

    @classmethod
    def abprei(cls, spec: ModelSpec) -> "EnvAtomStream":
        """Immigration process of the spinal parasite count minus one.

        Atom (j, k) has weight p_k mu_jk / gamma and ordinary offspring law
        X^(j,k). Given the atom, the spinal parasite's vector has law
        x_j P(x) / mu_jk, and the spinal daughter receives its j-th
        component, so the immigrants are that component minus one.
        """
        mom = compute_moments(spec)
        atoms = []
        for k in spec.positive_k:
            tab = spec.table(k)
            for j in range(1, k + 1):
                mu = mom.mu[(j, k)]
                if mu <= 0:
                    continue
                imm: dict[int, float] = {}
                for x, p in zip(tab.vectors, tab.probs):
                    if x[j - 1] > 0:
                        imm[x[j - 1] - 1] = imm.get(x[j - 1] - 1, 0.0) + x[j - 1] * p / mu
                atoms.append(
                    StreamAtom(
                        spec.cell_law.p(k) * mu / mom.gamma,
                        tuple(sorted(tab.component_law(j).items())),
                        tuple(sorted(imm.items())),
                        (j, k),
                    )
                )
        return cls(tuple(atoms))

    @classmethod
    def single(cls, offspring: dict[int, float], immigrants: dict[int, float]) -> "EnvAtomStream":
        return cls((StreamAtom(1.0, tuple(sorted(offspring.items())), tuple(sorted(immigrants.items())), (1, 1)),))

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvAtomStream":
        try:
            atoms = []
            for i, a in enumerate(doc["atoms"]):
                lab = tuple(a.get("label", (i + 1, 0)))
                off = tuple((int(e["v"]), float(e["p"])) for e in a["offspring"])
                imm = tuple((int(e["v"]), float(e["p"])) for e in a.get("immigrants", [{"v": 0, "p": 1.0}]))
                atoms.append(StreamAtom(float(a["weight"]), off, imm, lab))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"stream file: {exc!r}") from None
        return cls(tuple(atoms))

    # ------------------------------------------------------------- derived

    @cached_property
    def arrays(self):
        w = np.array([a.weight for a in self.atoms])
        off = [(np.array([v for v, _ in a.offspring], np.int64), np.array([p for _, p in a.offspring])) for a in self.atoms]
        imm = [(np.array([v for v, _ in a.immigrants], np.int64), np.array([p for _, p in a.immigrants])) for a in self.atoms]
        return laws.cumulative(w / w.sum()), off, imm

    @property
    def E_log_mu(self) -> float:
        if any(a.mean == 0 for a in self.atoms):
            return -math.inf
        return math.fsum(a.weight * math.log(a.mean) for a in self.atoms)

    @property
    def P_immigration(self) -> float:
        return math.fsum(a.weight * math.fsum(p for v, p in a.immigrants if v > 0) for a in self.atoms)

    def one_step_law(self, z: int) -> laws.ScalarLaw:
        """Exact law of the next generation from z individuals (immigrants included)."""
        out: laws.ScalarLaw = {}
        for a in self.atoms:
            part = laws.convolve(laws.power(dict(a.offspring), z), dict(a.immigrants))
            for v, p in part.items():
                out[v] = out.get(v, 0.0) + a.weight * p
        return out


def _draw_atom(cum: np.ndarray, rng: np.random.Generator) -> int:
    return 0 if len(cum) == 1 else laws.draw_index(cum, rng)


def _draw_sum(vals: np.ndarray, probs: np.ndarray, z: int, rng: np.random.Generator) -> int:
    if z == 0:
        return 0
    if len(vals) == 1:
        return z * int(vals[0])
    return int(rng.multinomial(z, probs) @ vals)


@dataclass
class BpreiTrajectory:
    """Row n: Z_n, the atom and immigrants drawn for step n -> n+1 (blank on
    the final row), the product of realized means over steps 0..n-1, and the
    normalized count."""

    Z: list[int] = field(default_factory=list)
    atom: list[Optional[tuple[int, int]]] = field(default_factory=list)
    xi: list[Optional[int]] = field(default_factory=list)
    prod_mu: list[float] = field(default_factory=list)

    @property
    def Z_norm(self) -> list[float]:
        return [z / m if m > 0 else math.nan for z, m in zip(self.Z, self.prod_mu)]


def _iterate(es: EnvAtomStream, horizon: int, z0: int, immigration: bool, rng) -> BpreiTrajectory:
    w, off, imm = es.arrays
    tr = BpreiTrajectory()
    z, pm = z0, 1.0
    for n in range(horizon + 1):
        tr.Z.append(z)
        tr.prod_mu.append(pm)
        if n == horizon:
            tr.atom.append(None)
            tr.xi.append(None)
            break
        i = _draw_atom(w, rng)
        a = es.atoms[i]
        x = int(_draw_sum(*imm[i], 1, rng)) if immigration else 0
        tr.atom.append(a.label)
        tr.xi.append(x)
        z = _draw_sum(*off[i], z, rng) + x
        pm *= a.mean
    return tr


def run_abpre(env: AbpreEnv | EnvAtomStream, horizon: int, seed: int = 0, *, rng=None) -> BpreiTrajectory:
    """Cell-line parasite process from one parasite; no immigration."""
    es = env if isinstance(env, EnvAtomStream) else EnvAtomStream.from_env(env)
    rng = rng if rng is not None else stream(seed, TAG_ABPRE, 0)
    return _iterate(es, horizon, 1, False, rng)


def run_bprei(es: EnvAtomStream, horizon: int, seed: int = 0, *, rng=None, z0: int = 0) -> BpreiTrajectory:
    if es.P_immigration <= 0:
        raise StreamError("immigration never occurs: P(xi > 0) = 0")
    rng = rng if rng is not None else stream(seed, TAG_BPREI, 0)
    return _iterate(es, horizon, z0, True, rng)


def _bprei_reps(args):
    es, reps, horizon, seed, tag, immigration = args
    z0 = 0 if immigration else 1
    return [_iterate(es, horizon, z0, immigration, stream(seed, tag, r)) for r in reps]


def run_stream_batch(es, reps, horizon, seed=0, *, immigration=True, threads=1, tag=None):
    from .engine import map_reps

    if immigration and es.P_immigration <= 0:
        raise StreamError("immigration never occurs: P(xi > 0) = 0")
    tag = tag or (TAG_BPREI if immigration else TAG_ABPRE)
    return map_reps(_bprei_reps, (es, horizon, seed, tag, immigration), reps, threads)


def write_stream_trajectories(trajs: list[BpreiTrajectory], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["rep", "n", "Z", "atom_j", "atom_k", "xi", "prod_mu", "Z_norm"])
    for r, tr in enumerate(trajs):
        for n, (z, a, x, pm, zn) in enumerate(zip(tr.Z, tr.atom, tr.xi, tr.prod_mu, tr.Z_norm)):
            w.writerow([
                r, n, z,
                "" if a is None else a[0],
                "" if a is None else a[1],
                "" if x is None else x,
                repr(pm), repr(zn),
            ])


# ---------------------------------------------------------- cell-line identity


def eq5_exact_n1(spec: ModelSpec) -> tuple[float, float]:
    """(nu P(Z'_1 > 0), E T*_1), the first from per-daughter marginals and
    the second from the joint kernel tables."""
    env = abpre_env(spec)
    lhs = env.nu * math.fsum(a.weight * (1.0 - a.q) for a in env.atoms)
    rhs = math.fsum(
        spec.cell_law.p(k)
        * math.fsum(p * sum(1 for v in x if v > 0) for x, p in zip(spec.table(k).vectors, spec.table(k).probs))
        for k in spec.positive_k
    )
    return lhs, rhs


@dataclass
class Eq5Row:
    n: int
    lhs: float
    lhs_ci: tuple[float, float]
    rhs: float
    rhs_ci: tuple[float, float]

    @property
    def overlap(self) -> bool:
        return self.lhs_ci[0] <= self.rhs_ci[1] and self.rhs_ci[0] <= self.lhs_ci[1]


def check_eq5(spec: ModelSpec, n_values, reps: int, seed: int = 0, threads: int = 1, level: float = 0.99):
    """Independent estimates of nu^n P(Z'_n > 0) and E T*_n with CIs."""
    from .engine import Caps, run_batch

    n_values = sorted(set(int(n) for n in n_values))
    horizon = max(n_values)
    env = abpre_env(spec)
    es = EnvAtomStream.from_env(env)
    trajs = run_stream_batch(es, reps, horizon, seed, immigration=False, threads=threads, tag="eq5-abpre")
    ens = run_batch(spec, reps, horizon, Caps(), seed=seed, threads=threads, tag="eq5-engine")
    zq = stats.norm.ppf(0.5 + level / 2)
    rows = []
    for n in n_values:
        alive = sum(1 for t in trajs if t.Z[n] > 0)
        scale = env.nu**n
        ci = stats.binomtest(alive, reps).proportion_ci(level, method="wilson")
        r = ens.row(n)
        se = r.se_S * scale if reps > 1 else 0.0
        mean_T = r.mean_S * scale
        rows.append(
            Eq5Row(n, scale * alive / reps, (scale * ci.low, scale * ci.high), mean_T, (mean_T - zq * se, mean_T + zq * se))
        )
    return rows


# --------------------------------------------------------- conditional decay


@dataclass
class DecayRow:
    n: int
    mean_ratio: float
    median_ratio: float
    max_ratio: float
    mc_mean_ratio: Optional[float] = None


def conditional_mean_path(mus: np.ndarray, xis: np.ndarray) -> np.ndarray:
    """E(Z_n | environment, immigrants) for n = 0..len(mus), from Z_0 = 0."""
    out = np.zeros(len(mus) + 1)
    for n in range(len(mus)):
        out[n + 1] = out[n] * mus[n] + xis[n]
    return out


def check_cor32(
    es: EnvAtomStream,
    c: float,
    horizon: int,
    reps: int,
    seed: int = 0,
    inner_reps: int = 0,
) -> list[DecayRow]:
    """c^-n E(Z_n | environment, immigrants) across outer realizations.

    The inner expectation is exact (linear recursion in the realized means
    and immigrant counts). With ``inner_reps`` > 0 it is also estimated by
    simulating the offspring given each frozen outer realization.
    """
    elog = es.E_log_mu
    if not c > 1:
        raise StreamError(f"need c > 1, got c = {c}")
    if not elog < math.log(c):
        raise StreamError(f"need E log mu < log c, got E log mu = {elog:.6g} >= log c = {math.log(c):.6g}")
    w, off, imm = es.arrays
    means = np.array([a.mean for a in es.atoms])
    ratios = np.empty((reps, horizon + 1))
    mc = np.empty((reps, horizon + 1)) if inner_reps else None
    scale = float(c) ** np.arange(horizon + 1)
    for r in range(reps):
        rng = stream(seed, "cor32", r)
        idx = laws.draw_index(w, rng, horizon)
        xis = np.array([_draw_sum(*imm[i], 1, rng) for i in idx], dtype=float)
        ratios[r] = conditional_mean_path(means[idx], xis) / scale
        if inner_reps:
            acc = np.zeros(horizon + 1)
            for _ in range(inner_reps):
                z = 0
                for n, i in enumerate(idx):
                    z = _draw_sum(*off[i], z, rng) + int(xis[n])
                    acc[n + 1] += z
            mc[r] = acc / inner_reps / scale
    rows = []
    for n in range(horizon + 1):
        col = ratios[:, n]
        rows.append(
            DecayRow(n, float(col.mean()), float(np.median(col)), float(col.max()),
                     None if mc is None else float(mc[:, n].mean()))
        )
    return rows
