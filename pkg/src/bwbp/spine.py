"""Size-biased process with a distinguished parasite line (the spine).

The spinal cell picks its number of daughters with probability proportional
to p_k times the mean parasite offspring in a k-cell, the spinal parasite
draws its offspring vector size-biased by its total, one of those offspring
is chosen uniformly to continue the spine, and every other parasite
reproduces as usual.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, TextIO

import numpy as np

from . import laws
from .model import ModelSpec, compute_moments
from .rng import stream

TAG = "spine"
Label = tuple[int, ...]


class SpineError(ValueError):
    pass


@dataclass(frozen=True)
class SpineTables:
    """Exact sampling tables for the spinal step, built once per model."""

    spec: ModelSpec
    gamma: float
    ks: tuple[int, ...]  # k with positive size-biased probability
    pk_hat: tuple[float, ...]  # P(That = k)
    vectors: dict[int, np.ndarray]  # table support per k
    sb_probs: dict[int, np.ndarray]  # size-biased probs per k
    probs: dict[int, np.ndarray]  # ordinary probs per k

    @classmethod
    def build(cls, spec: ModelSpec) -> "SpineTables":
        gamma = compute_moments(spec).gamma
        if gamma <= 0:
            raise SpineError("gamma must be positive for size-biasing")
        ks, pk_hat, vectors, sb, probs = [], [], {}, {}, {}
        for k in spec.positive_k:
            tab = spec.table(k)
            vecs, ps = tab.arrays
            tot = vecs.sum(axis=1)
            mass = float(tot @ ps)  # sum_j mu_jk
            if mass <= 0:
                continue
            ks.append(k)
            pk_hat.append(spec.cell_law.p(k) * mass / gamma)
            vectors[k] = vecs
            sb[k] = tot * ps / mass
            probs[k] = ps
        return cls(spec, gamma, tuple(ks), tuple(pk_hat), vectors, sb, probs)

    @cached_property
    def _k_array(self) -> np.ndarray:
        return np.array(self.ks, dtype=np.int64)

    @cached_property
    def _pk_cum(self) -> np.ndarray:
        p = np.array(self.pk_hat)
        return laws.cumulative(p / p.sum())

    @cached_property
    def _sb_cum(self) -> dict[int, np.ndarray]:
        return {k: laws.cumulative(p) for k, p in self.sb_probs.items()}

    def joint_law(self) -> dict[tuple[int, Label, int], float]:
        """Law of (That, Xhat, Chat) exactly as the sampler draws it."""
        out = {}
        for k, pk in zip(self.ks, self.pk_hat):
            for x, q in zip(self.vectors[k], self.sb_probs[k]):
                s = int(x.sum())
                for m in range(1, s + 1):
                    out[(k, tuple(int(v) for v in x), m)] = pk * q / s
        return out

    def construction_step_law(self, z: int) -> dict[tuple[int, int, Label], float]:
        """Law of (k, l, daughter counts) assembled from the three spinal
        choices plus ordinary reproduction of the other z-1 parasites."""
        if z < 1:
            raise SpineError("spinal cell must hold at least one parasite")
        out: dict[tuple[int, int, Label], float] = {}
        for k, pk in zip(self.ks, self.pk_hat):
            rest = laws.power_vec(self.spec.table(k).law(), z - 1, k)
            for x, q in zip(self.vectors[k], self.sb_probs[k]):
                x = tuple(int(v) for v in x)
                s = sum(x)
                for l in range(1, k + 1):
                    if x[l - 1] == 0:
                        continue
                    pl = pk * q * x[l - 1] / s
                    for y, py in rest.items():
                        key = (k, l, tuple(a + b for a, b in zip(x, y)))
                        out[key] = out.get(key, 0.0) + pl * py
        return out


def spinal_step_law(z: int, spec: ModelSpec) -> dict[tuple[int, int, Label], float]:
    """Weight p_k z_l / (z gamma) * P_z(daughter counts = zvec) for every
    outcome of a z-parasite cell with k daughters, spine moving to daughter l."""
    if z < 1:
        raise SpineError("spinal cell must hold at least one parasite")
    gamma = compute_moments(spec).gamma
    out = {}
    for k in spec.positive_k:
        pk = spec.cell_law.p(k)
        for zvec, p in laws.power_vec(spec.table(k).law(), z, k).items():
            for l in range(1, k + 1):
                if zvec[l - 1] > 0:
                    out[(k, l, zvec)] = pk * zvec[l - 1] / (z * gamma) * p
    return out


def spinal_count_law(step_law: dict[tuple[int, int, Label], float]) -> laws.ScalarLaw:
    """Law of (parasites in the next spinal cell) - 1."""
    out: laws.ScalarLaw = {}
    for (k, l, zvec), p in step_law.items():
        out[zvec[l - 1] - 1] = out.get(zvec[l - 1] - 1, 0.0) + p
    return out


def sample_spinal_step(
    z: int, tables: SpineTables, rng: np.random.Generator
) -> tuple[int, int, np.ndarray, int]:
    """Returns (k, l, daughter counts, spinal immigrants xhat_l - 1)."""
    if z < 1:
        raise SpineError("spinal cell must hold at least one parasite")
    ks = tables._k_array
    k = int(ks[0] if len(ks) == 1 else ks[laws.draw_index(tables._pk_cum, rng)])
    vecs = tables.vectors[k]
    sb = tables._sb_cum[k]
    xhat = vecs[0] if len(sb) == 1 else vecs[laws.draw_index(sb, rng)]
    c = int(rng.integers(1, int(xhat.sum()) + 1))
    l = int(np.searchsorted(np.cumsum(xhat), c)) + 1
    daughters = xhat.copy()
    if z > 1:
        ps = tables.probs[k]
        if len(ps) == 1:
            daughters = daughters + (z - 1) * vecs[0]
        else:
            daughters = daughters + rng.multinomial(z - 1, ps) @ vecs
    return k, l, daughters, int(xhat[l - 1]) - 1


# ----------------------------------------------------------------- spine runs


@dataclass
class SpineRecord:
    """Row n holds the spinal count at n and the draws made at step n -> n+1
    (blank on the final row)."""

    n: list[int] = field(default_factory=list)
    That: list[Optional[int]] = field(default_factory=list)
    Uhat: list[Optional[int]] = field(default_factory=list)
    Zspine: list[int] = field(default_factory=list)
    immigrants: list[Optional[int]] = field(default_factory=list)


def run_spine(
    spec: ModelSpec,
    horizon: int,
    seed: int = 0,
    *,
    rng: Optional[np.random.Generator] = None,
    tables: Optional[SpineTables] = None,
    z0: int = 1,
) -> SpineRecord:
    tables = tables or SpineTables.build(spec)
    rng = rng if rng is not None else stream(seed, TAG, 0)
    rec = SpineRecord()
    z = z0
    for n in range(horizon + 1):
        rec.n.append(n)
        rec.Zspine.append(z)
        if n == horizon:
            rec.That.append(None)
            rec.Uhat.append(None)
            rec.immigrants.append(None)
            break
        k, l, d, imm = sample_spinal_step(z, tables, rng)
        rec.That.append(k)
        rec.Uhat.append(l)
        rec.immigrants.append(imm)
        z = int(d[l - 1])
    return rec


def _spine_reps(args) -> list[SpineRecord]:
    spec, reps, horizon, seed, tag = args
    tables = SpineTables.build(spec)
    return [run_spine(spec, horizon, rng=stream(seed, tag, r), tables=tables) for r in reps]


def run_spine_batch(spec, reps, horizon, seed=0, threads=1, tag=TAG) -> list[SpineRecord]:
    from .engine import map_reps

    return map_reps(_spine_reps, (spec, horizon, seed, tag), reps, threads)


def write_spines(records: list[SpineRecord], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["rep", "n", "That", "Uhat", "Zspine", "immigrants"])
    for r, rec in enumerate(records):
        for row in zip(rec.n, rec.That, rec.Uhat, rec.Zspine, rec.immigrants):
            w.writerow([r, *("" if v is None else v for v in row)])


# ---------------------------------------------------------- size-biased trees

Config = tuple[tuple[Label, int], ...]  # sorted (label, parasite count) over living cells


@dataclass
class SizeBiasedTree:
    generations: list[dict[Label, int]]
    spine: list[Label]
    W_hat: list[float]
    status: str  # "Complete" | "Truncated"

    def config(self) -> Config:
        return tuple(sorted((lab, z) for g in self.generations for lab, z in g.items()))

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "spine": [".".join(map(str, lab)) for lab in self.spine],
            "W_hat": self.W_hat,
            "generations": [
                {(".".join(map(str, lab)) or "root"): z for lab, z in sorted(g.items())}
                for g in self.generations
            ],
        }


def run_sizebiased_tree(
    spec: ModelSpec,
    depth: int,
    cap: int = 10**5,
    seed: int = 0,
    *,
    rng: Optional[np.random.Generator] = None,
    tables: Optional[SpineTables] = None,
) -> SizeBiasedTree:
    """Whole size-biased tree to ``depth``; living cells with no parasites are
    kept (with count 0) since they still divide."""
    tables = tables or SpineTables.build(spec)
    rng = rng if rng is not None else stream(seed, TAG + "-tree", 0)
    ks, ps = spec.cell_law.arrays
    gens: list[dict[Label, int]] = [{(): 1}]
    spine: list[Label] = [()]
    W = [1.0]
    status = "Complete"
    for n in range(depth):
        nxt: dict[Label, int] = {}
        for lab, z in gens[-1].items():
            if lab == spine[-1]:
                k, l, d, _ = sample_spinal_step(z, tables, rng)
                for j in range(k):
                    nxt[lab + (j + 1,)] = int(d[j])
                spine.append(lab + (l,))
                continue
            k = int(ks[0] if len(ks) == 1 else ks[laws.draw_index(spec.cell_law.cum, rng)])
            if k == 0:
                continue
            if z == 0:
                d = np.zeros(k, dtype=np.int64)
            else:
                d = spec.kernel(k).sample_sums(np.array([z]), rng)[0]
            for j in range(k):
                nxt[lab + (j + 1,)] = int(d[j])
        gens.append(nxt)
        W.append(sum(nxt.values()) / tables.gamma ** (n + 1))
        if len(nxt) > cap:
            status = "Truncated"
            break
    return SizeBiasedTree(gens, spine, W, status)


def _children_laws(spec: ModelSpec, z: int) -> list[tuple[float, tuple[int, ...]]]:
    """All (probability, daughter counts) outcomes of an ordinary cell."""
    out = []
    for k, pk in spec.cell_law.entries:
        if k == 0:
            out.append((pk, ()))
        elif z == 0:
            out.append((pk, (0,) * k))
        else:
            for zvec, p in laws.power_vec(spec.table(k).law(), z, k).items():
                out.append((pk * p, zvec))
    return out


def tree_law(spec: ModelSpec, depth: int, max_configs: int = 10**5) -> dict[Config, float]:
    """Exact law of the labeled tree of living cells up to ``depth``."""
    frontier: list[tuple[float, dict[Label, int], dict[Label, int]]] = [(1.0, {(): 1}, {(): 1})]
    for _ in range(depth):
        new = []
        for p, cfg, last in frontier:
            per_cell = [
                [(q, lab, d) for q, d in _children_laws(spec, z)] for lab, z in sorted(last.items())
            ]
            for combo in itertools.product(*per_cell):
                q = p
                cfg2 = dict(cfg)
                gen = {}
                for qi, lab, d in combo:
                    q *= qi
                    for j, v in enumerate(d, start=1):
                        gen[lab + (j,)] = v
                cfg2.update(gen)
                new.append((q, cfg2, gen))
            if len(new) > max_configs:
                raise SpineError(f"more than {max_configs} tree configurations")
        frontier = new
    out: dict[Config, float] = {}
    for p, cfg, _ in frontier:
        key = tuple(sorted(cfg.items()))
        out[key] = out.get(key, 0.0) + p
    return out


def sizebiased_tree_law(
    spec: ModelSpec, depth: int, max_configs: int = 10**5
) -> dict[tuple[Config, Label], float]:
    """Exact law of (size-biased tree, spine label at ``depth``), built from the
    spinal construction step by step."""
    tables = SpineTables.build(spec)
    frontier = [(1.0, {(): 1}, {(): 1}, ())]
    for _ in range(depth):
        new = []
        for p, cfg, last, sp in frontier:
            per_cell = []
            for lab, z in sorted(last.items()):
                if lab == sp:
                    opts = [
                        (q, lab, zvec, lab + (l,))
                        for (k, l, zvec), q in tables.construction_step_law(z).items()
                    ]
                else:
                    opts = [(q, lab, d, None) for q, d in _children_laws(spec, z)]
                per_cell.append(opts)
            for combo in itertools.product(*per_cell):
                q = p
                cfg2 = dict(cfg)
                gen = {}
                sp2 = None
                for qi, lab, d, s in combo:
                    q *= qi
                    if s is not None:
                        sp2 = s
                    for j, v in enumerate(d, start=1):
                        gen[lab + (j,)] = v
                cfg2.update(gen)
                new.append((q, cfg2, gen, sp2))
            if len(new) > max_configs:
                raise SpineError(f"more than {max_configs} tree configurations")
        frontier = new
    out: dict[tuple[Config, Label], float] = {}
    for p, cfg, _, sp in frontier:
        key = (tuple(sorted(cfg.items())), sp)
        out[key] = out.get(key, 0.0) + p
    return out


def config_generation_total(cfg: Config, n: int) -> int:
    return sum(z for lab, z in cfg if len(lab) == n)
