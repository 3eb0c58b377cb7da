"""Model specifications for the branching-within-branching process.

A model is a cell offspring law ``(p_k)`` together with, for every ``k >= 1``
in its support, a sharing kernel: the law of the vector of offspring numbers
one parasite sends into daughters ``1..k`` of a cell with ``k`` daughters.
Everything downstream (moments, environments, samplers) is derived from this.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Union

import jsonschema
import numpy as np

from . import laws

# Sum-to-one handling: accept within PROB_TOL, silently renormalize within
# RENORM_TOL, reject beyond.
PROB_TOL = 1e-12
RENORM_TOL = 1e-9
TABLE_CAP = 10**6
MAX_K = 2**16

SCHEMA_PATH = Path(__file__).with_name("model.schema.json")


class ModelError(ValueError):
    """Invalid model specification or model file."""


class KernelTooLarge(ModelError):
    """Expanding a product kernel would exceed the table cap."""


def _normalize(probs: list[float], where: str) -> list[float]:
    if any((not math.isfinite(p)) or p < 0 for p in probs):
        raise ModelError(f"{where}: probabilities must be finite and >= 0")
    total = math.fsum(probs)
    dev = abs(total - 1.0)
    if dev <= PROB_TOL:
        return list(probs)
    if dev < RENORM_TOL:
        return [p / total for p in probs]
    raise ModelError(f"{where}: probabilities sum to {total!r}, not 1")


@dataclass(frozen=True)
class CellOffspringLaw:
    """Law of the number of daughter cells; entries are ``(k, p_k)`` with p_k > 0."""

    entries: tuple[tuple[int, float], ...]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "CellOffspringLaw":
        pairs = list(pairs)
        ks = [int(k) for k, _ in pairs]
        if any(k < 0 or k >= MAX_K for k in ks):
            raise ModelError(f"cell_law: k must lie in [0, {MAX_K})")
        if len(set(ks)) != len(ks):
            raise ModelError("cell_law: duplicate k")
        probs = _normalize([float(p) for _, p in pairs], "cell_law")
        kept = sorted((k, p) for k, p in zip(ks, probs) if p > 0)
        if not kept:
            raise ModelError("cell_law: empty support")
        return cls(tuple(kept))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.entries)

    @property
    def K(self) -> int:
        return self.entries[-1][0]

    def p(self, k: int) -> float:
        return dict(self.entries).get(k, 0.0)

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        ks = np.array([k for k, _ in self.entries], dtype=np.int64)
        ps = np.array([p for _, p in self.entries], dtype=float)
        return ks, ps

    @cached_property
    def cum(self) -> np.ndarray:
        return laws.cumulative(self.arrays[1])

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in self.entries)

    def truncated_mean(self, a: float) -> float:
        """E[N 1{N <= a}]."""
        return math.fsum(k * p for k, p in self.entries if k <= a)


@dataclass(frozen=True)
class TableKernel:
    """Sharing kernel given as an explicit joint table over N_0^k."""

    k: int
    vectors: tuple[tuple[int, ...], ...]
    probs: tuple[float, ...]

    @classmethod
    def build(cls, k: int, entries: Iterable[tuple[Iterable[int], float]]) -> "TableKernel":
        merged: dict[tuple[int, ...], float] = {}
        for x, p in entries:
            x = tuple(int(v) for v in x)
            if len(x) != k:
                raise ModelError(f"kernel {k}: vector {list(x)} has length {len(x)}")
            if any(v < 0 for v in x):
                raise ModelError(f"kernel {k}: negative entry in {list(x)}")
            merged[x] = merged.get(x, 0.0) + float(p)
        vecs = list(merged)
        probs = _normalize([merged[x] for x in vecs], f"kernel {k}")
        kept = [(x, p) for x, p in zip(vecs, probs) if p > 0]
        return cls(k, tuple(x for x, _ in kept), tuple(p for _, p in kept))

    @property
    def size(self) -> int:
        return len(self.vectors)

    def law(self) -> laws.VectorLaw:
        return dict(zip(self.vectors, self.probs))

    def component_law(self, j: int) -> laws.ScalarLaw:
        """Marginal law of the component for daughter ``j`` (1-based)."""
        out: dict[int, float] = {}
        for x, p in zip(self.vectors, self.probs):
            out[x[j - 1]] = out.get(x[j - 1], 0.0) + p
        return out

    def total_law(self) -> laws.ScalarLaw:
        out: dict[int, float] = {}
        for x, p in zip(self.vectors, self.probs):
            s = sum(x)
            out[s] = out.get(s, 0.0) + p
        return out

    def means(self) -> tuple[float, ...]:
        return tuple(
            math.fsum(x[j] * p for x, p in zip(self.vectors, self.probs)) for j in range(self.k)
        )

    def expand(self, cap: int = TABLE_CAP) -> "TableKernel":
        return self

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array(self.vectors, dtype=np.int64).reshape(len(self.vectors), self.k),
            np.array(self.probs, dtype=float),
        )

    def sample_sums(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Componentwise sums of ``z[i]`` iid kernel vectors, shape (len(z), k)."""
        vecs, probs = self.arrays
        z = np.asarray(z, dtype=np.int64)
        if len(probs) == 1:
            return np.outer(z, vecs[0])
        # bound the (rows x categories) multinomial buffer
        step = max(1, 4_000_000 // len(probs))
        if len(z) <= step:
            return rng.multinomial(z, probs) @ vecs
        return np.concatenate(
            [rng.multinomial(z[i : i + step], probs) @ vecs for i in range(0, len(z), step)]
        )


@dataclass(frozen=True)
class ProductKernel:
    """Sharing kernel with independent components; ``components[j-1]`` is the
    law of the daughter-``j`` count as ``((value, prob), ...)``."""

    k: int
    components: tuple[tuple[tuple[int, float], ...], ...]

    @classmethod
    def build(cls, k: int, components: Iterable[Iterable[tuple[int, float]]]) -> "ProductKernel":
        comps = []
        for j, comp in enumerate(components, start=1):
            merged: dict[int, float] = {}
            for v, p in comp:
                if int(v) < 0:
                    raise ModelError(f"kernel {k} component {j}: negative value")
                merged[int(v)] = merged.get(int(v), 0.0) + float(p)
            vals = list(merged)
            probs = _normalize([merged[v] for v in vals], f"kernel {k} component {j}")
            kept = tuple((v, p) for v, p in zip(vals, probs) if p > 0)
            comps.append(kept)
        if len(comps) != k:
            raise ModelError(f"kernel {k}: product kernel needs {k} components, got {len(comps)}")
        return cls(k, tuple(comps))

    @property
    def size(self) -> int:
        return math.prod(len(c) for c in self.components)

    def component_law(self, j: int) -> laws.ScalarLaw:
        return dict(self.components[j - 1])

    def total_law(self) -> laws.ScalarLaw:
        out: laws.ScalarLaw = {0: 1.0}
        for comp in self.components:
            out = laws.convolve(out, dict(comp))
        return out

    def means(self) -> tuple[float, ...]:
        return tuple(math.fsum(v * p for v, p in comp) for comp in self.components)

    def expand(self, cap: int = TABLE_CAP) -> TableKernel:
        if self.size > cap:
            raise KernelTooLarge(
                f"kernel {self.k}: product support {self.size} exceeds table cap {cap}"
            )
        entries = []
        for combo in itertools.product(*self.components):
            entries.append((tuple(v for v, _ in combo), math.prod(p for _, p in combo)))
        return TableKernel.build(self.k, entries)

    def law(self) -> laws.VectorLaw:
        return self.expand().law()

    @cached_property
    def arrays(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (np.array([v for v, _ in c], dtype=np.int64), np.array([p for _, p in c]))
            for c in self.components
        ]

    def sample_sums(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = np.asarray(z, dtype=np.int64)
        out = np.empty((len(z), self.k), dtype=np.int64)
        for j, (vals, probs) in enumerate(self.arrays):
            out[:, j] = laws.sample_sums(vals, probs, z, rng)
        return out


SharingKernel = Union[TableKernel, ProductKernel]


@dataclass(frozen=True)
class ModelSpec:
    cell_law: CellOffspringLaw
    kernels: tuple[tuple[int, SharingKernel], ...]
    name: str = "model"

    def __post_init__(self) -> None:
        need = {k for k in self.cell_law.support if k >= 1}
        have = [k for k, _ in self.kernels]
        if len(set(have)) != len(have):
            raise ModelError("duplicate kernel for the same k")
        if set(have) != need:
            missing = sorted(need - set(have))
            extra = sorted(set(have) - need)
            raise ModelError(f"kernels must match cell-law support: missing {missing}, extra {extra}")
        for k, ker in self.kernels:
            if ker.k != k:
                raise ModelError(f"kernel registered under k={k} has length {ker.k}")

    @classmethod
    def create(cls, cell_law, kernels: dict[int, SharingKernel], name: str = "model") -> "ModelSpec":
        if not isinstance(cell_law, CellOffspringLaw):
            cell_law = CellOffspringLaw.from_pairs(cell_law)
        # kernels for k outside the support are an error, not silently dropped
        return cls(cell_law, tuple(sorted(kernels.items())), name)

    def kernel(self, k: int) -> SharingKernel:
        return dict(self.kernels)[k]

    @property
    def positive_k(self) -> tuple[int, ...]:
        return tuple(k for k in self.cell_law.support if k >= 1)

    def table(self, k: int, cap: int = TABLE_CAP) -> TableKernel:
        return self.kernel(k).expand(cap)


# ---------------------------------------------------------------- model files


def _schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def spec_from_dict(doc: dict[str, Any]) -> ModelSpec:
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelError(f"field {loc}: {exc.message}") from None
    cell = CellOffspringLaw.from_pairs((e["k"], e["p"]) for e in doc["cell_law"])
    kernels: dict[int, SharingKernel] = {}
    for key, ker in doc["kernels"].items():
        k = int(key)
        if ker["type"] == "table":
            kernels[k] = TableKernel.build(k, ((e["x"], e["p"]) for e in ker["entries"]))
        else:
            kernels[k] = ProductKernel.build(
                k, [[(e["v"], e["p"]) for e in comp] for comp in ker["entries"]]
            )
    return ModelSpec.create(cell, kernels, doc.get("name", "model"))


def spec_to_dict(spec: ModelSpec) -> dict[str, Any]:
    kernels: dict[str, Any] = {}
    for k, ker in spec.kernels:
        if isinstance(ker, TableKernel):
            kernels[str(k)] = {
                "type": "table",
                "entries": [{"x": list(x), "p": p} for x, p in zip(ker.vectors, ker.probs)],
            }
        else:
            kernels[str(k)] = {
                "type": "product",
                "entries": [[{"v": v, "p": p} for v, p in comp] for comp in ker.components],
            }
    return {
        "name": spec.name,
        "cell_law": [{"k": k, "p": p} for k, p in spec.cell_law.entries],
        "kernels": kernels,
    }


def load_model(path: str | Path) -> ModelSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return spec_from_dict(doc)
    except ModelError as exc:
        raise ModelError(f"{path}: {exc}") from None


def dump_model(spec: ModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2)


# ------------------------------------------------------------------- moments


@dataclass(frozen=True)
class MomentTable:
    nu: float
    gamma: float
    mu: dict[tuple[int, int], float]
    z1logz1: float
    ENlogN: float


def compute_moments(spec: ModelSpec) -> MomentTable:
    """Exact first moments and log-moments of a model.

    ``z1logz1`` is E[Z_1 log Z_1] = sum_k p_k E[S_k log S_k] with S_k the total
    offspring of one parasite in a k-daughter cell.
    """
    mu: dict[tuple[int, int], float] = {}
    gamma_terms = []
    zlogz_terms = []
    for k in spec.positive_k:
        pk = spec.cell_law.p(k)
        ker = spec.kernel(k)
        for j, m in enumerate(ker.means(), start=1):
            mu[(j, k)] = m
            gamma_terms.append(pk * m)
        zlogz_terms.append(pk * math.fsum(p * laws.xlogx(s) for s, p in ker.total_law().items()))
    return MomentTable(
        nu=spec.cell_law.mean,
        gamma=math.fsum(gamma_terms),
        mu=mu,
        z1logz1=math.fsum(zlogz_terms),
        ENlogN=math.fsum(p * laws.xlogx(k) for k, p in spec.cell_law.entries),
    )


# --------------------------------------------------------------- assumptions


@dataclass
class Verdict:
    status: str  # "pass" | "fail" | "MC-supported"
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status != "fail"


@dataclass
class AssumptionReport:
    verdicts: dict[str, Verdict] = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(v.ok for v in self.verdicts.values())

    def passes(self, *names: str) -> bool:
        return all(self.verdicts[n].ok for n in names)

    def failed(self) -> list[str]:
        return [n for n, v in self.verdicts.items() if not v.ok]


def a4_witness(spec: ModelSpec):
    """A (k, x, y, j, j') witness that two parasites can contaminate two
    different daughters, or None."""
    for k in spec.positive_k:
        if k < 2:
            continue
        ker = spec.kernel(k)
        positive = [
            {v for v, p in ker.component_law(j).items() if v > 0 and p > 0} for j in range(1, k + 1)
        ]
        occupied = [j for j in range(1, k + 1) if positive[j - 1]]
        if len(occupied) >= 2:
            j, jp = occupied[0], occupied[1]
            x = _vector_with_positive(ker, j)
            y = _vector_with_positive(ker, jp)
            return k, x, y, j, jp
    return None


def _vector_with_positive(ker: SharingKernel, j: int) -> tuple[int, ...]:
    if isinstance(ker, TableKernel):
        return next(x for x in ker.vectors if x[j - 1] > 0)
    return tuple(
        next(v for v, _ in comp if v > 0) if i == j - 1 else comp[0][0]
        for i, comp in enumerate(ker.components)
    )


def validate_assumptions(
    spec: ModelSpec,
    mc_budget: int = 2000,
    *,
    seed: int = 0,
    horizon: int = 30,
    probe_caps: tuple[int, int] = (10**5, 10**4),
) -> AssumptionReport:
    """Per-assumption verdicts for (A1)-(A5).

    (A1)-(A4) are decided exactly. (A5), positive survival probability, has no
    exact criterion here; it fails on the necessary conditions gamma > 1 and
    nu*rho >= 1, and is otherwise labelled "MC-supported" with a survival
    frequency estimated from ``mc_budget`` forward runs. A run that reaches the
    probe caps is counted as surviving.
    """
    mom = compute_moments(spec)
    rep = AssumptionReport()
    rep.verdicts["A1"] = Verdict(
        "pass" if 0 < mom.gamma < math.inf else "fail", f"gamma = {mom.gamma:.6g}"
    )

    p1 = spec.cell_law.p(1)
    pz1 = math.fsum(
        spec.cell_law.p(k) * spec.kernel(k).total_law().get(1, 0.0) for k in spec.positive_k
    )
    rep.verdicts["A2"] = Verdict(
        "pass" if p1 < 1 and pz1 < 1 else "fail", f"p_1 = {p1:.6g}, P(Z_1 = 1) = {pz1:.6g}"
    )

    a3 = None
    for k in spec.positive_k:
        for j in range(1, k + 1):
            if 1.0 - spec.kernel(k).component_law(j).get(1, 0.0) > 0:
                a3 = (j, k)
                break
        if a3:
            break
    rep.verdicts["A3"] = Verdict(
        "pass" if a3 else "fail",
        f"P(X^({a3[0]},{a3[1]}) != 1) > 0" if a3 else "every X^(j,k) is identically 1",
    )

    w = a4_witness(spec)
    rep.verdicts["A4"] = Verdict(
        "pass" if w else "fail",
        f"k={w[0]}: x={list(w[1])} (j={w[3]}), y={list(w[2])} (j'={w[4]})"
        if w
        else "all parasites of a cell always land in one daughter",
    )

    rep.verdicts["A5"] = _a5_probe(spec, mom, mc_budget, seed, horizon, probe_caps)
    return rep


def _a5_probe(spec, mom, reps, seed, horizon, caps) -> Verdict:
    if mom.gamma <= 1:
        return Verdict("fail", f"gamma = {mom.gamma:.6g} <= 1: parasites die out a.s.")
    from .analysis import abpre_env, rho  # noqa: PLC0415  (analysis imports model)

    if mom.nu > 0:
        r = rho(abpre_env(spec)).rho_numeric
        if mom.nu * r < 1 - 1e-12:
            return Verdict(
                "fail", f"nu*rho = {mom.nu * r:.6g} < 1: mean contaminated cells -> 0"
            )
    from .engine import Caps, run_batch  # noqa: PLC0415

    ens = run_batch(spec, reps, horizon, Caps(*caps), seed=seed, tag="a5-probe")
    alive = sum(1 for t in ens.trajectories if t.status != "Extinct")
    freq = alive / reps
    status = "MC-supported" if alive > 0 else "fail"
    return Verdict(
        status,
        f"heuristic: survival frequency {freq:.4g} to n={horizon} over {reps} runs (seed {seed})",
    )
