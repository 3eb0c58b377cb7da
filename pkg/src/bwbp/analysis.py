"""Exact model analysis: the cell-line environment, the decay rate rho, the
W and L classifications, immigration criticality and Heyde-Seneta norming."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import laws
from .model import CellOffspringLaw, ModelError, ModelSpec, MomentTable, compute_moments

ZERO_TOL = 1e-12
GOLDEN_MAX_ITER = 200
GOLDEN_TOL = 1e-12
INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class EnvAtom:
    """One environment atom: the offspring law of a parasite sent to daughter
    ``j`` of a ``k``-daughter cell."""

    j: int
    k: int
    weight: float
    mean: float
    q: float
    law: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class AbpreEnv:
    atoms: tuple[EnvAtom, ...]
    nu: float
    gamma: float

    @property
    def E_log_gprime(self) -> float:
        if any(a.mean == 0 for a in self.atoms):
            return -math.inf
        return math.fsum(a.weight * math.log(a.mean) for a in self.atoms)

    @property
    def E_gprime_log_gprime(self) -> float:
        return math.fsum(a.weight * laws.xlogx(a.mean) for a in self.atoms)

    @property
    def mean_of_means(self) -> float:
        return math.fsum(a.weight * a.mean for a in self.atoms)

    def phi(self, theta: float) -> float:
        """sum_w m^theta with 0^0 = 1 and 0^theta = 0 for theta > 0."""
        if theta == 0:
            return math.fsum(a.weight for a in self.atoms)
        return math.fsum(a.weight * a.mean**theta for a in self.atoms if a.mean > 0)

    def _phi_plus(self, theta: float) -> float:
        # right-continuous extension at 0: zero-mean atoms dropped
        return math.fsum(a.weight * a.mean**theta for a in self.atoms if a.mean > 0)

    def _dphi(self, theta: float) -> float:
        return math.fsum(
            a.weight * a.mean**theta * math.log(a.mean) for a in self.atoms if a.mean > 0
        )


def abpre_env(spec: ModelSpec) -> AbpreEnv:
    """Environment of parasites along a uniformly chosen cell line.

    Each ordered pair (j, k) with p_k > 0 gets weight p_k / nu.
    """
    mom = compute_moments(spec)
    if mom.nu <= 0:
        raise AnalysisError("environment undefined: nu = 0 (cells never divide)")
    atoms = []
    for k in spec.positive_k:
        w = spec.cell_law.p(k) / mom.nu
        ker = spec.kernel(k)
        for j in range(1, k + 1):
            law = ker.component_law(j)
            atoms.append(
                EnvAtom(
                    j=j,
                    k=k,
                    weight=w,
                    mean=mom.mu[(j, k)],
                    q=law.get(0, 0.0),
                    law=tuple(sorted(law.items())),
                )
            )
    return AbpreEnv(tuple(atoms), mom.nu, mom.gamma)


# ------------------------------------------------------------------------ rho


@dataclass(frozen=True)
class RhoResult:
    rho_numeric: float
    theta_star: float
    rho_closed_form: Optional[float]
    branch: int  # 1, 2 or 3 (interior minimum, no closed form used)
    third_branch_value: float  # min(1, gamma/nu), reported for comparison only
    iterations: int


def golden_section(f, lo: float, hi: float, *, tol=GOLDEN_TOL, max_iter=GOLDEN_MAX_ITER, df=None):
    """Minimize a convex ``f`` on [lo, hi]; returns (x, f(x), iterations)."""
    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while it < max_iter and b - a > tol:
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
        if df is not None and abs(df(0.5 * (a + b))) <= tol:
            break
    x = 0.5 * (a + b)
    return x, f(x), it


def rho(env: AbpreEnv) -> RhoResult:
    if all(a.mean == 0 for a in env.atoms):
        raise AnalysisError("degenerate environment: every atom has mean 0")
    x, fx, it = golden_section(env._phi_plus, 0.0, 1.0, df=env._dphi)
    # convexity puts boundary minima at the ends; check them explicitly
    candidates = [(env._phi_plus(1.0), 1.0), (fx, x), (env._phi_plus(0.0), 0.0)]
    best, theta = min(candidates, key=lambda t: t[0])
    elog = env.E_log_gprime
    emlogm = env.E_gprime_log_gprime
    if elog >= 0:
        branch, closed = 1, 1.0
        if env.phi(0.0) <= best + 1e-15:
            best, theta = env.phi(0.0), 0.0
    elif emlogm <= 0:
        branch, closed = 2, env.gamma / env.nu
    else:
        branch, closed = 3, None
    return RhoResult(
        rho_numeric=best,
        theta_star=theta,
        rho_closed_form=closed,
        branch=branch,
        third_branch_value=min(1.0, env.gamma / env.nu),
        iterations=it,
    )


def growth_rate_T(env: AbpreEnv, nu: float) -> float:
    """Exponential growth rate log(nu * rho) of the contaminated-cell count."""
    if nu <= 1:
        raise AnalysisError(f"growth rate needs nu > 1, got nu = {nu}")
    return math.log(nu * rho(env).rho_numeric)


# ------------------------------------------------------------ classifications


@dataclass(frozen=True)
class LClass:
    label: str  # "DegenerateZero" | "NondegenerateOnSurv"
    reasons: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"{self.label}({', '.join(self.reasons)})" if self.reasons else self.label


@dataclass(frozen=True)
class WClass:
    label: str  # "MeanOne" | "MeanZero"
    reasons: tuple[str, ...] = ()
    drift: float = 0.0
    zlogz_finite: bool = True

    def __str__(self) -> str:
        return f"{self.label}({', '.join(self.reasons)})" if self.reasons else self.label


def classify_L(spec: ModelSpec, moments: MomentTable, env: AbpreEnv) -> LClass:
    """Limit of T*_n / nu^n: identically zero, or positive exactly on survival."""
    reasons = []
    if moments.nu <= 1:
        reasons.append("nu_le_1")
    if not math.isfinite(moments.ENlogN):
        reasons.append("ENlogN_infinite")
    if env.E_log_gprime <= 0 or any(a.weight > 0 and a.q == 1.0 for a in env.atoms):
        reasons.append("abpre_condition")
    if reasons:
        return LClass("DegenerateZero", tuple(reasons))
    return LClass("NondegenerateOnSurv")


def w_drift(env: AbpreEnv) -> float:
    """sum_w (m/gamma) log(m/gamma) over the cell-line environment."""
    return math.fsum(a.weight * laws.xlogx(a.mean / env.gamma) for a in env.atoms)


def classify_W(moments: MomentTable, env: AbpreEnv) -> WClass:
    drift = w_drift(env)
    finite = math.isfinite(moments.z1logz1)
    reasons = []
    if not finite:
        reasons.append("zlogz_infinite")
    if not drift < 0:
        reasons.append("drift_nonneg")
    label = "MeanZero" if reasons else "MeanOne"
    return WClass(label, tuple(reasons), drift, finite)


@dataclass(frozen=True)
class AbpreiCriticality:
    E_log_ghat: float
    E_log_ghat_via_env: float
    criticality: str  # Subcritical | Critical | Supercritical
    abpre_subregime: str  # StronglySub | IntermediateSub | WeaklySub | NonSub
    correspondence_applies: bool
    consistent: bool


CORRESPONDENCE = {
    "Subcritical": ("StronglySub",),
    "Critical": ("IntermediateSub",),
    "Supercritical": ("WeaklySub", "NonSub"),
}


def _sign(x: float) -> int:
    return 0 if abs(x) <= ZERO_TOL else (1 if x > 0 else -1)


def abpre_subregime(env: AbpreEnv) -> str:
    if env.E_log_gprime >= 0:
        return "NonSub"
    return {-1: "StronglySub", 0: "IntermediateSub", 1: "WeaklySub"}[_sign(env.E_gprime_log_gprime)]


def abprei_criticality(spec: ModelSpec, env: AbpreEnv) -> AbpreiCriticality:
    """Mean log offspring mean of the spinal immigration process, two ways.

    Directly over the immigration atoms (weights p_k mu_jk / gamma, zero-mean
    atoms dropped), and as (nu/gamma) E[m log m] over the cell-line environment.
    """
    mom = compute_moments(spec)
    if mom.gamma <= 0:
        raise AnalysisError("gamma must be positive")
    direct = math.fsum(
        spec.cell_law.p(k) * m / mom.gamma * math.log(m)
        for (j, k), m in mom.mu.items()
        if m > 0
    )
    via_env = env.nu / env.gamma * env.E_gprime_log_gprime
    if abs(direct - via_env) > 1e-10:
        raise AnalysisError(f"immigration log-mean mismatch: {direct!r} vs {via_env!r}")
    crit = {-1: "Subcritical", 0: "Critical", 1: "Supercritical"}[_sign(direct)]
    sub = abpre_subregime(env)
    applies = any(abs(m - 1.0) > ZERO_TOL for m in mom.mu.values())
    consistent = (sub in CORRESPONDENCE[crit]) if applies else True
    return AbpreiCriticality(direct, via_env, crit, sub, applies, consistent)


# -------------------------------------------------------------------- norming


@dataclass(frozen=True)
class NormingSequence:
    a: float
    values: tuple[float, ...]

    @property
    def ratios(self) -> tuple[float, ...]:
        v = self.values
        return tuple(v[i + 1] / v[i] for i in range(len(v) - 1))

    def rows(self) -> list[tuple[int, float, Optional[float]]]:
        r = (None,) + self.ratios
        return [(i, c, r[i]) for i, c in enumerate(self.values)]


def heyde_seneta_norming(cell_law: CellOffspringLaw, a: float, n: int) -> NormingSequence:
    """c_0 = a, c_m = c_{m-1} * E[N 1{N <= c_{m-1}}] for m = 1..n."""
    if not a > 0:
        raise AnalysisError("a must be positive")
    if n < 0:
        raise AnalysisError("n must be >= 0")
    t = cell_law.truncated_mean(a)
    if t <= 1:
        raise AnalysisError(f"a too small: E[N 1{{N <= {a}}}] = {t:.6g} <= 1")
    vals = [float(a)]
    for _ in range(n):
        c = vals[-1]
        vals.append(c * cell_law.truncated_mean(c))
    return NormingSequence(float(a), tuple(vals))


# --------------------------------------------------------------------- report


@dataclass
class RegimeReport:
    name: str
    nu: float
    gamma: float
    mu: dict[str, float]
    z1logz1: float
    ENlogN: float
    E_log_gprime: float
    E_gprime_log_gprime: float
    rho_numeric: float
    rho_closed_form: Optional[float]
    theta_star: float
    rho_branch: int
    rho_third_branch_value: float
    growth_rate_T: Optional[float]
    L_class: str
    W_class: str
    W_drift: float
    E_log_ghat: float
    abprei_criticality: str
    abpre_subregime: str
    correspondence_applies: bool
    correspondence_consistent: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, float) and not math.isfinite(val):
                d[key] = str(val)
        return d


def analyze(spec: ModelSpec) -> RegimeReport:
    mom = compute_moments(spec)
    env = abpre_env(spec)
    r = rho(env)
    L = classify_L(spec, mom, env)
    W = classify_W(mom, env)
    crit = abprei_criticality(spec, env)
    notes = []
    if r.branch == 3:
        notes.append(
            "interior minimum: rho is the numeric infimum; "
            f"min(1, gamma/nu) = {r.third_branch_value:.6g} is not used"
        )
    if not crit.correspondence_applies:
        notes.append("every mu_jk equals 1: the immigration/cell-line correspondence is not asserted")
    if W.label == "MeanOne":
        notes.append("P(W > 0) = P(survival)")
    return RegimeReport(
        name=spec.name,
        nu=mom.nu,
        gamma=mom.gamma,
        mu={f"{j},{k}": m for (j, k), m in mom.mu.items()},
        z1logz1=mom.z1logz1,
        ENlogN=mom.ENlogN,
        E_log_gprime=env.E_log_gprime,
        E_gprime_log_gprime=env.E_gprime_log_gprime,
        rho_numeric=r.rho_numeric,
        rho_closed_form=r.rho_closed_form,
        theta_star=r.theta_star,
        rho_branch=r.branch,
        rho_third_branch_value=r.third_branch_value,
        growth_rate_T=math.log(mom.nu * r.rho_numeric) if mom.nu > 1 else None,
        L_class=str(L),
        W_class=str(W),
        W_drift=W.drift,
        E_log_ghat=crit.E_log_ghat,
        abprei_criticality=crit.criticality,
        abpre_subregime=crit.abpre_subregime,
        correspondence_applies=crit.correspondence_applies,
        correspondence_consistent=crit.consistent,
        notes=notes,
    )


__all__ = [
    "AbpreEnv",
    "AbpreiCriticality",
    "AnalysisError",
    "EnvAtom",
    "LClass",
    "ModelError",
    "NormingSequence",
    "RegimeReport",
    "RhoResult",
    "WClass",
    "abpre_env",
    "abprei_criticality",
    "analyze",
    "classify_L",
    "classify_W",
    "golden_section",
    "growth_rate_T",
    "heyde_seneta_norming",
    "rho",
    "w_drift",
]
