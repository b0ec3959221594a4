"""Random-intercept linear mixed model for absolute prediction errors.

Model, for instance j of patient i::

    Y_ij = b0_i + b1 V^W_ij + b2 T^W_ij + b3 R2_ij + b4 R3_ij + e_ij
    b0_i = g00 + g01 V^B_i + g02 T^B_i + g03 Edu_i + g04 Male_i + g05 Other_i + u_i
    e_ij ~ N(0, s2_e),  u_i ~ N(0, s2_u)

Visit number (V) and token count (T) are split into a patient mean
(between) and the deviation from it (within). Fitting profiles the residual
variance and the fixed effects out of the restricted likelihood, leaving a
one-dimensional search over the ratio psi = s2_u / s2_e.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyPatientGroup, NonConvergence, SingularDesign
from .transcript import Gender, Rater

WITHIN_COLUMNS = ("visit_within", "tokens_within", "rater_R2", "rater_R3")
BETWEEN_COLUMNS = ("visit_between", "tokens_between", "education", "male", "other_gender")
AGE_COLUMN = "age"
INTERCEPT = "intercept"

PSI_MIN = 1e-8
PSI_MAX = 1e4
_GRID_POINTS = 41
_GOLDEN_ITERS = 80
_BISECT_ITERS = 200
_LOG2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class ErrorObservation:
    patient_id: str
    y: float
    visit: int
    tokens: int
    rater: Rater
    education: int
    gender: Gender
    age: int = 0

    def __post_init__(self):
        if not self.y >= 0:
            raise ValueError("absolute error must be non-negative")


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    groups: tuple[str, ...]
    scales: dict[str, float] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def drop(self, names: Iterable[str]) -> "DesignMatrix":
        names = set(names)
        keep = [i for i, c in enumerate(self.columns) if c not in names]
        return DesignMatrix(
            self.X[:, keep], self.y, tuple(self.columns[i] for i in keep), self.groups,
            {c: s for c, s in self.scales.items() if c not in names},
        )


def decompose_within_between(
    obs: Sequence[ErrorObservation],
    include_age: bool = False,
) -> DesignMatrix:
    """Build the fixed-effect design with within/between splits and dummy codes.

    Rater dummies are coded against R1 and gender dummies against female.
    """
    if not obs:
        raise EmptyPatientGroup("no observations")
    by_patient: dict[str, list[int]] = {}
    for i, o in enumerate(obs):
        by_patient.setdefault(o.patient_id, []).append(i)
    n = len(obs)
    v = np.array([o.visit for o in obs], float)
    t = np.array([o.tokens for o in obs], float)
    v_b = np.empty(n)
    t_b = np.empty(n)
    for pid, rows in by_patient.items():
        if not rows:
            raise EmptyPatientGroup(pid)
        v_b[rows] = v[rows].mean()
        t_b[rows] = t[rows].mean()
    cols = {
        INTERCEPT: np.ones(n),
        "visit_within": v - v_b,
        "tokens_within": t - t_b,
        "rater_R2": np.array([o.rater is Rater.R2 for o in obs], float),
        "rater_R3": np.array([o.rater is Rater.R3 for o in obs], float),
        "visit_between": v_b,
        "tokens_between": t_b,
        "education": np.array([o.education for o in obs], float),
        "male": np.array([o.gender is Gender.MALE for o in obs], float),
        "other_gender": np.array([o.gender is Gender.OTHER for o in obs], float),
    }
    if include_age:
        cols[AGE_COLUMN] = np.array([o.age for o in obs], float)
    names = tuple(cols)
    return DesignMatrix(
        X=np.column_stack([cols[c] for c in names]),
        y=np.array([o.y for o in obs], float),
        columns=names,
        groups=tuple(o.patient_id for o in obs),
    )


def collinear_columns(X: np.ndarray, columns: Sequence[str]) -> list[str]:
    """Columns that add no rank when added left to right."""
    scaled = X / np.where(np.abs(X).max(axis=0) > 0, np.abs(X).max(axis=0), 1.0)
    bad, kept = [], []
    rank = 0
    for j, name in enumerate(columns):
        trial = scaled[:, kept + [j]]
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            kept.append(j)
            rank = r
        else:
            bad.append(name)
    return bad


def prune_design(dm: DesignMatrix) -> tuple[DesignMatrix, list[str]]:
    """Drop columns that make the design rank deficient (e.g. unused dummies)."""
    bad = collinear_columns(dm.X, dm.columns)
    return (dm.drop(bad), bad) if bad else (dm, [])


class _Profile:
    """Profiled (RE)ML pieces for a random-intercept model at a given psi."""

    def __init__(self, X: np.ndarray, y: np.ndarray, codes: np.ndarray, method: str):
        self.X, self.y, self.codes = X, y, codes
        self.N, self.p = X.shape
        self.m = int(codes.max()) + 1
        self.reml = method == "reml"
        self.n_i = np.bincount(codes, minlength=self.m).astype(float)
        self.Sx = np.zeros((self.m, self.p))
        np.add.at(self.Sx, codes, X)
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.sy = np.bincount(codes, weights=y, minlength=self.m)
        self.df = self.N - self.p if self.reml else self.N

    def solve(self, psi: float):
        c = psi / (1.0 + self.n_i * psi)
        A = self.XtX - self.Sx.T @ (c[:, None] * self.Sx)
        b = self.Xty - self.Sx.T @ (c * self.sy)
        L = np.linalg.cholesky(A)
        beta = np.linalg.solve(L.T, np.linalg.solve(L, b))
        r = self.y - self.X @ beta
        sr = np.bincount(self.codes, weights=r, minlength=self.m)
        Q = float(r @ r - np.sum(c * sr * sr))
        return A, L, beta, r, sr, Q

    def objective(self, psi: float) -> float:
        """Profiled log-likelihood up to the scale-dependent constant."""
        _, L, _, _, _, Q = self.solve(psi)
        val = self.df * math.log(Q / self.df) + float(np.sum(np.log1p(self.n_i * psi)))
        if self.reml:
            val += 2.0 * float(np.sum(np.log(np.diag(L))))
        return -0.5 * (val + self.df * (1.0 + _LOG2PI))

    def score(self, psi: float) -> float:
        """Derivative of :meth:`objective` with respect to psi."""
        A, L, _, _, sr, Q = self.solve(psi)
        d = 1.0 + self.n_i * psi
        s = sr / d
        val = float(np.sum(self.n_i / d)) - self.df * float(s @ s) / Q
        if self.reml:
            W = self.Sx / d[:, None]
            Ainv_Wt = np.linalg.solve(L.T, np.linalg.solve(L, W.T))
            val -= float(np.sum(W.T * Ainv_Wt))
        return -0.5 * val


@dataclass(frozen=True)
class MixedModelFit:
    columns: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    sigma_u2: float
    sigma_e2: float
    psi: float
    loglik: float
    method: str
    converged: bool
    n_obs: int
    n_groups: int
    group_labels: tuple[str, ...]
    random_effects: np.ndarray
    fitted_fixed: np.ndarray
    residuals: np.ndarray
    trace: tuple[float, ...] = ()
    message: str = ""

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.columns.index(name)])

    def table(self) -> list[dict]:
        return [
            {"predictor": c, "coef": float(b), "se": float(s), "z": float(z), "p": float(p)}
            for c, b, s, z, p in zip(self.columns, self.coef, self.se, self.z, self.p_values)
        ]

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "message": self.message,
            "n_obs": self.n_obs,
            "n_groups": self.n_groups,
            "sigma_u2": self.sigma_u2,
            "sigma_e2": self.sigma_e2,
            "psi": self.psi,
            "loglik": self.loglik,
            "coefficients": self.table(),
        }


def _golden_max(f, lo: float, hi: float, trace: list[float], best: list) -> tuple[float, float]:
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    x1, x2 = b - inv * (b - a), a + inv * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(_GOLDEN_ITERS):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv * (b - a)
            f2 = f(x2)
        for x, fx in ((x1, f1), (x2, f2)):
            if fx > best[1]:
                best[:] = [x, fx]
        trace.append(best[1])
        if b - a < 1e-12 * max(1.0, abs(a)):
            break
    return a, b


def _bisect_root(g, lo: float, hi: float) -> tuple[float, bool]:
    """Root of a decreasing score ``g`` on [lo, hi] with g(lo) > 0 > g(hi)."""
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid, True
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            return 0.5 * (lo + hi), True
    return 0.5 * (lo + hi), False


def fit_reml(
    X: np.ndarray | DesignMatrix,
    y: np.ndarray | None = None,
    groups: Sequence | None = None,
    columns: Sequence[str] | None = None,
    method: str = "reml",
) -> MixedModelFit:
    """Fit the random-intercept model by restricted (default) or full maximum likelihood."""
    if isinstance(X, DesignMatrix):
        dm = X
        X, y = dm.X, dm.y if y is None else y
        groups = dm.groups if groups is None else groups
        columns = dm.columns if columns is None else columns
    if method not in ("reml", "ml"):
        raise ValueError("method must be 'reml' or 'ml'")
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    N, p = X.shape
    columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(p))
    labels, codes = np.unique(np.asarray([str(g) for g in groups]), return_inverse=True)
    if len(y) != N or len(codes) != N:
        raise ValueError("X, y and groups must have the same number of rows")
    if N <= p:
        raise ValueError(f"need more observations ({N}) than fixed-effect columns ({p})")
    if len(labels) < 2:
        raise ValueError("need at least 2 patients")
    bad = collinear_columns(X, columns)
    if bad:
        raise SingularDesign(bad)

    scale = np.sqrt(np.mean(X * X, axis=0))
    scale[scale == 0] = 1.0
    prof = _Profile(X / scale, y, codes, method)

    trace: list[float] = []
    best = [math.nan, -math.inf]

    def f(t: float) -> float:
        return prof.objective(math.exp(t))

    grid = np.linspace(math.log(PSI_MIN), math.log(PSI_MAX), _GRID_POINTS)
    values = []
    for t in grid:
        val = f(t)
        values.append(val)
        if val > best[1]:
            best[:] = [t, val]
        trace.append(best[1])
    if not np.all(np.isfinite(values)):
        raise NonConvergence("objective is not finite on the search grid")
    k = int(np.argmax(values))
    converged, message = True, "interior optimum"

    if k == 0 and prof.score(0.0) <= 0:
        psi = 0.0
        at_zero = prof.objective(0.0)
        if at_zero >= best[1]:
            best[:] = [-math.inf, at_zero]
        trace.append(best[1])
        message = "boundary optimum (psi = 0)"
    elif k == len(grid) - 1 and prof.score(PSI_MAX) > 0:
        psi = PSI_MAX
        converged, message = False, "variance ratio reached the upper search bound"
    else:
        lo_t = grid[max(k - 1, 0)] if k > 0 else None
        hi_t = grid[min(k + 1, len(grid) - 1)]
        if lo_t is None:
            a, b = 0.0, math.exp(hi_t)
        else:
            a, b = (math.exp(x) for x in _golden_max(f, lo_t, hi_t, trace, best))
            a, b = min(a, math.exp(best[0])), max(b, math.exp(best[0]))
            # widen to a sign change of the score
            while prof.score(a) <= 0 and a > PSI_MIN:
                a = max(a / 4, PSI_MIN)
            while prof.score(b) >= 0 and b < PSI_MAX:
                b = min(b * 4, PSI_MAX)
        if prof.score(a) > 0 > prof.score(b):
            psi, ok = _bisect_root(prof.score, a, b)
            if not ok:
                raise NonConvergence("score root search hit its iteration cap")
        else:
            psi = math.exp(best[0])
            message = "golden-section optimum (score bracket unavailable)"
        val = prof.objective(psi)
        if val >= best[1]:
            best[:] = [math.log(psi) if psi > 0 else -math.inf, val]
        trace.append(best[1])

    A, L, beta_s, r, sr, Q = prof.solve(psi)
    sigma_e2 = Q / prof.df
    Ainv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(p)))
    cov_s = sigma_e2 * Ainv
    beta = beta_s / scale
    se = np.sqrt(np.diag(cov_s)) / scale
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, 0.0)
    pvals = np.array([math.erfc(abs(v) / math.sqrt(2)) for v in z])
    loglik = prof.objective(psi)
    if prof.reml:
        loglik -= float(np.sum(np.log(scale)))
    c = psi / (1.0 + prof.n_i * psi)
    u = c * sr
    fixed = X @ beta
    return MixedModelFit(
        columns=columns,
        coef=beta,
        se=se,
        z=z,
        p_values=pvals,
        sigma_u2=psi * sigma_e2,
        sigma_e2=sigma_e2,
        psi=psi,
        loglik=loglik,
        method=method,
        converged=converged,
        n_obs=N,
        n_groups=len(labels),
        group_labels=tuple(str(s) for s in labels),
        random_effects=u,
        fitted_fixed=fixed,
        residuals=y - fixed - u[codes],
        trace=tuple(trace),
        message=message,
    )


def significant_effects(fit: MixedModelFit, alpha: float = 0.05) -> list[tuple[str, float]]:
    """Predictors (intercept excluded) whose Wald p-value is below ``alpha``."""
    return [
        (c, float(b))
        for c, b, p in zip(fit.columns, fit.coef, fit.p_values)
        if c != INTERCEPT and p < alpha
    ]


@dataclass
class ErrorModelResult:
    target: str
    fit: MixedModelFit | None
    dropped: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None and self.fit.converged


def analyze_errors(
    observations: Mapping[str, Sequence[ErrorObservation]],
    include_age: bool = False,
    method: str = "reml",
) -> dict[str, ErrorModelResult]:
    """Fit one model per target, dropping rank-deficient columns and noting them."""
    out: dict[str, ErrorModelResult] = {}
    for target, obs in observations.items():
        try:
            dm = decompose_within_between(obs, include_age)
            dm, dropped = prune_design(dm)
            fit = fit_reml(dm, method=method)
            out[target] = ErrorModelResult(target, fit, dropped)
            if not fit.converged:
                out[target].error = f"NonConvergence: {fit.message}"
        except (SingularDesign, NonConvergence, EmptyPatientGroup, ValueError, np.linalg.LinAlgError) as exc:
            out[target] = ErrorModelResult(target, None, [], f"{type(exc).__name__}: {exc}")
    return out


def observations_from_runset(corpus, runset, target: str) -> list[ErrorObservation]:
    """One observation per interview: absolute error averaged over successful runs."""
    from .catalog import MadrsItem
    from .metrics import TOTAL

    obs = []
    for iid in runset.interview_ids:
        t = corpus[iid]
        errs = []
        for r in runset.run_indices:
            run = runset.runs.get((iid, r))
            if run is None:
                continue
            if target == TOTAL:
                v, ref = run.total, t.clinician_total
            else:
                v, ref = run.score(MadrsItem(target)), t.clinician_scores[MadrsItem(target)]
            if v is not None:
                errs.append(abs(v - ref))
        if not errs:
            continue
        m = t.meta
        obs.append(ErrorObservation(
            patient_id=m.patient_id,
            y=sum(errs) / len(errs),
            visit=m.visit_number,
            tokens=t.token_count,
            rater=m.rater_id,
            education=m.patient_education,
            gender=m.patient_gender,
            age=m.patient_age,
        ))
    return obs
