"""Numerical checks of the ensemble bias/variance results.

Exact identities are evaluated directly; distributional claims are checked
by seeded Monte-Carlo with tolerances expressed in standard errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


class TheoryInputError(ValueError):
    pass


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


@dataclass
class CheckReport:
    name: str
    inputs: dict
    estimates: dict
    bounds: dict = field(default_factory=dict)
    standard_errors: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)  # sub-check name -> bool

    def __post_init__(self):
        self.checks = {k: bool(v) for k, v in self.checks.items()}

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_default)


# -- bias / variance identity -------------------------------------------------


@dataclass
class BiasVariance:
    variance: float
    bias_squared: float
    lhs: float  # Var + Bias^2 + sigma^2
    rhs: float  # E[(Yhat - Y)^2] + 2 E[eps (Yhat - Ycal)]
    standard_error: float


def bias_variance_decompose(
    y_hat: np.ndarray,
    y_true: float,
    noise_sigma2: float,
    noise: np.ndarray | None = None,
    seed: int = 0,
) -> BiasVariance:
    """Both sides of  Var + Bias^2 + sigma^2 = E[(Yhat - Y)^2] + 2 E[eps (Yhat - Ycal)].

    ``noise`` holds the observation noise paired with each estimate
    (Y = y_true + noise); it is drawn from N(0, noise_sigma2) when omitted.
    The sides differ by mean(noise**2) - sigma^2, whose standard error is
    reported.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    n = y_hat.size
    if n < 2:
        raise TheoryInputError("need at least 2 samples")
    if noise is None:
        noise = np.random.default_rng(seed).normal(0.0, math.sqrt(noise_sigma2), n)
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    if noise.size != n:
        raise TheoryInputError("noise and estimates differ in length")
    var = float(np.var(y_hat))
    bias2 = float((y_hat.mean() - y_true) ** 2)
    y = y_true + noise
    rhs = float(np.mean((y_hat - y) ** 2) + 2.0 * np.mean(noise * (y_hat - y_true)))
    se = float(np.std(noise**2) / math.sqrt(n)) if noise_sigma2 > 0 else 0.0
    return BiasVariance(var, bias2, var + bias2 + noise_sigma2, rhs, se)


# -- exact ensemble identities ------------------------------------------------


def ambiguity_identity_residual(y: float, preds, weights) -> tuple[float, float]:
    """|(y - f)^2 - [sum a (y - g)^2 - sum a (f - g)^2]| and the ambiguity term.

    ``f = sum a g`` with non-negative weights summing to one.
    """
    g = np.asarray(preds, dtype=np.float64).reshape(-1)
    a = np.asarray(weights, dtype=np.float64).reshape(-1)
    if g.shape != a.shape:
        raise TheoryInputError("preds and weights differ in length")
    if np.any(a < 0):
        raise TheoryInputError("weights must be non-negative")
    if abs(a.sum() - 1.0) > 1e-12:
        raise TheoryInputError(f"weights must sum to 1, got {a.sum()!r}")
    f = float(a @ g)
    ambiguity = float(a @ (f - g) ** 2)
    rhs = float(a @ (y - g) ** 2) - ambiguity
    return abs((y - f) ** 2 - rhs), ambiguity


def alternating_signs(L: int) -> np.ndarray:
    """Sign of learner l = 1..L in the alternating sum: (-1)**(L - l)."""
    return np.array([(-1.0) ** (L - l) for l in range(1, L + 1)])


def alternating_identity_residual(y: float, preds, weights, L: int | None = None) -> float:
    """Decomposition residual for the alternating-sign ensemble.

    Learner l (1-based) enters with signed weight ``w_l = (-1)**(L - l) a_l``,
    i.e. odd learners carry +i and even learners -i with i = +1 for odd L and
    -1 for even L.  The weights must satisfy ``sum w_l = 1``.  Returns
    ``|(y - f)^2 - [sum w (y - g)^2 - sum w (f - g)^2]|`` with ``f = sum w g``.
    """
    g = np.asarray(preds, dtype=np.float64).reshape(-1)
    a = np.asarray(weights, dtype=np.float64).reshape(-1)
    L = g.size if L is None else L
    if g.size != L or a.size != L:
        raise TheoryInputError(f"expected {L} predictions and weights")
    w = alternating_signs(L) * a
    if abs(w.sum() - 1.0) > 1e-12:
        raise TheoryInputError(f"alternating weights must sum to 1, got {w.sum()!r}")
    f = float(w @ g)
    rhs = float(w @ (y - g) ** 2 - w @ (f - g) ** 2)
    return abs((y - f) ** 2 - rhs)


# -- averaging ensembles -------------------------------------------------------


@dataclass
class EnsembleBiasVar:
    bias_ratio: float
    var_ratio: float
    single_bias: float
    ensemble_bias: float
    single_var: float
    ensemble_var: float
    var_ratio_se: float
    bias_ratio_se: float


def ensemble_bias_var(
    n_members: int,
    mean: float = 1.0,
    std: float = 1.0,
    y_true: float = 0.0,
    trials: int = 100_000,
    seed: int = 0,
    distribution: str = "normal",
) -> EnsembleBiasVar:
    """Compare one draw against the mean of ``n_members`` i.i.d. draws.

    The single estimator is the first member of each trial, so N = 1 gives a
    ratio of exactly one.
    """
    if n_members < 1:
        raise TheoryInputError("ensemble size must be >= 1")
    if trials < 10_000:
        raise TheoryInputError("need at least 10^4 trials")
    rng = np.random.default_rng(seed)
    if distribution == "normal":
        draws = rng.normal(mean, std, size=(trials, n_members))
    elif distribution == "exponential":
        draws = mean - std + rng.exponential(std, size=(trials, n_members))
    else:
        raise TheoryInputError(f"unknown distribution {distribution!r}")
    single = draws[:, 0]
    ens = draws.mean(axis=1) if n_members > 1 else single
    b1, bN = single.mean() - y_true, ens.mean() - y_true
    v1, vN = single.var(ddof=1), ens.var(ddof=1)
    var_ratio = float(vN / v1)
    # treat the two variance estimates as independent: conservative when they correlate
    var_se = var_ratio * math.sqrt(4.0 / (trials - 1)) if n_members > 1 else 0.0
    bias_ratio = float(bN / b1) if b1 != 0 else float("nan")
    bias_se = (
        abs(bias_ratio) * math.sqrt(v1 / trials / b1**2 + vN / trials / bN**2) if n_members > 1 and b1 else 0.0
    )
    return EnsembleBiasVar(bias_ratio, var_ratio, float(b1), float(bN), float(v1), float(vN), var_se, bias_se)


# -- covariate shift -----------------------------------------------------------


@dataclass
class DriftScenario:
    sigma2: float
    sigma_t2: float
    L: int
    alpha_l: float
    samples: int = 100_000

    def __post_init__(self):
        if self.sigma2 <= 0 or self.sigma_t2 <= 0:
            raise TheoryInputError("variances must be positive")
        if self.L < 1:
            raise TheoryInputError("L must be >= 1")

    @property
    def c2(self) -> float:
        return self.sigma_t2 / self.sigma2


def mse_gap(L: int, alpha_l: float, c2: float, sigma_t2: float) -> float:
    """Closed-form single-minus-ensemble MSE gap ((L-1)(1-alpha)/L) c^2 sigma_t^2."""
    if L < 1:
        raise TheoryInputError("L must be >= 1")
    if not 0.0 <= alpha_l <= 1.0:
        raise TheoryInputError("alpha_l must lie in [0, 1]")
    if c2 < 0 or sigma_t2 < 0:
        raise TheoryInputError("c2 and sigma_t2 must be non-negative")
    return (L - 1) * (1.0 - alpha_l) / L * c2 * sigma_t2


@dataclass
class DriftSimulation:
    single_mse: float
    ensemble_mse: float
    gap: float
    predicted_gap: float
    gap_se: float


def mse_gap_simulation(scenario: DriftScenario, seed: int = 0) -> DriftSimulation:
    """Unbiased learners whose errors have variance c^2 sigma^2 and pairwise correlation alpha_l.

    Observation noise N(0, sigma^2) is shared by single model and ensemble.
    The predicted gap is the variance difference
    ``c^2 sigma^2 - (1 + (L-1) alpha_l) / L * c^2 sigma^2``.
    """
    L, rho = scenario.L, scenario.alpha_l
    if not 0.0 <= rho <= 1.0:
        raise TheoryInputError("correlation alpha_l must lie in [0, 1]")
    v = scenario.c2 * scenario.sigma2
    cov = v * (rho * np.ones((L, L)) + (1.0 - rho) * np.eye(L))
    rng = np.random.default_rng(seed)
    errors = rng.multivariate_normal(np.zeros(L), cov, size=scenario.samples, method="cholesky")
    noise = rng.normal(0.0, math.sqrt(scenario.sigma2), scenario.samples)
    single = (errors[:, 0] - noise) ** 2
    ens = (errors.mean(axis=1) - noise) ** 2
    diff = single - ens
    predicted = v - (1.0 + (L - 1) * rho) / L * v
    return DriftSimulation(
        float(single.mean()), float(ens.mean()), float(diff.mean()), predicted,
        float(diff.std(ddof=1) / math.sqrt(scenario.samples)),
    )


# -- alternating-sum block variance ------------------------------------------


@dataclass
class EnsembleSimConfig:
    L: int
    alpha: float = 1.0
    nu: float = 1.0
    mu: float = 0.0
    trials: int = 1_000_000
    agg: str = "alternating_subtract"
    seed: int = 0

    def __post_init__(self):
        if self.L < 2:
            raise TheoryInputError("L must be >= 2 (the 1/floor(L/2) normalization is undefined for L = 1)")
        if self.nu <= 0:
            raise TheoryInputError("nu must be > 0")
        if self.mu > self.nu or self.mu < -self.nu / (self.L - 1):
            raise TheoryInputError(
                f"covariance with variance {self.nu} and covariance {self.mu} is not positive semidefinite "
                f"(need {-self.nu / (self.L - 1)} <= mu <= {self.nu})"
            )
        if self.agg not in ("alternating_subtract", "add"):
            raise TheoryInputError(f"unknown aggregation {self.agg!r}")
        if self.trials < 2:
            raise TheoryInputError("need at least 2 trials")

    @property
    def hbar(self) -> int:
        return self.L // 2


@dataclass
class BlockVariance:
    empirical_var: float
    empirical_se: float
    exact_var: float  # from the stated covariance structure
    proof_chain_value: float  # (2/h) a^2 nu + (2(h-1)/h - 1) a^2 mu
    subtract_bound: float  # (4/L) a^2 (nu + mu)
    add_formula: float  # (4/L) a^2 nu + 3 a^2 mu
    alternating_var: float  # paired draws
    add_var: float  # paired draws


def _weights(cfg: EnsembleSimConfig, agg: str) -> np.ndarray:
    s = alternating_signs(cfg.L) if agg == "alternating_subtract" else np.ones(cfg.L)
    return s * cfg.alpha / cfg.hbar


def block_variance_sim(cfg: EnsembleSimConfig, chunk: int = 200_000) -> BlockVariance:
    """Variance of (1/h)(sum a g_odd - sum a g_even) for jointly Gaussian block estimates.

    Var(g_l) = nu and Cov(g_l, g_k) = mu.  Alternating and additive estimators
    are formed from the same draws, so their comparison is paired.
    """
    L = cfg.L
    cov = cfg.mu * np.ones((L, L)) + (cfg.nu - cfg.mu) * np.eye(L)
    # eigh-based factor tolerates singular (mu == nu) covariance
    evals, evecs = np.linalg.eigh(cov)
    factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
    w_main = _weights(cfg, cfg.agg)
    w_alt, w_add = _weights(cfg, "alternating_subtract"), _weights(cfg, "add")
    rng = np.random.default_rng(cfg.seed)
    sums = np.zeros(3)
    sq = np.zeros(3)
    fourth = 0.0
    done = 0
    while done < cfg.trials:
        n = min(chunk, cfg.trials - done)
        g = rng.standard_normal((n, L)) @ factor.T
        est = np.stack([g @ w_main, g @ w_alt, g @ w_add], axis=1)
        sums += est.sum(axis=0)
        sq += (est**2).sum(axis=0)
        fourth += float((est[:, 0] ** 4).sum())
        done += n
    m = sums / done
    var = sq / done - m**2
    # SE of a variance estimate for a zero-mean Gaussian: sqrt((E[x^4] - var^2) / n)
    se = math.sqrt(max(fourth / done - (sq[0] / done) ** 2, 0.0) / done)
    h, a2 = cfg.hbar, cfg.alpha**2
    return BlockVariance(
        empirical_var=float(var[0]),
        empirical_se=se,
        exact_var=float(w_main @ cov @ w_main),
        proof_chain_value=(2.0 / h) * a2 * cfg.nu + (2.0 * (h - 1) / h - 1.0) * a2 * cfg.mu,
        subtract_bound=4.0 / L * a2 * (cfg.nu + cfg.mu),
        add_formula=4.0 / L * a2 * cfg.nu + 3.0 * a2 * cfg.mu,
        alternating_var=float(var[1]),
        add_var=float(var[2]),
    )


# -- check runners (one JSON report each) ---------------------------------------

CHECKS = ("eq1", "th1", "th1_5", "eq6", "eq9", "th2")


def check_bias_variance(trials: int = 100_000, y_true: float = 1.0, bias: float = 0.3, v: float = 2.0,
                        noise_sigma2: float = 0.5, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    y_hat = rng.normal(y_true + bias, math.sqrt(v), trials)
    bv = bias_variance_decompose(y_hat, y_true, noise_sigma2, seed=seed + 1)
    gap = abs(bv.lhs - bv.rhs)
    # the variance estimate itself has relative SE sqrt(2/n)
    return CheckReport(
        "eq1",
        {"trials": trials, "y_true": y_true, "bias": bias, "variance": v, "noise_sigma2": noise_sigma2, "seed": seed},
        {"variance": bv.variance, "bias_squared": bv.bias_squared, "lhs": bv.lhs, "rhs": bv.rhs, "gap": gap},
        standard_errors={"gap": bv.standard_error},
        checks={
            "lhs_equals_rhs_within_3se": gap <= 3 * bv.standard_error + 1e-12,
            "variance_within_3pct": abs(bv.variance - v) <= 0.03 * v,
        },
    )


def check_ensemble(n_members: int = 4, trials: int = 100_000, seed: int = 0, tol: float = 0.02) -> CheckReport:
    r = ensemble_bias_var(n_members, mean=1.0, std=1.0, y_true=0.0, trials=trials, seed=seed)
    return CheckReport(
        "th1",
        {"N": n_members, "trials": trials, "seed": seed, "mean": 1.0, "std": 1.0, "y_true": 0.0},
        {"var_ratio": r.var_ratio, "bias_ratio": r.bias_ratio, "single_var": r.single_var,
         "ensemble_var": r.ensemble_var, "single_bias": r.single_bias, "ensemble_bias": r.ensemble_bias},
        bounds={"var_ratio_expected": 1.0 / n_members, "tolerance": tol},
        standard_errors={"var_ratio": r.var_ratio_se, "bias_ratio": r.bias_ratio_se},
        checks={
            "var_ratio_near_1_over_N": abs(r.var_ratio - 1.0 / n_members) <= tol,
            "bias_ratio_near_1": abs(r.bias_ratio - 1.0) <= tol,
            "var_not_increased": r.var_ratio <= 1.0 + 3 * r.var_ratio_se,
        },
    )


def check_drift(L: int = 2, alpha_l: float = 0.5, sigma2: float = 1.0, sigma_t2: float = 1.0,
                trials: int = 100_000, seed: int = 0) -> CheckReport:
    sc = DriftScenario(sigma2, sigma_t2, L, alpha_l, trials)
    gap = mse_gap(L, alpha_l, sc.c2, sigma_t2)
    sim = mse_gap_simulation(sc, seed)
    grid = [
        mse_gap(l, a, c2, s)
        for l in (1, 2, 3, 5, 8, 13, 21, 34, 55, 100)
        for a in np.linspace(0.0, 1.0, 10)
        for c2 in (0.1, 0.5, 1.0, 2.0, 4.0)
        for s in (0.1, 1.0)
    ]
    return CheckReport(
        "th1_5",
        {"L": L, "alpha_l": alpha_l, "sigma2": sigma2, "sigma_t2": sigma_t2, "c2": sc.c2, "trials": trials, "seed": seed},
        {"closed_form_gap": gap, "simulated_gap": sim.gap, "simulated_gap_expected": sim.predicted_gap,
         "single_mse": sim.single_mse, "ensemble_mse": sim.ensemble_mse, "grid_points": len(grid),
         "grid_min_gap": min(grid)},
        standard_errors={"simulated_gap": sim.gap_se},
        checks={
            "closed_form_non_negative": gap >= 0.0,
            "grid_non_negative": min(grid) >= 0.0,
            "simulation_matches_within_3se": abs(sim.gap - sim.predicted_gap) <= 3 * sim.gap_se + 1e-12,
            "ensemble_not_worse": sim.gap >= -3 * sim.gap_se,
        },
    )


def check_ambiguity(trials: int = 10_000, seed: int = 0, max_L: int = 8) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst, min_amb = 0.0, float("inf")
    for _ in range(trials):
        L = int(rng.integers(1, max_L + 1))
        w = rng.random(L)
        w /= w.sum()
        w[-1] = 1.0 - w[:-1].sum()  # exact unit sum in floating point
        if w[-1] < 0:
            w[-1] = 0.0
            w /= w.sum()
        res, amb = ambiguity_identity_residual(float(rng.normal()), rng.normal(size=L), w)
        worst, min_amb = max(worst, res), min(min_amb, amb)
    return CheckReport(
        "eq6", {"trials": trials, "seed": seed, "max_L": max_L},
        {"max_residual": worst, "min_ambiguity": min_amb}, bounds={"residual": 1e-12},
        checks={"residual_below_1e-12": worst < 1e-12, "ambiguity_non_negative": min_amb >= 0.0},
    )


def check_alternating(trials: int = 10_000, seed: int = 0, max_L: int = 8) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        L = int(rng.integers(1, max_L + 1))
        s = alternating_signs(L)
        a = rng.random(L)
        # the last learner always carries sign +1; solve for it
        a[-1] = 1.0 - float(s[:-1] @ a[:-1])
        worst = max(worst, alternating_identity_residual(float(rng.normal()), rng.normal(size=L), a, L))
    return CheckReport(
        "eq9", {"trials": trials, "seed": seed, "max_L": max_L},
        {"max_residual": worst}, bounds={"residual": 1e-12},
        checks={"residual_below_1e-12": worst < 1e-12},
    )


def check_block_variance(L: int = 2, alpha: float = 1.0, nu: float = 1.0, mu: float = 0.5,
                         trials: int = 1_000_000, seed: int = 0) -> CheckReport:
    cfg = EnsembleSimConfig(L, alpha, nu, mu, trials, seed=seed)
    r = block_variance_sim(cfg)
    se = r.empirical_se
    checks = {
        "matches_exact_variance_within_3se": abs(r.empirical_var - r.exact_var) <= 3 * se + 1e-12,
        "ordering_empirical_lt_bound_lt_add": r.empirical_var < r.subtract_bound < r.add_formula,
    }
    if mu > 0:
        checks["alternating_lt_add_paired"] = r.alternating_var < r.add_var
    return CheckReport(
        "th2",
        {"L": L, "alpha": alpha, "nu": nu, "mu": mu, "trials": trials, "seed": seed, "hbar": cfg.hbar},
        {"empirical_var": r.empirical_var, "exact_var": r.exact_var, "proof_chain_value": r.proof_chain_value,
         "proof_chain_within_3se": bool(abs(r.empirical_var - r.proof_chain_value) <= 3 * se),
         "alternating_var": r.alternating_var, "add_var": r.add_var},
        bounds={"subtract_bound": r.subtract_bound, "add_formula": r.add_formula},
        standard_errors={"empirical_var": se},
        checks=checks,
    )


def run_check(name: str, trials: int | None = None, seed: int = 0, **kw) -> CheckReport:
    """Run one named check; ``None`` options fall back to that check's defaults."""
    kw = {k: v for k, v in kw.items() if v is not None}
    if trials is not None:
        kw["trials"] = trials
    runners = {
        "eq1": (check_bias_variance, ()),
        "th1": (check_ensemble, ("N",)),
        "th1_5": (check_drift, ("L", "alpha", "sigma2", "sigma_t2")),
        "eq6": (check_ambiguity, ()),
        "eq9": (check_alternating, ()),
        "th2": (check_block_variance, ("L", "alpha", "nu", "mu")),
    }
    if name not in runners:
        raise TheoryInputError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
    fn, accepted = runners[name]
    rename = {"N": "n_members", "alpha": "alpha_l" if name == "th1_5" else "alpha"}
    args = {rename.get(k, k): v for k, v in kw.items() if k in accepted or k == "trials"}
    return fn(seed=seed, **args)
