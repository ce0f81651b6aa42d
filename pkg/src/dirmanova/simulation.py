"""Monte Carlo engine for empirical-size experiments.

Each replicate is a pure function of (seed, replicate index): the stream is
derived from a counter-based generator keyed by both, so campaigns are
reproducible bit-for-bit regardless of worker count or scheduling, and
aggregation is a plain merge of per-replicate records ordered by index.
Per-replicate method failures are recorded by error class and never abort
the campaign.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.stats import kstest

from .core import GroupedSample, chol_factor, summarize
from .exceptions import DataError, DirManovaError
from .heteroscedastic import (
    behrens_fisher,
    directional_p_hetero,
    fit_heteroscedastic,
    lrt_hetero,
    skovgaard_hetero,
)
from .homoscedastic import (
    bartlett,
    clt_test,
    directional_p,
    fit_homoscedastic,
    hotelling,
    lrt,
)
from .homoscedastic import skovgaard as skovgaard_homo

__all__ = [
    "CovarianceSpec",
    "GeneratorSpec",
    "SimulationConfig",
    "MethodSummary",
    "EmpiricalSizeReport",
    "replicate_stream",
    "generate_replicate",
    "run_empirical_size",
    "uniformity_diagnostics",
]

HOMOSCEDASTIC_METHODS = ("DT", "CLT", "LRT", "BC", "Sko1", "Sko2", "Hotelling")
HETEROSCEDASTIC_METHODS = ("DT", "LRT", "Sko1", "Sko2", "BF")
TWO_GROUP_METHODS = ("Hotelling", "BF")
FAMILIES = ("normal", "student_t", "skew_normal", "laplace")


def ar1_matrix(p: int, rho: float) -> np.ndarray:
    """Autoregressive covariance rho^|j-l|."""
    if not -1.0 < rho < 1.0:
        raise DataError(f"ar1 correlation must lie in (-1, 1), got {rho}")
    idx = np.arange(p)
    return rho ** np.abs(np.subtract.outer(idx, idx)).astype(float)


def compound_symmetry_matrix(p: int, rho: float) -> np.ndarray:
    """Compound-symmetric covariance (1 - rho) I + rho 1 1'."""
    lower = -1.0 / (p - 1) if p > 1 else -np.inf
    if not lower < rho < 1.0:
        raise DataError(
            f"compound-symmetry correlation must lie in ({lower:.4g}, 1), got {rho}"
        )
    return (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))


def spaced_correlations(g: int) -> np.ndarray:
    """Equally spaced per-group correlations from 0.1 to 0.9."""
    return np.linspace(0.1, 0.9, g)


@dataclass(frozen=True)
class CovarianceSpec:
    """Per-group covariance structure for the normal generator.

    ``rho`` may be a single value shared by all groups, a per-group
    sequence, or the string ``"spaced"`` for the equally spaced 0.1..0.9
    ladder.  ``explicit`` takes a fixed matrix used by every group.
    """

    kind: str = "identity"  # identity | ar1 | compound_symmetry | explicit
    rho: float | tuple[float, ...] | str | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "ar1", "compound_symmetry", "explicit"):
            raise DataError(f"unknown covariance kind {self.kind!r}")
        if self.kind == "explicit":
            if self.matrix is None:
                raise DataError("explicit covariance requires a matrix")
            object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        elif self.kind != "identity" and self.rho is None:
            raise DataError(f"covariance kind {self.kind!r} requires rho")

    def group_correlations(self, g: int) -> np.ndarray:
        if isinstance(self.rho, str):
            if self.rho != "spaced":
                raise DataError(f"unknown rho specifier {self.rho!r}")
            return spaced_correlations(g)
        if np.ndim(self.rho) == 0:
            return np.full(g, float(self.rho))
        rhos = np.asarray(self.rho, dtype=float)
        if rhos.shape != (g,):
            raise DataError(f"need {g} per-group correlations, got {rhos.shape}")
        return rhos

    def materialize(self, p: int, g: int) -> list[np.ndarray]:
        """One covariance matrix per group."""
        if self.kind == "identity":
            return [np.eye(p)] * g
        if self.kind == "explicit":
            if self.matrix.shape != (p, p):
                raise DataError(
                    f"explicit covariance has shape {self.matrix.shape}, expected {(p, p)}"
                )
            return [self.matrix] * g
        maker = ar1_matrix if self.kind == "ar1" else compound_symmetry_matrix
        return [maker(p, rho) for rho in self.group_correlations(g)]


@dataclass(frozen=True)
class GeneratorSpec:
    """Data-generating process for one replicate.

    ``covariance`` applies to the normal family (and scales the elliptical
    student_t).  ``means`` is a (p,) vector shared by all groups or a (g, p)
    array; None selects the family's default location (0 for normal and
    student_t, 1 for skew_normal and laplace).  The skew_normal family is
    the direct parameterization with scale omega_jl = 0.2^|j-l| and slant
    ``shape`` in every coordinate, sampled through its additive
    representation; laplace scales a unit normal by the square root of a
    unit-rate exponential, giving identity covariance.
    """

    family: str = "normal"
    covariance: CovarianceSpec = field(default_factory=CovarianceSpec)
    means: np.ndarray | None = None
    df: float = 5.0
    shape: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown generator family {self.family!r}")
        if self.family == "student_t" and self.df <= 2:
            raise DataError(f"student_t needs df > 2, got {self.df}")
        if self.means is not None:
            object.__setattr__(self, "means", np.asarray(self.means, dtype=float))

    def group_means(self, p: int, g: int) -> np.ndarray:
        if self.means is None:
            base = 0.0 if self.family in ("normal", "student_t") else 1.0
            return np.full((g, p), base)
        means = self.means
        if means.ndim == 1:
            if means.shape != (p,):
                raise DataError(f"mean vector has shape {means.shape}, expected ({p},)")
            return np.tile(means, (g, 1))
        if means.shape != (g, p):
            raise DataError(f"means have shape {means.shape}, expected {(g, p)}")
        return means


def replicate_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for replicate ``index`` of a campaign.

    Derived from (seed, index) alone, so any subset of replicates can be
    generated in any order on any worker with identical output.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def generate_replicate(
    spec: GeneratorSpec, n_i: tuple[int, ...], p: int, g: int, stream: np.random.Generator
) -> GroupedSample:
    """Draw one grouped sample from the configured process."""
    if g != len(n_i):
        raise DataError(f"g = {g} does not match len(n_i) = {len(n_i)}")
    means = spec.group_means(p, g)
    groups = []
    if spec.family in ("normal", "student_t"):
        covs = spec.covariance.materialize(p, g)
        chols = [None if spec.covariance.kind == "identity" else chol_factor(c) for c in covs]
        for ni, mean, chol in zip(n_i, means, chols):
            z = stream.standard_normal((ni, p))
            if chol is not None:
                z = z @ chol
            if spec.family == "student_t":
                u = stream.chisquare(spec.df, ni) / spec.df
                z = z / np.sqrt(u)[:, None]
            groups.append(mean + z)
    elif spec.family == "skew_normal":
        omega = ar1_matrix(p, 0.2)
        alpha = np.full(p, spec.shape)
        slant = omega @ alpha / np.sqrt(1.0 + alpha @ omega @ alpha)
        resid_chol = chol_factor(omega - np.outer(slant, slant))
        for ni, mean in zip(n_i, means):
            latent = np.abs(stream.standard_normal(ni))
            z = stream.standard_normal((ni, p)) @ resid_chol
            groups.append(mean + latent[:, None] * slant + z)
    else:  # laplace
        for ni, mean in zip(n_i, means):
            radial = np.sqrt(stream.standard_exponential(ni))
            groups.append(mean + radial[:, None] * stream.standard_normal((ni, p)))
    return GroupedSample(groups=tuple(groups))


@dataclass(frozen=True)
class SimulationConfig:
    """One empirical-size campaign."""

    generator: GeneratorSpec
    n_i: tuple[int, ...]
    p: int
    methods: tuple[str, ...]
    variance_model: str = "homoscedastic"
    replications: int = 2000
    alpha: float = 0.05
    seed: int = 0
    retain_pvalues: bool = False

    @property
    def g(self) -> int:
        return len(self.n_i)

    def validation_errors(self) -> list[str]:
        """Every config problem, not just the first."""
        errors = []
        if self.p < 1:
            errors.append(f"p must be at least 1, got {self.p}")
        if len(self.n_i) < 2:
            errors.append(f"need at least 2 groups, got {len(self.n_i)}")
        if any(ni < 2 for ni in self.n_i):
            errors.append(f"every group size must be at least 2, got {self.n_i}")
        if self.variance_model not in ("homoscedastic", "heteroscedastic"):
            errors.append(f"unknown variance model {self.variance_model!r}")
        if self.replications < 1:
            errors.append(f"replications must be positive, got {self.replications}")
        if not 0.0 < self.alpha < 1.0:
            errors.append(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.methods:
            errors.append("no methods requested")
        allowed = (
            HOMOSCEDASTIC_METHODS
            if self.variance_model == "homoscedastic"
            else HETEROSCEDASTIC_METHODS
        )
        for m in self.methods:
            if m not in allowed:
                errors.append(
                    f"method {m!r} is not available under the "
                    f"{self.variance_model} model (allowed: {', '.join(allowed)})"
                )
            elif m in TWO_GROUP_METHODS and self.g != 2:
                errors.append(f"method {m!r} needs exactly 2 groups, got {self.g}")
        n = sum(self.n_i)
        if self.variance_model == "homoscedastic" and n < self.p + self.g + 1:
            errors.append(
                f"homoscedastic model needs n >= p + g + 1 = "
                f"{self.p + self.g + 1}, got n = {n}"
            )
        if self.variance_model == "heteroscedastic" and any(
            ni < self.p + 2 for ni in self.n_i
        ):
            errors.append(
                f"heteroscedastic model needs every n_i >= p + 2 = {self.p + 2}, "
                f"got {self.n_i}"
            )
        return errors

    def validate(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise DataError("invalid simulation config:\n  " + "\n  ".join(errors))


@dataclass(frozen=True)
class MethodSummary:
    method: str
    rejections: int
    replications: int
    rate: float
    mc_se: float
    failures: dict[str, int] = field(default_factory=dict)
    pvalues: tuple[float, ...] | None = None


@dataclass(frozen=True)
class EmpiricalSizeReport:
    config: SimulationConfig
    methods: tuple[MethodSummary, ...]
    elapsed_seconds: float = 0.0

    def summary(self, method: str) -> MethodSummary:
        for s in self.methods:
            if s.method == method:
                return s
        raise KeyError(method)


def _run_one(cfg: SimulationConfig, index: int) -> dict[str, Any]:
    stream = replicate_stream(cfg.seed, index)
    record: dict[str, Any] = {}
    try:
        sample = generate_replicate(cfg.generator, cfg.n_i, cfg.p, cfg.g, stream)
        stats = summarize(sample)
        if cfg.variance_model == "homoscedastic":
            fit = fit_homoscedastic(stats)
            runners = {
                "DT": lambda: directional_p(fit).pvalue,
                "CLT": lambda: clt_test(fit).pvalue,
                "LRT": lambda: lrt(fit).pvalue,
                "BC": lambda: bartlett(fit).pvalue,
                "Hotelling": lambda: hotelling(fit).pvalue,
            }
            adjusted = skovgaard_homo
        else:
            fit = fit_heteroscedastic(stats)
            runners = {
                "DT": lambda: directional_p_hetero(fit).pvalue,
                "LRT": lambda: lrt_hetero(fit).pvalue,
                "BF": lambda: behrens_fisher(stats).pvalue,
            }
            adjusted = skovgaard_hetero
    except DirManovaError as exc:
        return {m: type(exc).__name__ for m in cfg.methods}

    wants_adjusted = [m for m in ("Sko1", "Sko2") if m in cfg.methods]
    if wants_adjusted:
        try:
            one, two = adjusted(fit)
            pair = {"Sko1": one.pvalue, "Sko2": two.pvalue}
            for m in wants_adjusted:
                record[m] = pair[m]
        except DirManovaError as exc:
            for m in wants_adjusted:
                record[m] = type(exc).__name__
    for m in cfg.methods:
        if m in record:
            continue
        try:
            record[m] = runners[m]()
        except DirManovaError as exc:
            record[m] = type(exc).__name__
    return record


def _run_batch(cfg: SimulationConfig, start: int, stop: int) -> list[dict[str, Any]]:
    return [_run_one(cfg, r) for r in range(start, stop)]


def run_empirical_size(cfg: SimulationConfig, threads: int = 1) -> EmpiricalSizeReport:
    """Run the campaign and aggregate per-method rejection rates.

    ``threads`` only controls scheduling; the report content depends on the
    config alone.
    """
    cfg.validate()
    started = time.perf_counter()
    n_rep = cfg.replications

    if threads <= 1:
        records = _run_batch(cfg, 0, n_rep)
    else:
        chunk = max(1, -(-n_rep // (threads * 8)))
        spans = [(s, min(s + chunk, n_rep)) for s in range(0, n_rep, chunk)]
        records = []
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for batch in pool.map(
                _run_batch, [cfg] * len(spans), *zip(*spans)
            ):
                records.extend(batch)

    summaries = []
    for m in cfg.methods:
        rejections = 0
        failures: dict[str, int] = {}
        pvalues: list[float] = []
        for record in records:
            outcome = record[m]
            if isinstance(outcome, str):
                failures[outcome] = failures.get(outcome, 0) + 1
                continue
            pvalues.append(outcome)
            if outcome <= cfg.alpha:
                rejections += 1
        rate = rejections / n_rep
        summaries.append(
            MethodSummary(
                method=m,
                rejections=rejections,
                replications=n_rep,
                rate=rate,
                mc_se=float(np.sqrt(rate * (1.0 - rate) / n_rep)),
                failures=failures,
                pvalues=tuple(pvalues) if cfg.retain_pvalues else None,
            )
        )
    return EmpiricalSizeReport(
        config=cfg,
        methods=tuple(summaries),
        elapsed_seconds=time.perf_counter() - started,
    )


def report_json_dict(report: EmpiricalSizeReport) -> dict[str, Any]:
    """Canonical JSON content of a report.

    Depends on the config and the per-replicate outcomes only, never on
    scheduling or timing, so reruns of the same campaign serialize to
    identical bytes.
    """
    cfg = report.config
    gen = cfg.generator
    cov = gen.covariance
    cov_d: dict[str, Any] = {"kind": cov.kind}
    if cov.rho is not None:
        cov_d["rho"] = list(cov.rho) if np.ndim(cov.rho) else cov.rho
    if cov.matrix is not None:
        cov_d["matrix"] = cov.matrix.tolist()
    gen_d: dict[str, Any] = {"family": gen.family, "covariance": cov_d}
    if gen.means is not None:
        gen_d["means"] = gen.means.tolist()
    if gen.family == "student_t":
        gen_d["df"] = gen.df
    if gen.family == "skew_normal":
        gen_d["shape"] = gen.shape
    out: dict[str, Any] = {
        "config": {
            "generator": gen_d,
            "n_i": list(cfg.n_i),
            "p": cfg.p,
            "variance_model": cfg.variance_model,
            "methods": list(cfg.methods),
            "replications": cfg.replications,
            "alpha": cfg.alpha,
            "seed": cfg.seed,
            "retain_pvalues": cfg.retain_pvalues,
        },
        "methods": [
            {
                "method": s.method,
                "rejections": s.rejections,
                "replications": s.replications,
                "rate": s.rate,
                "mc_se": s.mc_se,
                "failures": dict(sorted(s.failures.items())),
            }
            for s in report.methods
        ],
    }
    if cfg.retain_pvalues:
        diagnostics = {}
        pvalue_lists = {}
        for s in report.methods:
            pvalue_lists[s.method] = list(s.pvalues or ())
            if s.pvalues:
                ks_stat, ks_p, hist = uniformity_diagnostics(s.pvalues)
                diagnostics[s.method] = {
                    "ks_statistic": ks_stat,
                    "ks_pvalue": ks_p,
                    "histogram": [int(c) for c in hist],
                }
        out["diagnostics"] = diagnostics
        out["pvalues"] = pvalue_lists
    return out


def report_csv_text(report: EmpiricalSizeReport) -> str:
    """One row per method: method, rejections, R, rate, mc_se."""
    lines = ["method,rejections,R,rate,mc_se"]
    for s in report.methods:
        lines.append(f"{s.method},{s.rejections},{s.replications},{s.rate!r},{s.mc_se!r}")
    return "\n".join(lines) + "\n"


def uniformity_diagnostics(
    pvals,
) -> tuple[float, float, np.ndarray]:
    """One-sample KS statistic against Uniform(0,1) and a 20-bin histogram."""
    arr = np.asarray(pvals, dtype=float)
    if arr.size == 0:
        raise DataError("no p-values supplied")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError("p-values must lie in [0, 1]")
    res = kstest(arr, "uniform", mode="asymp")
    hist = np.histogram(arr, bins=20, range=(0.0, 1.0))[0]
    return float(res.statistic), float(res.pvalue), hist
