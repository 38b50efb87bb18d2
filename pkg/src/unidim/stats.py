"""Model-comparison statistics: Welch's t with Hedges' g, one-way ANOVA
with omega squared, Bonferroni correction, a within-group-spread
bootstrap test, rank and product-moment correlations, and the contrast
dispatcher that groups a manifest's models and applies the right test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .rng import PURPOSE_OMEGA_CI, PURPOSE_SD_BOOTSTRAP, derive_rng
from .special import f_sf, t_two_sided_p


def _clean(values, name: str, min_n: int = 1) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size < min_n:
        raise ValidationError(f"{name} needs at least {min_n} values, got {arr.size}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass
class WelchResult:
    t: float
    df: float
    p: float
    hedges_g: float
    g_ci_95: tuple[float, float]
    group_a: tuple[int, float, float]
    group_b: tuple[int, float, float]


def welch_t(group_a, group_b) -> WelchResult:
    """Unequal-variance t test with Welch-Satterthwaite degrees of
    freedom, plus bias-corrected Hedges' g and its large-sample CI."""
    a = _clean(group_a, "group_a", min_n=2)
    b = _clean(group_b, "group_b", min_n=2)
    na, nb = a.size, b.size
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            t = 0.0
            df = float(na + nb - 2)
        else:
            raise NumericalError(
                "both groups have zero variance with different means"
            )
    else:
        se_sq = va / na + vb / nb
        t = (ma - mb) / np.sqrt(se_sq)
        df = se_sq**2 / (
            (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
        )
    p = t_two_sided_p(float(t), float(df)) if t != 0.0 else 1.0
    # Hedges' g from the pooled standard deviation.
    pooled_var = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    if pooled_var == 0.0:
        g = 0.0
        ci = (0.0, 0.0)
    else:
        d = (ma - mb) / np.sqrt(pooled_var)
        correction = 1.0 - 3.0 / (4.0 * (na + nb) - 9.0)
        g = correction * d
        se_d = np.sqrt(
            (na + nb) / (na * nb) + d * d / (2.0 * (na + nb - 2))
        )
        se_g = correction * se_d
        ci = (float(g - 1.96 * se_g), float(g + 1.96 * se_g))
    return WelchResult(
        t=float(t),
        df=float(df),
        p=float(p),
        hedges_g=float(g),
        g_ci_95=ci,
        group_a=(na, ma, float(np.sqrt(va))),
        group_b=(nb, mb, float(np.sqrt(vb))),
    )


@dataclass
class AnovaResult:
    F: float
    df_between: int
    df_within: int
    p: float
    omega2: float
    omega2_ci_95: tuple[float, float]
    group_summaries: list[tuple[int, float, float]]


def _omega2_from_groups(groups: list[np.ndarray]) -> tuple[float, float, int, int]:
    """Returns (F, omega2, df_between, df_within)."""
    k = len(groups)
    all_values = np.concatenate(groups)
    n = all_values.size
    grand = all_values.mean()
    ss_between = float(
        sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    )
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    ss_total = ss_between + ss_within
    df_b = k - 1
    df_w = n - k
    if df_w < 1:
        raise ValidationError("ANOVA needs at least one within-group degree of freedom")
    ms_w = ss_within / df_w
    if ms_w == 0.0:
        raise NumericalError("all within-group variation is zero; F is undefined")
    ms_b = ss_between / df_b
    F = ms_b / ms_w
    omega2 = (ss_between - df_b * ms_w) / (ss_total + ms_w)
    return float(F), float(omega2), df_b, df_w


def oneway_anova(
    groups: list,
    *,
    rng_seed: int = 0,
    ci_resamples: int = 2000,
) -> AnovaResult:
    """One-way fixed-effects ANOVA with omega squared and a seeded
    percentile-bootstrap CI (resampling members within each group)."""
    if len(groups) < 2:
        raise ValidationError("ANOVA needs at least two groups")
    arrays = [_clean(g, f"group {i}", min_n=1) for i, g in enumerate(groups)]
    if sum(1 for g in arrays if g.size >= 2) < 2:
        raise ValidationError("ANOVA needs at least two groups with n >= 2")
    F, omega2, df_b, df_w = _omega2_from_groups(arrays)
    p = f_sf(F, df_b, df_w)
    rng = derive_rng(rng_seed, PURPOSE_OMEGA_CI)
    boot = []
    for _ in range(ci_resamples):
        resampled = [g[rng.integers(0, g.size, size=g.size)] for g in arrays]
        try:
            _, w2, _, _ = _omega2_from_groups(resampled)
        except NumericalError:
            continue
        boot.append(w2)
    if boot:
        lo = float(np.quantile(boot, 0.025))
        hi = float(np.quantile(boot, 0.975))
    else:
        lo = hi = omega2
    return AnovaResult(
        F=F,
        df_between=df_b,
        df_within=df_w,
        p=float(p),
        omega2=omega2,
        omega2_ci_95=(lo, hi),
        group_summaries=[
            (g.size, float(g.mean()), float(g.std(ddof=1)) if g.size > 1 else 0.0)
            for g in arrays
        ],
    )


def bonferroni(p_values, m_contrasts: int) -> list[float]:
    """min(1, p * m) per p-value."""
    if m_contrasts < 1:
        raise ValidationError("number of contrasts must be at least 1")
    out = []
    for p in p_values:
        p = float(p)
        if not (0.0 <= p <= 1.0):
            raise ValidationError(f"p-value {p} outside [0, 1]")
        out.append(min(1.0, p * m_contrasts))
    return out


def sign_test(positive: int, n: int) -> float:
    """Two-sided exact sign test p-value for `positive` wins out of n
    non-tied paired comparisons under a fair-coin null."""
    if n < 1 or not (0 <= positive <= n):
        raise ValidationError("need 0 <= positive <= n with n >= 1")
    extreme = max(positive, n - positive)
    tail = sum(math.comb(n, i) for i in range(extreme, n + 1)) / 2.0**n
    return min(1.0, 2.0 * tail)


@dataclass
class SdBootstrapResult:
    p: float
    observed_sd: float
    null_mean_sd: float
    iters: int


def sd_bootstrap_test(
    group_values, population_values, iters: int, rng_seed: int
) -> SdBootstrapResult:
    """One-sided test of whether a group's spread is unusually small:
    the null draws same-size subsets of the population without
    replacement; p is the fraction of null SDs at or below the observed."""
    group = _clean(group_values, "group", min_n=2)
    population = _clean(population_values, "population", min_n=2)
    g = group.size
    if g > population.size:
        raise ValidationError("group cannot exceed the population size")
    if iters < 1000:
        raise ValidationError("at least 1000 bootstrap iterations are required")
    observed = float(group.std(ddof=1))
    rng = derive_rng(rng_seed, PURPOSE_SD_BOOTSTRAP)
    null_sds = np.empty(iters)
    for i in range(iters):
        subset = rng.choice(population, size=g, replace=False)
        null_sds[i] = subset.std(ddof=1)
    p = float((null_sds <= observed).mean())
    return SdBootstrapResult(
        p=p,
        observed_sd=observed,
        null_mean_sd=float(null_sds.mean()),
        iters=iters,
    )


@dataclass
class CorrelationResult:
    coefficient: float
    p: float
    n: int


def average_ranks(values) -> np.ndarray:
    """Ranks starting at 1, with ties given the mean of their positions."""
    arr = np.asarray(values, dtype=np.float64)
    _, inverse, counts = np.unique(arr, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    averaged = starts + (counts + 1) / 2.0
    return averaged[inverse]


def pearson(x, y) -> CorrelationResult:
    """Product-moment correlation with a two-sided t-approximation p."""
    xa = _clean(x, "x", min_n=3)
    ya = _clean(y, "y", min_n=3)
    if xa.size != ya.size:
        raise ValidationError("x and y must have equal length")
    n = xa.size
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    denom = float(np.sqrt((xc @ xc) * (yc @ yc)))
    if denom == 0.0:
        raise NumericalError("correlation undefined for a constant variable")
    r = float(np.clip((xc @ yc) / denom, -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * np.sqrt((n - 2) / (1.0 - r * r))
        p = t_two_sided_p(float(t), n - 2)
    return CorrelationResult(coefficient=r, p=float(p), n=n)


def spearman(x, y) -> CorrelationResult:
    """Rank correlation: Pearson on average ranks."""
    xa = _clean(x, "x", min_n=3)
    ya = _clean(y, "y", min_n=3)
    if xa.size != ya.size:
        raise ValidationError("x and y must have equal length")
    return pearson(average_ranks(xa), average_ranks(ya))


def correlations(x, y, method: str = "pearson") -> CorrelationResult:
    if method == "pearson":
        return pearson(x, y)
    if method == "spearman":
        return spearman(x, y)
    raise ValidationError(f"unknown correlation method {method!r}")


# ---------------------------------------------------------------------------
# Contrast suite


@dataclass
class ContrastResult:
    contrast_name: str
    test: str
    statistic: float | None
    p_raw: float | None
    p_corrected: float | None
    effect_size: float | None
    effect_ci: tuple[float, float] | None
    group_summaries: list[dict]
    detail: str = ""


_VALID_TESTS = {"welch_t", "anova_f", "descriptive", "sd_bootstrap"}


def _match_filter(entry_fields: dict, spec_filter: dict) -> bool:
    for key, wanted in spec_filter.items():
        if key not in entry_fields:
            raise ValidationError(f"filter references unknown field {key!r}")
        value = entry_fields[key]
        allowed = wanted if isinstance(wanted, list) else [wanted]
        if value not in allowed:
            return False
    return True


def run_contrasts(
    manifest,
    model_scores: dict[str, float],
    contrast_specs: list[dict],
    *,
    rng_seed: int = 0,
    sd_bootstrap_iters: int = 10000,
) -> list[ContrastResult]:
    """Execute the pre-specified contrasts over model-level scores.

    Each spec is {"name", "group_by", optional "filter", optional
    "test"}. Dispatch: two groups use Welch's t, more use one-way ANOVA,
    all-singleton groupings fall back to a descriptive row plus a
    group-spread bootstrap against all scored models. The correction
    multiplier is the number of specs.
    """
    if not contrast_specs:
        raise ValidationError("at least one contrast spec is required")
    results: list[ContrastResult] = []
    population = np.array(
        [model_scores[mid] for mid in sorted(model_scores)], dtype=np.float64
    )
    for spec_idx, spec in enumerate(contrast_specs):
        if not isinstance(spec, dict) or "name" not in spec or "group_by" not in spec:
            raise ValidationError(
                f"contrast spec {spec_idx} must carry 'name' and 'group_by'"
            )
        name = spec["name"]
        group_by = spec["group_by"]
        spec_filter = spec.get("filter", {})
        override = spec.get("test")
        if override is not None and override not in _VALID_TESTS:
            raise ValidationError(f"unknown test override {override!r}")
        groups: dict[str, list[float]] = {}
        for entry in manifest.entries:
            if entry.model_id not in model_scores:
                continue
            fields_map = {
                "model_id": entry.model_id,
                "architecture_class": entry.architecture_class,
                "family": entry.family,
                "objective": entry.objective,
                "training_data": entry.training_data,
            }
            if group_by not in fields_map:
                raise ValidationError(f"cannot group by unknown field {group_by!r}")
            if not _match_filter(fields_map, spec_filter):
                continue
            groups.setdefault(fields_map[group_by], []).append(
                model_scores[entry.model_id]
            )
        if len(groups) < 1:
            raise ValidationError(f"contrast {name!r} selects no models")
        ordered = sorted(groups)
        summaries = [
            {
                "group": key,
                "n": len(groups[key]),
                "mean": float(np.mean(groups[key])),
                "sd": float(np.std(groups[key], ddof=1)) if len(groups[key]) > 1 else 0.0,
            }
            for key in ordered
        ]
        all_singleton = all(len(v) == 1 for v in groups.values())
        test = override
        if test is None:
            if all_singleton or len(groups) == 1:
                test = "descriptive"
            elif len(groups) == 2:
                test = "welch_t"
            else:
                test = "anova_f"
        if test == "welch_t":
            if len(groups) != 2:
                raise ValidationError(f"contrast {name!r}: Welch needs two groups")
            res = welch_t(groups[ordered[0]], groups[ordered[1]])
            results.append(
                ContrastResult(
                    contrast_name=name,
                    test="welch_t",
                    statistic=res.t,
                    p_raw=res.p,
                    p_corrected=None,
                    effect_size=res.hedges_g,
                    effect_ci=res.g_ci_95,
                    group_summaries=summaries,
                    detail=f"df={res.df:.4f}",
                )
            )
        elif test == "anova_f":
            res = oneway_anova(
                [groups[key] for key in ordered],
                rng_seed=rng_seed + spec_idx,
            )
            results.append(
                ContrastResult(
                    contrast_name=name,
                    test="anova_f",
                    statistic=res.F,
                    p_raw=res.p,
                    p_corrected=None,
                    effect_size=res.omega2,
                    effect_ci=res.omega2_ci_95,
                    group_summaries=summaries,
                    detail=f"df=({res.df_between},{res.df_within})",
                )
            )
        elif test == "descriptive":
            results.append(
                ContrastResult(
                    contrast_name=name,
                    test="descriptive",
                    statistic=None,
                    p_raw=None,
                    p_corrected=None,
                    effect_size=None,
                    effect_ci=None,
                    group_summaries=summaries,
                )
            )
            if all_singleton and len(groups) >= 2:
                values = [groups[key][0] for key in ordered]
                res = sd_bootstrap_test(
                    values, population, sd_bootstrap_iters, rng_seed + spec_idx
                )
                results.append(
                    ContrastResult(
                        contrast_name=f"{name}_spread",
                        test="sd_bootstrap",
                        statistic=res.observed_sd,
                        p_raw=res.p,
                        p_corrected=None,
                        effect_size=None,
                        effect_ci=None,
                        group_summaries=summaries,
                        detail=f"null_mean_sd={res.null_mean_sd!r}",
                    )
                )
        elif test == "sd_bootstrap":
            values = np.concatenate([groups[key] for key in ordered])
            res = sd_bootstrap_test(
                values, population, sd_bootstrap_iters, rng_seed + spec_idx
            )
            results.append(
                ContrastResult(
                    contrast_name=name,
                    test="sd_bootstrap",
                    statistic=res.observed_sd,
                    p_raw=res.p,
                    p_corrected=None,
                    effect_size=None,
                    effect_ci=None,
                    group_summaries=summaries,
                    detail=f"null_mean_sd={res.null_mean_sd!r}",
                )
            )
    m = len(contrast_specs)
    for result in results:
        if result.p_raw is not None:
            result.p_corrected = bonferroni([result.p_raw], m)[0]
    return results
