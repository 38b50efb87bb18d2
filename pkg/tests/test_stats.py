"""Contrast statistics: t/F/effect sizes, corrections, correlations."""

import numpy as np
import pytest

from unidim.artifacts import ManifestEntry, ModelManifest
from unidim.errors import NumericalError, ValidationError
from unidim.stats import (
    average_ranks,
    bonferroni,
    correlations,
    oneway_anova,
    pearson,
    run_contrasts,
    sd_bootstrap_test,
    sign_test,
    spearman,
    welch_t,
)

# Constructed so the exact Welch t and Hedges' g land on round values;
# the expected outputs are frozen from an independent evaluation of the
# textbook formulas.
GROUP_A = [0.586821299737, 1.305410649868, 2.024, 2.742589350132, 3.461178700263]
GROUP_B = [-0.646642659734, 0.0, 0.646642659734]


def test_welch_frozen_fixture():
    res = welch_t(GROUP_A, GROUP_B)
    assert res.t == pytest.approx(3.21, abs=1e-9)
    assert res.hedges_g == pytest.approx(1.76, abs=1e-9)
    assert res.df == pytest.approx(5.991972631942, abs=1e-9)
    assert res.p == pytest.approx(0.018401269891, abs=1e-9)
    lo, hi = res.g_ci_95
    assert lo <= res.hedges_g <= hi


def test_welch_identical_groups():
    res = welch_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert res.t == 0.0
    assert res.hedges_g == 0.0
    assert res.p == 1.0


def test_welch_matches_textbook_formula_on_shifted_groups():
    a = np.array([1.0, 2.0, 3.0])
    b = a + 10.0
    res = welch_t(a, b)
    se = np.sqrt(a.var(ddof=1) / 3 + b.var(ddof=1) / 3)
    assert res.t == pytest.approx(float(-10.0 / se), abs=1e-10)
    assert res.df == pytest.approx(4.0, abs=1e-10)


def test_welch_reduces_to_student_under_equal_variance_and_size():
    rng = np.random.default_rng(12)
    a = rng.normal(size=6)
    b = rng.normal(size=6) + 0.5
    b = (b - b.mean()) / b.std(ddof=1) * a.std(ddof=1) + b.mean()
    res = welch_t(a, b)
    # Pooled-variance Student's t with equal n and equal variance.
    sp = np.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2.0)
    t_student = (a.mean() - b.mean()) / (sp * np.sqrt(2.0 / 6.0))
    assert res.t == pytest.approx(float(t_student), abs=1e-10)
    assert res.df == pytest.approx(10.0, abs=1e-10)


def test_welch_input_validation():
    with pytest.raises(ValidationError):
        welch_t([1.0], [1.0, 2.0])
    with pytest.raises(NumericalError):
        welch_t([1.0, 1.0], [2.0, 2.0])


def test_anova_two_groups_is_squared_pooled_t():
    rng = np.random.default_rng(13)
    a = rng.normal(size=8)
    b = rng.normal(size=5) + 1.0
    res = oneway_anova([a, b])
    na, nb = 8, 5
    sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    t = (a.mean() - b.mean()) / np.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    assert res.F == pytest.approx(float(t * t), rel=1e-10)
    assert (res.df_between, res.df_within) == (1, 11)


def test_anova_null_f_centers_on_theory():
    # Under H0, E[F] = df_w / (df_w - 2); four groups of six give 20/18.
    rng = np.random.default_rng(14)
    fs, w2s = [], []
    for i in range(200):
        groups = [rng.normal(size=6) for _ in range(4)]
        res = oneway_anova(groups, ci_resamples=0)
        fs.append(res.F)
        w2s.append(res.omega2)
    assert np.mean(fs) == pytest.approx(20.0 / 18.0, abs=0.3)
    assert np.mean(w2s) == pytest.approx(0.0, abs=0.05)


def test_anova_planted_effect():
    rng = np.random.default_rng(15)
    groups = [rng.normal(loc=5.0 * i, size=8) for i in range(4)]
    res = oneway_anova(groups, rng_seed=5)
    assert res.F > 50.0
    assert res.omega2 > 0.8
    lo, hi = res.omega2_ci_95
    assert lo <= res.omega2 <= hi


def test_anova_rejections():
    with pytest.raises(ValidationError):
        oneway_anova([[1.0, 2.0]])
    with pytest.raises(ValidationError):
        oneway_anova([[1.0, 2.0], [3.0]])
    with pytest.raises(NumericalError):
        oneway_anova([[1.0, 1.0], [2.0, 2.0]])


def test_bonferroni_values_and_monotonicity():
    assert bonferroni([0.01], 5) == [pytest.approx(0.05)]
    assert bonferroni([0.5], 5) == [1.0]
    ps = [0.001, 0.2, 0.9]
    out = bonferroni(ps, 3)
    assert all(c >= p for c, p in zip(out, ps))
    assert all(c <= 1.0 for c in out)
    with pytest.raises(ValidationError):
        bonferroni([0.5], 0)
    with pytest.raises(ValidationError):
        bonferroni([1.5], 2)


def test_sign_test_exact_values():
    assert sign_test(10, 10) == pytest.approx(2.0 / 1024.0)
    assert sign_test(8, 10) == pytest.approx(2.0 * 56.0 / 1024.0)
    assert sign_test(2, 10) == pytest.approx(sign_test(8, 10))
    assert sign_test(5, 10) == 1.0
    with pytest.raises(ValidationError):
        sign_test(3, 2)


def test_sd_bootstrap_detects_tight_group():
    population = np.linspace(0.0, 1.0, 24)
    group = [0.50, 0.505, 0.51, 0.515, 0.52]
    res = sd_bootstrap_test(group, population, 2000, rng_seed=1)
    assert res.p < 0.01
    assert res.observed_sd < res.null_mean_sd


def test_sd_bootstrap_deterministic():
    population = np.linspace(0.0, 1.0, 24)
    group = population[3:9]
    a = sd_bootstrap_test(group, population, 1000, rng_seed=7)
    b = sd_bootstrap_test(group, population, 1000, rng_seed=7)
    assert a.p == b.p
    assert a.null_mean_sd == b.null_mean_sd


def test_sd_bootstrap_null_mean_p_is_centered():
    rng = np.random.default_rng(16)
    population = rng.normal(size=30)
    ps = []
    for trial in range(100):
        group = rng.choice(population, size=6, replace=False)
        ps.append(sd_bootstrap_test(group, population, 1000, rng_seed=trial).p)
    assert np.mean(ps) == pytest.approx(0.5, abs=0.1)


def test_sd_bootstrap_rejections():
    with pytest.raises(ValidationError):
        sd_bootstrap_test([1.0, 2.0], [1.0, 2.0, 3.0], 10, rng_seed=0)
    with pytest.raises(ValidationError):
        sd_bootstrap_test([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0], 1000, rng_seed=0)


def test_average_ranks_ties():
    np.testing.assert_allclose(
        average_ranks([10.0, 20.0, 20.0, 30.0]), [1.0, 2.5, 2.5, 4.0]
    )


def test_average_ranks_matches_positional_oracle():
    # Independent definition: rank(v) = #(values < v) + (ties(v) + 1) / 2.
    rng = np.random.default_rng(17)
    values = np.round(rng.normal(size=20), 1)  # rounding forces ties
    expected = [
        float(np.sum(values < v)) + (float(np.sum(values == v)) + 1.0) / 2.0
        for v in values
    ]
    np.testing.assert_allclose(average_ranks(values), expected)


def test_pearson_perfect_line():
    x = np.arange(10, dtype=float)
    res = pearson(x, 2.0 * x + 1.0)
    assert res.coefficient == pytest.approx(1.0)
    assert res.p == 0.0
    assert res.n == 10


def test_pearson_hand_computed_case():
    # Centered cross products by hand: dot = 3.5, ||xc||^2 = 5,
    # ||yc||^2 = 2.75; p comes from the t approximation at df = 2, which
    # test_special validates against an external oracle.
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 1.0, 2.0, 2.0])
    res = pearson(x, y)
    r_hand = 3.5 / np.sqrt(5.0 * 2.75)
    assert res.coefficient == pytest.approx(float(r_hand), abs=1e-12)
    from unidim.special import t_two_sided_p

    t_hand = r_hand * np.sqrt(2.0 / (1.0 - r_hand**2))
    assert res.p == pytest.approx(t_two_sided_p(float(t_hand), 2), abs=1e-12)


def test_spearman_monotone_nonlinear():
    x = np.linspace(-2.0, 2.0, 15)
    y = x**3
    assert spearman(x, y).coefficient == pytest.approx(1.0)
    assert pearson(x, y).coefficient < 1.0


def test_spearman_invariant_under_monotone_transforms():
    rng = np.random.default_rng(18)
    x = rng.normal(size=25)
    y = rng.normal(size=25)
    base = spearman(x, y).coefficient
    assert spearman(np.exp(x), y).coefficient == pytest.approx(base, abs=1e-12)
    assert spearman(x, y**3).coefficient == pytest.approx(base, abs=1e-12)


def test_correlation_errors_and_dispatch():
    with pytest.raises(NumericalError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        pearson([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValidationError):
        correlations([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], method="kendall")
    r = correlations([1.0, 2.0, 3.0], [3.0, 5.0, 7.0], method="pearson")
    assert r.coefficient == pytest.approx(1.0)


# --- contrast dispatch over a synthetic manifest ---


def small_manifest():
    entries = []
    for i in range(8):
        entries.append(
            ManifestEntry(
                model_id=f"m{i}",
                features=f"m{i}.npy",
                architecture_class="convolutional",
                family=("alpha", "beta", "gamma", "delta")[i % 4],
                objective="supervised" if i < 4 else "contrastive",
                training_data="web" if i % 2 else "curated",
            )
        )
    from pathlib import Path

    return ModelManifest(entries=entries, images=["a", "b"], root=Path("."))


def test_run_contrasts_dispatch():
    manifest = small_manifest()
    scores = {f"m{i}": 0.1 * i for i in range(8)}
    specs = [
        {"name": "by_objective", "group_by": "objective"},
        {"name": "by_family", "group_by": "family"},
        {"name": "singletons", "group_by": "model_id", "filter": {"family": "alpha"}},
    ]
    results = run_contrasts(manifest, scores, specs, rng_seed=0, sd_bootstrap_iters=1000)
    by_name = {r.contrast_name: r for r in results}
    assert by_name["by_objective"].test == "welch_t"
    assert by_name["by_family"].test == "anova_f"
    assert by_name["singletons"].test == "descriptive"
    assert by_name["singletons_spread"].test == "sd_bootstrap"
    # Correction multiplier is the number of specs, not emitted rows.
    for r in results:
        if r.p_raw is not None:
            assert r.p_corrected == pytest.approx(min(1.0, r.p_raw * 3))


def test_run_contrasts_test_override():
    manifest = small_manifest()
    scores = {f"m{i}": 0.1 * i for i in range(8)}
    specs = [
        {
            "name": "spread_only",
            "group_by": "model_id",
            "filter": {"objective": "contrastive"},
            "test": "sd_bootstrap",
        }
    ]
    (res,) = run_contrasts(
        manifest, scores, specs, rng_seed=0, sd_bootstrap_iters=1000
    )
    assert res.test == "sd_bootstrap"
    assert 0.0 <= res.p_raw <= 1.0


def test_run_contrasts_rejections():
    manifest = small_manifest()
    scores = {f"m{i}": 0.1 * i for i in range(8)}
    with pytest.raises(ValidationError):
        run_contrasts(manifest, scores, [], rng_seed=0)
    with pytest.raises(ValidationError):
        run_contrasts(
            manifest, scores, [{"name": "x", "group_by": "nonsense"}], rng_seed=0
        )
    with pytest.raises(ValidationError):
        run_contrasts(
            manifest,
            scores,
            [{"name": "x", "group_by": "family", "filter": {"family": "none"}}],
            rng_seed=0,
        )
    with pytest.raises(ValidationError):
        run_contrasts(
            manifest,
            scores,
            [{"name": "x", "group_by": "family", "test": "chi2"}],
            rng_seed=0,
        )
