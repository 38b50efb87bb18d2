"""Dimension content: consistency decomposition, deciles, importance."""

import numpy as np
import pytest

from unidim.artifacts import CategoryIndex
from unidim.content import (
    DimensionContent,
    all_reconstruction_importances,
    content_universality_correlations,
    eta_squared,
    label_crosstab,
    reconstruction_importance,
    variance_fraction_by_decile,
)
from unidim.errors import ValidationError
from unidim.fixtures import planted_blocks
from unidim.snmf import explained_variance
from unidim.stats import spearman


def test_eta_squared_hand_cases():
    # Loadings perfectly separated by category: all variance is between.
    full = eta_squared(np.array([1.0, 1.0, 2.0, 2.0]), np.array([0, 0, 1, 1]))
    assert full.eta2 == pytest.approx(1.0)
    assert full.ss_within == pytest.approx(0.0)

    none = eta_squared(np.array([1.0, 2.0, 1.0, 2.0]), np.array([0, 0, 1, 1]))
    assert none.eta2 == pytest.approx(0.0)

    # Hand decomposition: ss_between = 1, ss_within = 1, ss_total = 2.
    half = eta_squared(np.array([0.0, 1.0, 1.0, 2.0]), np.array([0, 0, 1, 1]))
    assert half.eta2 == pytest.approx(0.5)
    assert half.ss_between == pytest.approx(1.0)
    assert half.ss_within == pytest.approx(1.0)
    assert half.ss_total == pytest.approx(2.0)


def test_eta_squared_degenerate_constant_loading():
    res = eta_squared(np.full(6, 0.7), np.array([0, 0, 1, 1, 2, 2]))
    assert res.eta2 is None
    assert res.degenerate
    assert res.ss_total == 0.0


def test_eta_squared_category_index_path():
    idx = CategoryIndex(
        category_of={"a0": "dog", "a1": "dog", "b0": "cat", "b1": "cat"},
        C=2,
        J=2,
        balanced=True,
    )
    res = eta_squared(
        np.array([1.0, 1.2, 3.0, 3.2]),
        idx,
        image_ids=["a0", "a1", "b0", "b1"],
        model_id="m",
        dim=4,
    )
    assert res.model_id == "m" and res.dim == 4
    assert res.eta2 > 0.9
    with pytest.raises(ValidationError, match="image_ids"):
        eta_squared(np.ones(4), idx)


def test_eta_squared_validation():
    with pytest.raises(ValidationError, match="length"):
        eta_squared(np.ones(3), np.array([0, 1]))
    with pytest.raises(ValidationError, match="two categories"):
        eta_squared(np.array([1.0, 2.0]), np.array([0, 0]))


def test_eta_squared_matches_anova_identity():
    # eta^2 = SS_between / SS_total must equal the F-statistic route:
    # eta2 = df_b F / (df_b F + df_w).
    rng = np.random.default_rng(30)
    w = rng.normal(size=30)
    labels = np.repeat(np.arange(5), 6)
    w += labels * 0.8
    res = eta_squared(w, labels)
    from unidim.stats import oneway_anova

    groups = [w[labels == c] for c in range(5)]
    an = oneway_anova(groups, ci_resamples=0)
    via_f = (
        an.df_between
        * an.F
        / (an.df_between * an.F + an.df_within)
    )
    assert res.eta2 == pytest.approx(via_f, rel=1e-10)


def make_contents(n, seed=0, model_id="m"):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        b = float(rng.uniform(0.1, 1.0))
        w = float(rng.uniform(0.1, 1.0))
        out.append(
            DimensionContent(
                model_id=model_id,
                dim=k,
                eta2=b / (b + w),
                ss_between=b,
                ss_within=w,
                ss_total=b + w,
            )
        )
    return out


def test_decile_table_pooled_fractions():
    contents = make_contents(20)
    scores = list(np.linspace(0.0, 1.0, 20))
    rows = variance_fraction_by_decile(contents, scores)
    assert len(rows) == 10
    assert all(r["n_dimensions"] == 2 for r in rows)
    for r in rows:
        assert r["between_fraction"] + r["within_fraction"] == pytest.approx(1.0)
    # Lowest-score decile holds the two lowest-scored dimensions.
    expected = (
        (contents[0].ss_between + contents[1].ss_between)
        / (contents[0].ss_total + contents[1].ss_total)
    )
    assert rows[0]["between_fraction"] == pytest.approx(expected)


def test_decile_table_per_dimension_mean_variant():
    contents = make_contents(20, seed=1)
    scores = list(np.linspace(0.0, 1.0, 20))
    rows = variance_fraction_by_decile(contents, scores, per_dimension_mean=True)
    first = contents[:2]
    expected = np.mean([c.ss_between / c.ss_total for c in first])
    assert rows[0]["between_fraction"] == pytest.approx(expected)


def test_decile_table_excludes_degenerate_and_validates():
    contents = make_contents(12, seed=2)
    contents[3] = DimensionContent(
        model_id="m", dim=3, eta2=None, ss_between=0.0, ss_within=0.0, ss_total=0.0
    )
    rows = variance_fraction_by_decile(contents, [0.1] * 12)
    assert sum(r["n_dimensions"] for r in rows) == 11
    with pytest.raises(ValidationError, match="usable"):
        variance_fraction_by_decile(contents[:10], [0.1] * 10)
    with pytest.raises(ValidationError, match="align"):
        variance_fraction_by_decile(contents, [0.1] * 5)


def test_reconstruction_importance_dual_route():
    W = planted_blocks(40, 4, 3)
    S = W @ W.T
    imp = all_reconstruction_importances(S, W)
    assert imp.shape == (4,)
    assert (imp > 0).all()
    reduced = W.copy()
    reduced[:, 2] = 0.0
    direct = explained_variance(S, W) - explained_variance(S, reduced)
    assert reconstruction_importance(S, W, 2) == pytest.approx(direct)
    with pytest.raises(ValidationError):
        reconstruction_importance(S, W, 4)


def test_content_universality_correlations():
    contents = make_contents(9, seed=3, model_id="m0") + make_contents(
        9, seed=4, model_id="m1"
    )
    rng = np.random.default_rng(5)
    for i, c in enumerate(contents):
        c.universality_calibrated = float(rng.random())
        c.delta_r2 = 0.5 * c.universality_calibrated + 0.1 * float(rng.random())
    out = content_universality_correlations(contents)
    assert out["excluded_dimensions"] == 0
    expected_eta = spearman(
        [c.eta2 for c in contents],
        [c.universality_calibrated for c in contents],
    ).coefficient
    assert out["rho_eta2"] == pytest.approx(expected_eta)
    # delta_r2 was built to track the score, so both routes are strongly
    # positive, and the per-model median summarizes two model rhos.
    assert out["rho_delta_r2_pooled"] > 0.7
    assert "rho_delta_r2_per_model_median" in out


def test_content_correlations_exclusions_and_minimum():
    contents = make_contents(4, seed=6)
    for c in contents:
        c.universality_calibrated = 0.3
    contents[0] = DimensionContent(
        model_id="m", dim=0, eta2=None, ss_between=0.0, ss_within=0.0, ss_total=0.0
    )
    contents[1].universality_calibrated = None
    with pytest.raises(ValidationError, match="three"):
        content_universality_correlations(contents[:3])


def test_label_crosstab_bins_and_counts():
    labels = {k: ("semantic" if k < 4 else "visual") for k in range(8)}
    scores = [0.1 * k for k in range(8)]
    rows = label_crosstab(labels, scores, n_bins=4)
    assert len(rows) == 4
    # Scores rise with the dimension index, so the two lowest-scored
    # dimensions land in bin 1 and are both semantic.
    assert rows[0]["semantic"] == 2 and rows[0]["visual"] == 0
    assert rows[-1]["visual"] == 2 and rows[-1]["semantic"] == 0
    total = sum(r["semantic"] + r["visual"] + r["both"] + r["neither"] for r in rows)
    assert total == 8
    assert rows[0]["score_low"] == pytest.approx(0.0)
    assert rows[-1]["score_high"] == pytest.approx(0.7)


def test_label_crosstab_skips_out_of_range_and_validates():
    rows = label_crosstab({99: "semantic"}, [0.5, 0.6])
    assert rows == []
    with pytest.raises(ValidationError, match="labels"):
        label_crosstab({0: "colorful"}, [0.5, 0.6])
