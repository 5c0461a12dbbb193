"""Selection, PCA, templates, scan aggregation, cross-validation."""

import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hmogkit.matrix import FeatureMatrix
from hmogkit.pipeline import (
    MIN_TEMPLATE_VECTORS,
    PCA_FRACTIONS,
    SIGMA_FLOOR,
    EnrollmentError,
    PipelineError,
    PipelineParams,
    Template,
    build_template,
    cross_validate,
    fisher_scores,
    fit_feature_prep,
    load_templates,
    mrmr_select,
    nanmean_columns,
    pca_fit,
    save_templates,
    scan_aggregate,
    select_by_fisher,
)


def fm_of(values, users, sessions=None, t=None, columns=None):
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if columns is None:
        columns = tuple(f"f{j}" for j in range(values.shape[1]))
    sessions = sessions if sessions is not None else ["s01"] * n
    t = t if t is not None else np.arange(n) * 1000
    return FeatureMatrix(tuple(columns), values,
                         np.asarray(users, dtype=object),
                         np.asarray(sessions, dtype=object),
                         np.asarray(t, dtype=np.int64))


# ---------------------------------------------------------------- nan means

def test_nanmean_columns_silent_on_empty():
    values = np.array([[1.0, np.nan], [3.0, np.nan]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = nanmean_columns(values)
    assert out[0] == 2.0
    assert np.isnan(out[1])


def test_nanmean_columns_mixed():
    out = nanmean_columns(np.array([[1.0, 5.0], [np.nan, 7.0], [3.0, np.nan]]))
    assert_allclose(out, [2.0, 6.0])


# ---------------------------------------------------------------- fisher

def fisher_fixture():
    return fm_of([[0.0, 1.0], [2.0, 1.0], [4.0, 1.0], [6.0, 1.0]],
                 ["A", "A", "B", "B"])


def test_fisher_scores_hand_case():
    scores = fisher_scores(fisher_fixture())
    # per-user means 1 and 5, both variances 1 -> between 4 / within 1
    assert_allclose(scores[0], 4.0)
    assert scores[1] == 0.0  # constant feature


def test_fisher_scores_affine_invariance():
    rng = np.random.default_rng(2)
    values = rng.normal(0, 1, (20, 3))
    users = ["A"] * 10 + ["B"] * 10
    base = fisher_scores(fm_of(values, users))
    moved = fisher_scores(fm_of(values * 3.7 - 11.0, users))
    assert_allclose(moved, base, rtol=1e-9)


def test_fisher_scores_sparse_feature_zero():
    # user A contributes a single finite value: fewer than two users remain
    values = np.array([[1.0], [np.nan], [4.0], [6.0]])
    assert fisher_scores(fm_of(values, ["A", "A", "B", "B"]))[0] == 0.0


def test_fisher_scores_input_errors():
    with pytest.raises(PipelineError, match="two users"):
        fisher_scores(fm_of([[1.0], [2.0]], ["A", "A"]))
    with pytest.raises(PipelineError, match="two vectors"):
        fisher_scores(fm_of([[1.0], [2.0], [3.0]], ["A", "A", "B"]))


def test_select_by_fisher_prefix():
    scores = np.array([4.0, 1.0, 3.0, 2.0])
    cols = ["f0", "f1", "f2", "f3"]
    assert select_by_fisher(scores, cols, 1.0) == ["f0", "f2", "f3", "f1"]
    assert select_by_fisher(scores, cols, 0.5) == ["f0", "f2"]
    # mass 4/10 reached exactly by the first feature
    assert select_by_fisher(scores, cols, 0.4) == ["f0"]


def test_select_by_fisher_ties_stable():
    assert select_by_fisher(np.ones(3), ["a", "b", "c"], 0.3) == ["a"]
    assert select_by_fisher(np.ones(3), ["a", "b", "c"], 0.6) == ["a", "b"]


def test_select_by_fisher_prefix_nesting():
    rng = np.random.default_rng(9)
    scores = rng.uniform(0, 5, 12)
    cols = [f"f{i}" for i in range(12)]
    prev: set = set()
    for fraction in (0.2, 0.4, 0.6, 0.8, 0.95, 1.0):
        now = set(select_by_fisher(scores, cols, fraction))
        assert prev <= now
        prev = now


def test_select_by_fisher_degenerate():
    assert select_by_fisher(np.zeros(3), ["a", "b", "c"], 0.9) == []
    with pytest.raises(PipelineError):
        select_by_fisher(np.array([-1.0]), ["a"], 0.9)
    with pytest.raises(PipelineError):
        select_by_fisher(np.ones(2), ["a"], 0.9)


# ---------------------------------------------------------------- mrmr

def mrmr_fixture():
    # f0 separates the users exactly, f1 is constant, f2 duplicates f0
    labels = np.repeat([0.0, 10.0], 20)
    values = np.column_stack([labels, np.full(40, 7.0), labels])
    return fm_of(values, ["A"] * 20 + ["B"] * 20)


def test_mrmr_informative_feature_first():
    assert mrmr_select(mrmr_fixture(), 0.0) == ["f0"]


def test_mrmr_threshold_and_cap():
    fm = mrmr_fixture()
    assert mrmr_select(fm, 2.0) == []
    low = mrmr_select(fm, -0.5)
    assert low[0] == "f0" and set(low) == {"f0", "f1", "f2"}
    assert len(mrmr_select(fm, -0.5, max_features=2)) == 2


def test_mrmr_deterministic():
    fm = mrmr_fixture()
    assert mrmr_select(fm, 0.0) == mrmr_select(fm, 0.0)


# ---------------------------------------------------------------- pca

def test_pca_rank_one_structure():
    t = np.linspace(-1, 1, 30)
    basis = pca_fit(np.column_stack([t, 2 * t]), 1.0)
    assert basis.components.shape == (1, 2)
    assert_allclose(np.abs(basis.components[0]), np.sqrt(0.5), atol=1e-9)
    assert basis.components[0, 0] > 0  # deterministic sign


def test_pca_orthonormal_descending():
    rng = np.random.default_rng(4)
    x = rng.normal(0, 1, (60, 6)) @ rng.normal(0, 1, (6, 6))
    basis = pca_fit(x, 1.0)
    k = len(basis.variances)
    assert_allclose(basis.components @ basis.components.T, np.eye(k), atol=1e-9)
    assert np.all(np.diff(basis.variances) <= 1e-12)
    for row in basis.components:
        assert row[np.argmax(np.abs(row))] > 0
    assert_allclose(basis.transform(basis.center), np.zeros(k), atol=1e-9)


def test_pca_fraction_picks_minimal_k():
    rng = np.random.default_rng(8)
    x = rng.normal(0, 1, (80, 5)) * np.array([5.0, 3.0, 1.0, 0.5, 0.1])
    full = pca_fit(x, 1.0)
    total = full.variances.sum()
    for fraction in (0.5, 0.9, 0.98):
        basis = pca_fit(x, fraction)
        k = len(basis.variances)
        assert basis.variances.sum() >= fraction * total * (1 - 1e-9)
        if k > 1:
            assert basis.variances[:-1].sum() < fraction * total


def test_pca_transform_formula():
    rng = np.random.default_rng(6)
    x = rng.normal(2, 3, (40, 4))
    basis = pca_fit(x, 1.0)
    v = rng.normal(0, 1, 4)
    expected = ((v - basis.center) / basis.scale) @ basis.components.T
    assert_allclose(basis.transform(v), expected, atol=1e-12)


def test_pca_degenerate_constant_input():
    basis = pca_fit(np.ones((5, 3)), 0.95)
    assert basis.components.shape[0] == 1
    assert basis.variances[0] == 0.0


def test_pca_input_errors():
    with pytest.raises(PipelineError):
        pca_fit(np.ones((1, 3)), 0.9)
    with pytest.raises(PipelineError):
        pca_fit(np.array([[1.0, np.nan], [2.0, 3.0]]), 0.9)
    with pytest.raises(PipelineError):
        pca_fit(np.ones((4, 2)), 0.0)
    with pytest.raises(PipelineError):
        pca_fit(np.ones((4, 2)), 1.5)


# ---------------------------------------------------------------- feature prep

def test_fit_feature_prep_no_selector():
    fm = fm_of([[1.0, np.nan], [3.0, 4.0]], ["A", "B"])
    prep = fit_feature_prep(fm)
    assert prep.selected == ("f0", "f1")
    assert_allclose(prep.pooled_means, [2.0, 4.0])
    assert prep.pca is None
    assert_allclose(prep.project(np.array([np.nan, 7.0])), [2.0, 7.0])
    assert_allclose(prep.project(np.array([np.nan, 7.0]),
                                 impute_with=np.array([9.0, 9.0])), [9.0, 7.0])


def test_fit_feature_prep_fisher_subset():
    fm = fisher_fixture()
    prep = fit_feature_prep(fm, selector="fisher", selector_value=0.9)
    assert prep.selected == ("f0",)
    assert prep.project(np.array([5.0])).shape == (1,)


def test_fit_feature_prep_mrmr():
    prep = fit_feature_prep(mrmr_fixture(), selector="mrmr", selector_value=0.0)
    assert prep.selected == ("f0",)


def test_fit_feature_prep_pca():
    rng = np.random.default_rng(3)
    fm = fm_of(rng.normal(0, 1, (30, 4)), ["A"] * 15 + ["B"] * 15)
    prep = fit_feature_prep(fm, pca_fraction=1.0)
    assert prep.pca is not None
    out = prep.project(np.array([np.nan, 1.0, 2.0, np.nan]))
    assert out.shape == (len(prep.pca.variances),)
    assert np.all(np.isfinite(out))


def test_fit_feature_prep_errors():
    fm = fisher_fixture()
    with pytest.raises(PipelineError, match="selector"):
        fit_feature_prep(fm, selector="pca")
    constant = fm_of(np.ones((4, 2)), ["A", "A", "B", "B"])
    with pytest.raises(PipelineError, match="no features"):
        fit_feature_prep(constant, selector="fisher", selector_value=0.9)


# ---------------------------------------------------------------- templates

def test_build_template_hand_case():
    fm = fm_of([[1.0, np.nan], [3.0, 4.0]], ["A", "A"])
    t = build_template("A", fm, min_vectors=2)
    assert t.input_features == ("f0", "f1")
    assert_allclose(t.raw_means, [2.0, 4.0])
    assert_allclose(t.mu, [2.0, 4.0])
    assert_allclose(t.sigma, [1.0, SIGMA_FLOOR])  # constant column floored
    assert t.n_train == 2
    assert_allclose(t.project(np.array([np.nan, 10.0])), [2.0, 10.0])


def test_build_template_drops_empty_columns():
    fm = fm_of([[1.0, np.nan], [3.0, np.nan]], ["A", "A"])
    t = build_template("A", fm, min_vectors=2)
    assert t.input_features == ("f0",)
    assert_allclose(t.mu, [2.0])


def test_build_template_min_vectors():
    fm = fm_of([[1.0]], ["A"])
    with pytest.raises(EnrollmentError, match="1 training vectors"):
        build_template("A", fm, min_vectors=2)
    assert MIN_TEMPLATE_VECTORS == 80


def test_build_template_all_nan():
    fm = fm_of(np.full((3, 2), np.nan), ["A"] * 3)
    with pytest.raises(EnrollmentError, match="no finite"):
        build_template("A", fm, min_vectors=2)


def test_build_template_with_prep_keeps_dimensions():
    rng = np.random.default_rng(5)
    values = rng.normal(0, 1, (30, 4))
    values[:, 2] = np.nan  # hole for one user, pooled mean must fill it
    pooled_fm = fm_of(rng.normal(0, 1, (30, 4)), ["A"] * 15 + ["B"] * 15)
    prep = fit_feature_prep(pooled_fm, pca_fraction=1.0)
    t = build_template("A", fm_of(values, ["A"] * 30), prep, min_vectors=10)
    assert len(t.input_features) == 4
    assert t.raw_means[2] == prep.pooled_means[2]
    assert t.pca is prep.pca
    assert t.mu.shape == (len(prep.pca.variances),)
    assert np.all(np.isfinite(t.project(np.full(4, np.nan))))


# ---------------------------------------------------------------- scans

def scan_fixture():
    values = [[1.0, 10.0], [3.0, np.nan], [np.nan, 20.0], [7.0, 70.0]]
    return fm_of(values, ["A"] * 4, sessions=["s01"] * 4,
                 t=[0, 5000, 10000, 65000])


def test_scan_aggregate_hand_windows():
    out = scan_aggregate(scan_fixture(), 60.0)
    assert out.values.shape == (2, 2)
    assert list(out.t_ms) == [0, 60000]
    assert_allclose(out.values[0], [2.0, 15.0])
    assert_allclose(out.values[1], [7.0, 70.0])
    assert list(out.user_ids) == ["A", "A"]


def test_scan_aggregate_anchor():
    fm = fm_of([[1.0], [5.0]], ["A", "A"], t=[65000, 70000])
    out = scan_aggregate(fm, 60.0, anchor_ms=0)
    # both rows fall in the second window anchored at zero
    assert list(out.t_ms) == [60000]
    assert_allclose(out.values[0], [3.0])
    with pytest.raises(PipelineError, match="anchor"):
        scan_aggregate(fm, 60.0, anchor_ms=66000)


def test_scan_aggregate_sorts_input():
    fm = scan_fixture()
    shuffled = fm.take(np.array([3, 0, 2, 1]))
    out = scan_aggregate(shuffled, 60.0)
    assert list(out.t_ms) == [0, 60000]
    assert_allclose(out.values[0], [2.0, 15.0])


def test_scan_aggregate_drops_empty_windows():
    values = [[1.0], [np.nan], [5.0]]
    fm = fm_of(values, ["A"] * 3, t=[0, 61000, 122000])
    out = scan_aggregate(fm, 60.0)
    assert list(out.t_ms) == [0, 120000]


def test_scan_aggregate_edge_inputs():
    empty = FeatureMatrix.empty(("f0",))
    assert scan_aggregate(empty, 60.0).n_rows == 0
    with pytest.raises(PipelineError):
        scan_aggregate(empty, 0.0)


# ---------------------------------------------------------------- params + cv

def test_pipeline_params_validate():
    PipelineParams().validate()
    PipelineParams("fisher", 0.9).validate()
    PipelineParams(None, 1.0, 0.95).validate()
    with pytest.raises(PipelineError):
        PipelineParams("pca").validate()
    with pytest.raises(PipelineError):
        PipelineParams("fisher", 0.5).validate()
    with pytest.raises(PipelineError):
        PipelineParams(None, 1.0, 0.93).validate()
    assert 0.95 in PCA_FRACTIONS


def cv_fixture():
    rng = np.random.default_rng(12)
    n = 40
    rows, users, ts = [], [], []
    for u, level in (("A", 0.0), ("B", 10.0)):
        for i in range(n):
            rows.append([level + rng.normal(0, 0.1), rng.normal(0, 1)])
            users.append(u)
            ts.append(i * 2500)
    return fm_of(rows, users, t=ts)


def test_cross_validate_separable_data():
    grid = [PipelineParams(), PipelineParams("fisher", 0.9)]
    res = cross_validate(cv_fixture(), grid, scan_lengths=(10,), folds=2,
                         min_vectors=5)
    assert res.best in grid
    assert res.mean_eer.shape == (2, 1)
    assert res.mean_eer.min() <= 0.1
    assert len(res.winners) == 1
    assert sum(res.votes.values()) == 1
    assert res.winners[0] in (0, 1)


def test_cross_validate_errors():
    fm = cv_fixture()
    with pytest.raises(PipelineError, match="folds"):
        cross_validate(fm, [PipelineParams()], folds=1)
    with pytest.raises(PipelineError, match="grid"):
        cross_validate(fm, [])
    with pytest.raises(PipelineError):
        cross_validate(fm, [PipelineParams("fisher", 0.5)], folds=2)


# ---------------------------------------------------------------- persistence

def test_template_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    fm = fm_of(rng.normal(0, 1, (30, 4)), ["A"] * 15 + ["B"] * 15)
    prep = fit_feature_prep(fm, pca_fraction=1.0)
    templates = {
        "A": build_template("A", fm.for_user("A"), prep, min_vectors=5),
        "B": build_template("B", fm.for_user("B"), min_vectors=5),
    }
    path = tmp_path / "templates.json"
    save_templates(str(path), templates, params_echo={"channel": "hmog"})
    loaded = load_templates(str(path))
    assert set(loaded) == {"A", "B"}
    for user in ("A", "B"):
        orig, back = templates[user], loaded[user]
        assert back.input_features == orig.input_features
        assert np.array_equal(back.mu, orig.mu)
        assert np.array_equal(back.sigma, orig.sigma)
        assert np.array_equal(back.raw_means, orig.raw_means)
        assert back.n_train == orig.n_train
    assert loaded["B"].pca is None
    assert np.array_equal(loaded["A"].pca.components, templates["A"].pca.components)


def test_load_templates_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other", "templates": {}}')
    with pytest.raises(PipelineError, match="format"):
        load_templates(str(path))
