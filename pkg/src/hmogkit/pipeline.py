"""Feature selection, projection, templates, scan aggregation, and
parameter cross-validation.

Selection and projection are fitted on pooled training data; templates are
per-user mean/stdev models over the resulting space. Missing cells are
imputed with template means at scoring time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .matrix import FeatureMatrix

SIGMA_FLOOR = 1e-6

FISHER_FRACTION_RANGE = (0.80, 1.00)
PCA_FRACTIONS = (0.90, 0.95, 0.98, 1.00)
SCAN_SECONDS = (20, 40, 60, 80, 100, 120, 140)

MIN_TEMPLATE_VECTORS = 80


class PipelineError(ValueError):
    """Bad pipeline input (too few users/vectors, unusable parameters)."""


class EnrollmentError(PipelineError):
    """Too few training vectors to build a template."""


def nanmean_columns(values: np.ndarray) -> np.ndarray:
    """Column means over finite cells; NaN where a column has none.
    Unlike np.nanmean this stays silent on empty columns."""
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    counts = finite.sum(axis=0)
    sums = np.where(finite, values, 0.0).sum(axis=0)
    return np.divide(sums, counts, out=np.full(values.shape[1], np.nan),
                     where=counts > 0)


# ---------------------------------------------------------------------------
# Fisher-score selection
# ---------------------------------------------------------------------------

def fisher_scores(fm: FeatureMatrix) -> np.ndarray:
    """Between-user variance of per-user means over mean within-user
    variance, per feature. Variances are population form; the denominator
    is floored at SIGMA_FLOOR**2. Features with fewer than two users
    contributing two finite values each score 0."""
    users = fm.users()
    if len(users) < 2:
        raise PipelineError("fisher scores need at least two users")
    per_user = [fm.for_user(u).values for u in users]
    if any(len(block) < 2 for block in per_user):
        raise PipelineError("fisher scores need at least two vectors per user")
    d = fm.n_features
    scores = np.zeros(d)
    for j in range(d):
        means, variances = [], []
        for block in per_user:
            col = block[:, j]
            col = col[np.isfinite(col)]
            if len(col) < 2:
                continue
            means.append(col.mean())
            variances.append(col.var())
        if len(means) < 2:
            continue
        between = np.var(means)
        within = np.mean(variances)
        scores[j] = between / max(within, SIGMA_FLOOR ** 2)
    return scores


def select_by_fisher(scores: np.ndarray, columns, fraction: float) -> list[str]:
    """Smallest descending-score prefix whose score mass reaches
    fraction * total; ties keep the fixed column order. fraction >= 1
    selects everything."""
    columns = list(columns)
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(columns):
        raise PipelineError("scores and columns disagree")
    if np.any(scores < 0):
        raise PipelineError("fisher scores must be nonnegative")
    order = np.argsort(-scores, kind="stable")
    if fraction >= 1.0:
        return [columns[i] for i in order]
    total = float(scores.sum())
    target = fraction * total
    if target <= 0:
        return []
    cum = np.cumsum(scores[order])
    k = int(np.searchsorted(cum, target * (1 - 1e-12), side="left")) + 1
    return [columns[i] for i in order[:k]]


# ---------------------------------------------------------------------------
# mRMR selection (mutual-information difference form)
# ---------------------------------------------------------------------------

def _discretize_column(col: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-frequency bin codes; NaN -> -1."""
    codes = np.full(len(col), -1, dtype=np.int64)
    finite = np.isfinite(col)
    vals = col[finite]
    if len(vals) == 0:
        return codes
    edges = np.unique(np.quantile(vals, np.linspace(0, 1, n_bins + 1)[1:-1]))
    codes[finite] = np.searchsorted(edges, vals, side="right")
    return codes


def _mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """I(a; b) in bits over rows where both codes are known (>= 0)."""
    mask = (a >= 0) & (b >= 0)
    if not np.any(mask):
        return 0.0
    a = a[mask]
    b = b[mask]
    n = len(a)
    na = a.max() + 1
    nb = b.max() + 1
    joint = np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb) / n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(pa, pb)
    return float(np.sum(joint[nz] * np.log2(joint[nz] / outer[nz])))


def mrmr_select(fm: FeatureMatrix, threshold: float, *, n_bins: int = 10,
                max_features: int | None = None) -> list[str]:
    """Greedy max-relevance min-redundancy selection.

    Candidate score = I(feature; user) - mean I(feature; already selected);
    stops when the best score drops to the threshold or below. Features are
    discretized into equal-frequency bins; user labels are the classes.
    """
    users = {u: i for i, u in enumerate(fm.users())}
    labels = np.array([users[u] for u in fm.user_ids], dtype=np.int64)
    codes = [_discretize_column(fm.values[:, j], n_bins) for j in range(fm.n_features)]
    relevance = np.array([_mutual_information(codes[j], labels)
                          for j in range(fm.n_features)])
    selected: list[int] = []
    pairwise: dict[tuple[int, int], float] = {}
    candidates = list(range(fm.n_features))
    while candidates:
        if max_features is not None and len(selected) >= max_features:
            break
        best_j, best_score = None, -np.inf
        for j in candidates:
            if selected:
                redundancy = np.mean([
                    pairwise.setdefault((j, s), _mutual_information(codes[j], codes[s]))
                    for s in selected])
            else:
                redundancy = 0.0
            score = relevance[j] - redundancy
            if score > best_score:
                best_j, best_score = j, score
        if best_score <= threshold:
            break
        selected.append(best_j)
        candidates.remove(best_j)
    return [fm.columns[j] for j in selected]


# ---------------------------------------------------------------------------
# PCA on standardized features
# ---------------------------------------------------------------------------

@dataclass
class PcaBasis:
    center: np.ndarray       # (d,) feature means
    scale: np.ndarray        # (d,) feature stdevs, floored
    components: np.ndarray   # (k, d) orthonormal rows
    variances: np.ndarray    # (k,) descending eigenvalues

    def transform(self, v: np.ndarray) -> np.ndarray:
        return ((np.asarray(v, dtype=np.float64) - self.center) / self.scale) @ self.components.T


def pca_fit(x: np.ndarray, variance_fraction: float) -> PcaBasis:
    """Top-k eigenvectors of the sample covariance of standardized
    features, k minimal with cumulative variance >= fraction * total."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise PipelineError("pca needs a (n >= 2, d) matrix")
    if not np.all(np.isfinite(x)):
        raise PipelineError("pca input must be finite (impute first)")
    if not 0 < variance_fraction <= 1.0:
        raise PipelineError(f"variance fraction must be in (0, 1], got {variance_fraction}")
    center = x.mean(axis=0)
    scale = np.maximum(x.std(axis=0), SIGMA_FLOOR)
    xs = (x - center) / scale
    cov = np.cov(xs, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w = np.maximum(w[order], 0.0)
    v = v[:, order]
    tol = max(len(w), 1) * np.finfo(np.float64).eps * (w[0] if len(w) else 0.0)
    w[w <= tol] = 0.0
    nonzero = int(np.count_nonzero(w))
    total = float(w.sum())
    if total == 0:
        k = 1
    else:
        cum = np.cumsum(w[:nonzero])
        k = int(np.searchsorted(cum, variance_fraction * total * (1 - 1e-12), side="left")) + 1
        k = min(k, nonzero)
    components = v[:, :k].T.copy()
    # deterministic sign: largest-magnitude entry of each component positive
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1
    return PcaBasis(center=center, scale=scale, components=components, variances=w[:k])


# ---------------------------------------------------------------------------
# fitted preparation (selection + optional PCA) and per-user templates
# ---------------------------------------------------------------------------

@dataclass
class FeaturePrep:
    selected: tuple[str, ...]
    pooled_means: np.ndarray          # per selected feature, for imputation
    pca: PcaBasis | None = None

    def project(self, v: np.ndarray, impute_with: np.ndarray | None = None) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).copy()
        fill = self.pooled_means if impute_with is None else impute_with
        missing = ~np.isfinite(v)
        v[missing] = fill[missing]
        return self.pca.transform(v) if self.pca is not None else v


def fit_feature_prep(fm: FeatureMatrix, *, selector: str | None = None,
                     selector_value: float = 1.0,
                     pca_fraction: float | None = None) -> FeaturePrep:
    """Fit selection and projection on pooled training data."""
    if selector is None:
        selected = list(fm.columns)
    elif selector == "fisher":
        selected = select_by_fisher(fisher_scores(fm), fm.columns, selector_value)
    elif selector == "mrmr":
        selected = mrmr_select(fm, selector_value)
    else:
        raise PipelineError(f"unknown selector {selector!r}")
    if not selected:
        raise PipelineError("selection kept no features")
    sub = fm.select_columns(selected)
    pooled = nanmean_columns(sub.values)
    pooled = np.where(np.isfinite(pooled), pooled, 0.0)
    pca = None
    if pca_fraction is not None:
        x = sub.values.copy()
        mask = ~np.isfinite(x)
        x[mask] = np.broadcast_to(pooled, x.shape)[mask]
        pca = pca_fit(x, pca_fraction)
    return FeaturePrep(selected=tuple(selected), pooled_means=pooled, pca=pca)


@dataclass
class Template:
    """Per-user verification template in the prepared feature space."""

    user_id: str
    input_features: tuple[str, ...]
    raw_means: np.ndarray             # imputation values in input space
    mu: np.ndarray                    # mean in prepared space
    sigma: np.ndarray                 # population stdev, floored
    n_train: int
    pca: PcaBasis | None = None

    def project(self, v: np.ndarray) -> np.ndarray:
        """Impute missing input cells with the template mean, then apply
        the projection the template was built in."""
        v = np.asarray(v, dtype=np.float64).copy()
        missing = ~np.isfinite(v)
        v[missing] = self.raw_means[missing]
        return self.pca.transform(v) if self.pca is not None else v


def build_template(user_id: str, fm: FeatureMatrix, prep: FeaturePrep | None = None,
                   *, min_vectors: int = MIN_TEMPLATE_VECTORS) -> Template:
    """Mean/stdev template from one user's training vectors.

    Raises EnrollmentError below min_vectors. Without a prep, features with
    no finite training value are dropped; with PCA the pooled training mean
    fills such gaps so dimensions stay aligned.
    """
    if fm.n_rows < min_vectors:
        raise EnrollmentError(
            f"{user_id}: {fm.n_rows} training vectors < required {min_vectors}")
    sub = fm.select_columns(prep.selected) if prep is not None else fm
    values = sub.values
    columns = list(sub.columns)
    raw_means = nanmean_columns(values)
    pca = prep.pca if prep is not None else None
    if pca is None:
        usable = np.isfinite(raw_means)
        if not np.any(usable):
            raise EnrollmentError(f"{user_id}: no finite training data")
        values = values[:, usable]
        columns = [c for c, u in zip(columns, usable) if u]
        raw_means = raw_means[usable]
    else:
        holes = ~np.isfinite(raw_means)
        raw_means = np.where(holes, prep.pooled_means, raw_means)
    filled = values.copy()
    mask = ~np.isfinite(filled)
    filled[mask] = np.broadcast_to(raw_means, filled.shape)[mask]
    projected = filled if pca is None else pca.transform(filled)
    mu = projected.mean(axis=0)
    sigma = np.maximum(projected.std(axis=0), SIGMA_FLOOR)
    return Template(user_id=user_id, input_features=tuple(columns),
                    raw_means=raw_means, mu=mu, sigma=sigma,
                    n_train=fm.n_rows, pca=pca)


# ---------------------------------------------------------------------------
# scan aggregation
# ---------------------------------------------------------------------------

def scan_aggregate(fm: FeatureMatrix, t_seconds: float,
                   anchor_ms: int | None = None) -> FeatureMatrix:
    """Feature-wise mean over consecutive non-overlapping t-second windows.

    Windows start at the first vector's timestamp unless an anchor is
    given. Only windows holding at least one vector produce output; the
    output timestamp is the window start. Aggregates with no finite cell
    are dropped.
    """
    if t_seconds <= 0:
        raise PipelineError("scan length must be positive")
    if fm.n_rows == 0:
        return FeatureMatrix.empty(fm.columns)
    order = np.argsort(fm.t_ms, kind="stable")
    fm = fm.take(order)
    anchor = int(fm.t_ms[0]) if anchor_ms is None else int(anchor_ms)
    if fm.t_ms[0] < anchor:
        raise PipelineError("anchor is later than the first vector")
    span = int(t_seconds * 1000)
    idx = (fm.t_ms - anchor) // span
    rows, users, sessions, ts = [], [], [], []
    for w in np.unique(idx):
        block = fm.values[idx == w]
        agg = nanmean_columns(block)
        if not np.any(np.isfinite(agg)):
            continue
        rows.append(agg)
        where = np.flatnonzero(idx == w)[0]
        users.append(fm.user_ids[where])
        sessions.append(fm.session_ids[where])
        ts.append(anchor + int(w) * span)
    if not rows:
        return FeatureMatrix.empty(fm.columns)
    return FeatureMatrix(fm.columns, np.array(rows), np.array(users, dtype=object),
                         np.array(sessions, dtype=object), np.array(ts, dtype=np.int64))


# ---------------------------------------------------------------------------
# grid cross-validation with majority vote across scan lengths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineParams:
    selector: str | None = None          # None | 'fisher' | 'mrmr'
    selector_value: float = 1.0
    pca_fraction: float | None = None

    def validate(self) -> "PipelineParams":
        if self.selector not in (None, "fisher", "mrmr"):
            raise PipelineError(f"unknown selector {self.selector!r}")
        if self.selector == "fisher":
            lo, hi = FISHER_FRACTION_RANGE
            if not lo <= self.selector_value <= hi:
                raise PipelineError(
                    f"fisher fraction {self.selector_value} outside [{lo}, {hi}]")
        if self.pca_fraction is not None and not any(
                abs(self.pca_fraction - f) < 1e-9 for f in PCA_FRACTIONS):
            raise PipelineError(f"pca fraction {self.pca_fraction} not in {PCA_FRACTIONS}")
        return self


@dataclass
class CvResult:
    best: PipelineParams
    mean_eer: np.ndarray        # (grid, scans)
    winners: list[int]          # winning grid index per scan length
    votes: dict[int, int]
    mean_feature_count: np.ndarray


def _chronological_folds(fm: FeatureMatrix, folds: int) -> list[np.ndarray]:
    """Per-user row indices split into `folds` time-ordered blocks, merged
    across users per fold."""
    per_fold: list[list[int]] = [[] for _ in range(folds)]
    for user in fm.users():
        rows = np.flatnonzero(fm.user_ids == user)
        rows = rows[np.argsort(fm.t_ms[rows], kind="stable")]
        for f, block in enumerate(np.array_split(rows, folds)):
            per_fold[f].extend(block.tolist())
    return [np.array(sorted(block), dtype=np.int64) for block in per_fold]


def cross_validate(fm: FeatureMatrix, grid: list[PipelineParams],
                   scan_lengths=SCAN_SECONDS, *, folds: int = 10,
                   metric: str = "sm",
                   min_vectors: int = MIN_TEMPLATE_VECTORS) -> CvResult:
    """Mean EER per (grid point, scan length) over chronological folds.

    Infeasible combinations score 0.5 for the fold. The winner per scan
    length has the lowest mean EER; the final choice is the majority vote
    across scan lengths, ties broken toward fewer selected features, then
    lower PCA fraction, then grid order.
    """
    if not grid:
        raise PipelineError("empty parameter grid")
    if folds < 2:
        raise PipelineError("cross-validation needs at least two folds")
    for params in grid:
        params.validate()
    scan_lengths = list(scan_lengths)
    fold_rows = _chronological_folds(fm, folds)
    sums = np.zeros((len(grid), len(scan_lengths)))
    feature_counts = np.zeros(len(grid))
    feature_samples = np.zeros(len(grid))

    for f in range(folds):
        test_idx = fold_rows[f]
        train_idx = np.concatenate([fold_rows[g] for g in range(folds) if g != f])
        train = fm.take(np.sort(train_idx))
        test = fm.take(np.sort(test_idx)) if len(test_idx) else None
        for g, params in enumerate(grid):
            eers = _fold_eers(train, test, params, scan_lengths, metric, min_vectors,
                              feature_counts, feature_samples, g)
            sums[g] += eers
    mean_eer = sums / folds

    avg_features = np.where(feature_samples > 0, feature_counts / np.maximum(feature_samples, 1),
                            np.inf)

    def tie_key(g: int, s: int):
        params = grid[g]
        pca = params.pca_fraction if params.pca_fraction is not None else 1.0
        return (mean_eer[g, s], avg_features[g], pca, g)

    winners = [min(range(len(grid)), key=lambda g, s=s: tie_key(g, s))
               for s in range(len(scan_lengths))]
    votes: dict[int, int] = {}
    for w in winners:
        votes[w] = votes.get(w, 0) + 1
    top = max(votes.values())
    tied = [g for g, c in votes.items() if c == top]
    best = min(tied, key=lambda g: (avg_features[g],
                                    grid[g].pca_fraction if grid[g].pca_fraction is not None else 1.0,
                                    g))
    return CvResult(best=grid[best], mean_eer=mean_eer, winners=winners,
                    votes=votes, mean_feature_count=avg_features)


def _fold_eers(train: FeatureMatrix, test: FeatureMatrix | None,
               params: PipelineParams, scan_lengths, metric: str,
               min_vectors: int, feature_counts, feature_samples, g: int) -> np.ndarray:
    from . import verify

    infeasible = np.full(len(scan_lengths), 0.5)
    if test is None or test.n_rows == 0:
        return infeasible
    try:
        prep = fit_feature_prep(train, selector=params.selector,
                                selector_value=params.selector_value,
                                pca_fraction=params.pca_fraction)
    except PipelineError:
        return infeasible
    feature_counts[g] += len(prep.selected)
    feature_samples[g] += 1
    templates = {}
    for user in train.users():
        try:
            templates[user] = build_template(user, train.for_user(user), prep,
                                             min_vectors=min_vectors)
        except EnrollmentError:
            continue
    if len(templates) < 2:
        return infeasible
    eers = np.empty(len(scan_lengths))
    for s, scan in enumerate(scan_lengths):
        parts = []
        for user in test.users():
            user_rows = test.for_user(user)
            for session in sorted(set(user_rows.session_ids.tolist())):
                block = user_rows.take(user_rows.session_ids == session)
                agg = scan_aggregate(block.select_columns(prep.selected), scan)
                if agg.n_rows:
                    parts.append(agg)
        if not parts:
            eers[s] = 0.5
            continue
        scores = verify.gen_scores(templates, FeatureMatrix.vstack(parts), metric=metric)
        try:
            eers[s] = verify.eer(scores.genuine_scores(), scores.impostor_scores())
        except ValueError:
            eers[s] = 0.5
    return eers


# ---------------------------------------------------------------------------
# template serialization
# ---------------------------------------------------------------------------

_TEMPLATE_FORMAT = "hmogkit-templates-1"


def _pca_to_dict(pca: PcaBasis | None):
    if pca is None:
        return None
    return {
        "center": pca.center.tolist(),
        "scale": pca.scale.tolist(),
        "components": pca.components.tolist(),   # row-major
        "variances": pca.variances.tolist(),
    }


def _pca_from_dict(blob) -> PcaBasis | None:
    if blob is None:
        return None
    return PcaBasis(center=np.array(blob["center"]), scale=np.array(blob["scale"]),
                    components=np.array(blob["components"]),
                    variances=np.array(blob["variances"]))


def save_templates(path: str, templates: dict[str, Template],
                   params_echo: dict | None = None) -> None:
    blob = {
        "format": _TEMPLATE_FORMAT,
        "params": params_echo or {},
        "templates": {
            user: {
                "input_features": list(t.input_features),
                "raw_means": t.raw_means.tolist(),
                "mu": t.mu.tolist(),
                "sigma": t.sigma.tolist(),
                "n_train": t.n_train,
                "pca": _pca_to_dict(t.pca),
            }
            for user, t in sorted(templates.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_templates(path: str) -> dict[str, Template]:
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != _TEMPLATE_FORMAT:
        raise PipelineError(f"{path}: unknown template format {blob.get('format')!r}")
    out = {}
    for user, t in blob["templates"].items():
        out[user] = Template(
            user_id=user,
            input_features=tuple(t["input_features"]),
            raw_means=np.array(t["raw_means"]),
            mu=np.array(t["mu"]),
            sigma=np.array(t["sigma"]),
            n_train=t["n_train"],
            pca=_pca_from_dict(t["pca"]),
        )
    return out
