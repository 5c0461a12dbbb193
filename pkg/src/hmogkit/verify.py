"""Distance scoring, score-level fusion, and error-rate curves.

Scores are distances: small means similar. FAR(th) is the fraction of
impostor distances <= th; FRR(th) is the fraction of genuine distances
above th. The EER is read off the piecewise-linear FAR/FRR polyline over
the pooled score values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .matrix import FeatureMatrix


class VerifyError(ValueError):
    pass


def sm_score(template, v: np.ndarray) -> float:
    """Scaled Manhattan distance in the template's prepared space."""
    w = template.project(v)
    return float(np.sum(np.abs(w - template.mu) / template.sigma))


def se_score(template, v: np.ndarray) -> float:
    """Scaled Euclidean distance in the template's prepared space."""
    w = template.project(v)
    return float(np.sqrt(np.sum(((w - template.mu) / template.sigma) ** 2)))


_METRICS = {"sm": sm_score, "se": se_score}


@dataclass(frozen=True)
class ScoreRecord:
    claimed: str
    actual: str
    t_ms: int
    score: float


@dataclass
class ScoreSet:
    genuine: list[ScoreRecord] = field(default_factory=list)
    impostor: list[ScoreRecord] = field(default_factory=list)

    def genuine_scores(self) -> np.ndarray:
        return np.array([r.score for r in self.genuine], dtype=np.float64)

    def impostor_scores(self) -> np.ndarray:
        return np.array([r.score for r in self.impostor], dtype=np.float64)

    def write_csv(self, path: str, header_comments: list[str] | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in header_comments or []:
                fh.write(f"# {line}\n")
            fh.write("kind,claimed,actual,t_ms,score\n")
            for kind, records in (("genuine", self.genuine), ("impostor", self.impostor)):
                for r in records:
                    fh.write(f"{kind},{r.claimed},{r.actual},{r.t_ms},"
                             f"{repr(float(r.score))}\n")

    @classmethod
    def read_csv(cls, path: str) -> "ScoreSet":
        out = cls()
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
        if not lines or lines[0] != "kind,claimed,actual,t_ms,score":
            raise VerifyError(f"{path}: unexpected header")
        for ln in lines[1:]:
            if not ln:
                continue
            kind, claimed, actual, t, score = ln.split(",")
            record = ScoreRecord(claimed, actual, int(t), float(score))
            (out.genuine if kind == "genuine" else out.impostor).append(record)
        return out


def gen_scores(templates: dict, auth: FeatureMatrix, metric: str = "sm") -> ScoreSet:
    """Score every authentication vector against every enrolled template.

    A vector is skipped for a template when it shares no finite cell with
    the template's input features (no evidence, no decision).
    """
    if metric not in _METRICS:
        raise VerifyError(f"unknown metric {metric!r}")
    score_fn = _METRICS[metric]
    out = ScoreSet()
    col_cache: dict[tuple[str, ...], np.ndarray] = {}
    for user, template in sorted(templates.items()):
        feats = template.input_features
        if feats not in col_cache:
            col_cache[feats] = np.array([auth.col_index(name) for name in feats])
        idx = col_cache[feats]
        block = auth.values[:, idx]
        finite_any = np.any(np.isfinite(block), axis=1)
        for i in np.flatnonzero(finite_any):
            record = ScoreRecord(claimed=user, actual=str(auth.user_ids[i]),
                                 t_ms=int(auth.t_ms[i]),
                                 score=score_fn(template, block[i]))
            if record.actual == user:
                out.genuine.append(record)
            else:
                out.impostor.append(record)
    return out


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def fuse(channel_scores: dict[str, float | None], weights: dict[str, float]) -> float:
    """Weighted sum over present channels with weights renormalized to the
    present subset. Raises when the present channels carry zero weight."""
    present = {c: s for c, s in channel_scores.items() if s is not None}
    if not present:
        raise VerifyError("no channel produced a score")
    wsum = sum(weights.get(c, 0.0) for c in present)
    if wsum <= 0:
        raise VerifyError("present channels carry zero weight")
    return sum(weights.get(c, 0.0) / wsum * s for c, s in present.items())


def minmax_normalize(scores: ScoreSet) -> tuple[ScoreSet, tuple[float, float]]:
    """Map the pooled scores onto [0, 1]; a degenerate pool maps to 0."""
    pooled = np.concatenate([scores.genuine_scores(), scores.impostor_scores()])
    if len(pooled) == 0:
        raise VerifyError("empty score set")
    lo, hi = float(pooled.min()), float(pooled.max())
    span = hi - lo

    def norm(records):
        return [ScoreRecord(r.claimed, r.actual, r.t_ms,
                            (r.score - lo) / span if span > 0 else 0.0)
                for r in records]

    return ScoreSet(norm(scores.genuine), norm(scores.impostor)), (lo, hi)


def fuse_scoresets(channels: dict[str, ScoreSet],
                   weights: dict[str, float]) -> ScoreSet:
    """Fuse per-channel score sets after min-max normalization.

    Decisions are aligned on (claimed, actual, t_ms); channels missing a
    decision are dropped from it and the remaining weights renormalized.
    Decisions whose present channels carry zero weight are excluded.
    """
    normalized = {name: minmax_normalize(s)[0] for name, s in channels.items()}
    keyed: dict[tuple[str, str, int], dict[str, float]] = {}
    for name, scores in normalized.items():
        for r in itertools.chain(scores.genuine, scores.impostor):
            keyed.setdefault((r.claimed, r.actual, r.t_ms), {})[name] = r.score
    out = ScoreSet()
    for (claimed, actual, t_ms), per_channel in sorted(keyed.items()):
        wsum = sum(weights.get(c, 0.0) for c in per_channel)
        if wsum <= 0:
            continue
        fused = sum(weights.get(c, 0.0) / wsum * s for c, s in per_channel.items())
        record = ScoreRecord(claimed, actual, t_ms, fused)
        (out.genuine if claimed == actual else out.impostor).append(record)
    return out


def weight_grid(channel_names, step: float = 0.05):
    """All nonnegative weight dicts over the channels summing to 1.0 on a
    fixed lattice, in deterministic order."""
    names = list(channel_names)
    ticks = round(1.0 / step)
    if abs(ticks * step - 1.0) > 1e-9:
        raise VerifyError("step must divide 1.0")

    def parts(remaining: int, slots: int):
        if slots == 1:
            yield (remaining,)
            return
        for head in range(remaining + 1):
            for tail in parts(remaining - head, slots - 1):
                yield (head,) + tail

    for combo in parts(ticks, len(names)):
        yield {name: k / ticks for name, k in zip(names, combo)}


def search_fusion_weights(channels: dict[str, ScoreSet], step: float = 0.05):
    """Grid-search fusion weights minimizing fused EER.

    Returns (weights, fused ScoreSet, eer). Ties keep the first grid point.
    """
    best = None
    for weights in weight_grid(sorted(channels), step):
        fused = fuse_scoresets(channels, weights)
        if not fused.genuine or not fused.impostor:
            continue
        value = eer(fused.genuine_scores(), fused.impostor_scores())
        if best is None or value < best[2]:
            best = (weights, fused, value)
    if best is None:
        raise VerifyError("no weighting produced a scored decision set")
    return best


# ---------------------------------------------------------------------------
# error rates
# ---------------------------------------------------------------------------

def _rates(genuine: np.ndarray, impostor: np.ndarray):
    """FAR and FRR evaluated at each pooled distinct score."""
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if len(genuine) == 0 or len(impostor) == 0:
        raise VerifyError("eer needs nonempty genuine and impostor scores")
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    g = np.sort(genuine)
    i = np.sort(impostor)
    far = np.searchsorted(i, thresholds, side="right") / len(i)
    frr = 1.0 - np.searchsorted(g, thresholds, side="right") / len(g)
    return thresholds, far, frr


def det_curve(genuine: np.ndarray, impostor: np.ndarray) -> np.ndarray:
    """(threshold, FAR, FRR) rows; FAR nondecreasing, FRR nonincreasing."""
    thresholds, far, frr = _rates(genuine, impostor)
    return np.column_stack([thresholds, far, frr])


def write_det_csv(path: str, det: np.ndarray,
                  header_comments: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_comments or []:
            fh.write(f"# {line}\n")
        fh.write("threshold,far,frr\n")
        for th, far, frr in det:
            fh.write(f"{repr(float(th))},{repr(float(far))},{repr(float(frr))}\n")


def eer(genuine: np.ndarray, impostor: np.ndarray) -> float:
    """Equal error rate of distance scores.

    FAR - FRR is nondecreasing along the threshold sweep; the EER is the
    common value where the interpolated polylines cross. A crossing on an
    exact FAR == FRR plateau reports that plateau value.
    """
    _, far, frr = _rates(genuine, impostor)
    # virtual left endpoint: threshold below every score
    far = np.concatenate([[0.0], far])
    frr = np.concatenate([[1.0], frr])
    diff = far - frr
    k = int(np.searchsorted(diff >= 0, True))  # first index with FAR >= FRR
    if k >= len(diff):
        return float(0.5 * (far[-1] + frr[-1]))
    if diff[k] == 0.0:
        return float(0.5 * (far[k] + frr[k]))
    if k == 0:
        return float(0.5 * (far[0] + frr[0]))
    d_far = far[k] - far[k - 1]
    d_frr = frr[k] - frr[k - 1]
    t = (frr[k - 1] - far[k - 1]) / (d_far - d_frr)
    return float(far[k - 1] + t * d_far)
