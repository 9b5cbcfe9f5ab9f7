"""Evaluation of a scored portfolio against observed claims."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

DEFAULT_BOUNDARIES = (0.3, 0.5)
DEFAULT_FRACTIONS = (1.0, 0.5, 0.2, 0.1)
THRESHOLDS = np.arange(101) / 100.0


def _vectors(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    return s, y


def pearson(x, y) -> float:
    x, y = _vectors(x, y)
    if x.size < 2:
        raise ValueError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("undefined correlation: constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks, so tied pairs count one half."""
    s, y = _vectors(scores, labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both positive and negative labels")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _check_boundaries(boundaries):
    b = [float(v) for v in boundaries]
    if any(not 0 < v < 1 for v in b) or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
        raise ValueError("group boundaries must be strictly increasing inside (0, 1)")
    return b


@dataclass
class GroupStats:
    boundaries: list
    contracts: list
    claims: list

    @property
    def ratios(self) -> list:
        return [c / n if n else float("nan") for c, n in zip(self.claims, self.contracts)]

    @property
    def labels(self) -> list:
        edges = [0.0, *self.boundaries, 1.0]
        names = [f"[{lo:g},{hi:g})" for lo, hi in zip(edges[:-1], edges[1:])]
        names[-1] = names[-1][:-1] + "]"
        return names

    def to_dict(self) -> dict:
        return {"boundaries": self.boundaries,
                "groups": [{"range": r, "contracts": n, "claims": c,
                            "claim_ratio": None if math.isnan(q) else q}
                           for r, n, c, q in zip(self.labels, self.contracts,
                                                 self.claims, self.ratios)]}


def group_stats(scores, labels, boundaries=DEFAULT_BOUNDARIES) -> GroupStats:
    """Contracts and claims in bins ``[0,b1), [b1,b2), ..., [bk,1]``."""
    s, y = _vectors(scores, labels)
    b = _check_boundaries(boundaries)
    group = np.searchsorted(np.asarray(b), s, side="right")
    k = len(b) + 1
    contracts = np.bincount(group, minlength=k)[:k]
    claims = np.bincount(group, weights=y, minlength=k)[:k]
    return GroupStats(b, [int(v) for v in contracts], [int(round(v)) for v in claims])


@dataclass
class ThresholdCurve:
    thresholds: np.ndarray
    contract_fraction: np.ndarray
    claim_ratio: np.ndarray  # NaN where no contract reaches the threshold

    def to_csv(self) -> str:
        lines = ["threshold,contract_fraction,claim_ratio"]
        for t, f, r in zip(self.thresholds, self.contract_fraction, self.claim_ratio):
            lines.append(f"{t:.2f},{f!r},{'nan' if np.isnan(r) else repr(float(r))}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds.tolist(),
                "contract_fraction": self.contract_fraction.tolist(),
                "claim_ratio": [None if np.isnan(r) else float(r) for r in self.claim_ratio]}


def threshold_curve(scores, labels) -> ThresholdCurve:
    s, y = _vectors(scores, labels)
    n = s.size
    fraction = np.empty(THRESHOLDS.size)
    ratio = np.empty(THRESHOLDS.size)
    for k, t in enumerate(THRESHOLDS):
        above = s >= t
        m = int(above.sum())
        fraction[k] = m / n if n else float("nan")
        ratio[k] = y[above].sum() / m if m else np.nan
    return ThresholdCurve(THRESHOLDS.copy(), fraction, ratio)


def top_fraction_table(scores, labels, fractions=DEFAULT_FRACTIONS) -> list:
    """Claim ratio among the ceil(f*N) highest scores; equal scores keep index order."""
    s, y = _vectors(scores, labels)
    order = np.lexsort((np.arange(s.size), -s))
    rows = []
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError("fractions must lie in (0, 1]")
        m = max(1, math.ceil(f * s.size - 1e-9))
        picked = order[:m]
        rows.append({"fraction": float(f), "contracts": int(m),
                     "claims": int(y[picked].sum()), "claim_ratio": float(y[picked].mean())})
    return rows


@dataclass
class RiskSummary:
    pearson: float
    auc: float
    top_fractions: list
    threshold_curve: ThresholdCurve

    def to_dict(self) -> dict:
        return {"pearson": self.pearson, "auc": self.auc, "top_fractions": self.top_fractions,
                "threshold_curve": self.threshold_curve.to_dict()}


def _summary(scores, labels) -> RiskSummary:
    return RiskSummary(pearson(scores, labels), roc_auc(scores, labels),
                       top_fraction_table(scores, labels), threshold_curve(scores, labels))


@dataclass
class EvalReport:
    n_submitted: int
    n_retained: int
    n_out_of_surface: int
    n_claims: int
    claim_ratio: float
    ours: RiskSummary
    groups: GroupStats
    insurer: RiskSummary | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "n_submitted": self.n_submitted,
            "n_retained": self.n_retained,
            "n_out_of_surface": self.n_out_of_surface,
            "n_claims": self.n_claims,
            "claim_ratio": self.claim_ratio,
            "risk": self.ours.to_dict(),
            "groups": self.groups.to_dict(),
        }
        if self.insurer is not None:
            out["insurer"] = self.insurer.to_dict()
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"contracts submitted : {self.n_submitted}",
            f"out of surface      : {self.n_out_of_surface}",
            f"retained            : {self.n_retained}",
            f"claims              : {self.n_claims} ({100 * self.claim_ratio:.2f}%)",
            "",
            f"{'':22}{'our risk':>12}" + (f"{'insurer':>12}" if self.insurer else ""),
            f"{'pearson':22}{self.ours.pearson:12.4f}"
            + (f"{self.insurer.pearson:12.4f}" if self.insurer else ""),
            f"{'auc':22}{self.ours.auc:12.4f}"
            + (f"{self.insurer.auc:12.4f}" if self.insurer else ""),
            "",
            "% of contracts  % of claims (ours)" + ("  % of claims (insurer)" if self.insurer else ""),
        ]
        for k, row in enumerate(self.ours.top_fractions):
            line = f"{100 * row['fraction']:14.0f}  {100 * row['claim_ratio']:18.2f}"
            if self.insurer:
                line += f"  {100 * self.insurer.top_fractions[k]['claim_ratio']:21.2f}"
            lines.append(line)
        lines += ["", "risk group      contracts   claims   claim ratio"]
        for name, n, c, r in zip(self.groups.labels, self.groups.contracts,
                                 self.groups.claims, self.groups.ratios):
            lines.append(f"{name:14}  {n:9d}  {c:7d}   {100 * r:10.2f}%")
        return "\n".join(lines) + "\n"


def build_report(scores, labels, insurer_scores=None, boundaries=DEFAULT_BOUNDARIES) -> EvalReport:
    """Assemble every metric; NaN scores are counted as out of surface and dropped."""
    s, y = _vectors(scores, labels)
    keep = ~np.isnan(s)
    s_kept, y_kept = s[keep], y[keep]
    insurer = None
    if insurer_scores is not None:
        ins = np.asarray(insurer_scores, dtype=float).ravel()
        if ins.shape != s.shape:
            raise ValueError("insurer scores must align with scores")
        insurer = _summary(ins[keep], y_kept)
    n_claims = int(y_kept.sum())
    return EvalReport(
        n_submitted=int(s.size),
        n_retained=int(keep.sum()),
        n_out_of_surface=int((~keep).sum()),
        n_claims=n_claims,
        claim_ratio=n_claims / max(1, int(keep.sum())),
        ours=_summary(s_kept, y_kept),
        groups=group_stats(s_kept, y_kept, boundaries),
        insurer=insurer,
    )
