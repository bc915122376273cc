"""Evaluation metrics: missing rate, aggressiveness, unseen IoU / recall, MSE."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

ALPHAS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class MetricsConfig:
    C: float = 31.0
    alphas: tuple = ALPHAS
    T: int = 30

    def __post_init__(self):
        if self.C <= self.T:
            raise ValueError("C must exceed T")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ValueError("thresholds must lie in (0, 1)")


def _pairs(pairs):
    pairs = [(np.asarray(P, dtype=np.float64), np.asarray(E, dtype=np.float64)) for P, E in pairs]
    if not pairs:
        raise ValueError("no scenes to evaluate")
    for P, E in pairs:
        if P.shape != E.shape:
            raise ValueError(f"shape mismatch: {P.shape} vs {E.shape}")
    return pairs


def missing_rate(pairs) -> float:
    """Percent of pixels, pooled over scenes, predicted strictly later than ground truth."""
    pairs = _pairs(pairs)
    late = sum(int(np.count_nonzero(P > E)) for P, E in pairs)
    return 100.0 * late / sum(E.size for _, E in pairs)


def aggressiveness(pairs, C=31.0) -> float:
    """Mean of C - P over pixels whose ground truth is nonzero, pooled over scenes."""
    pairs = _pairs(pairs)
    total, count = 0.0, 0
    for P, E in pairs:
        sel = E != 0
        total += float(np.sum(C - P[sel]))
        count += int(np.count_nonzero(sel))
    if count == 0:
        raise ValueError("no evaluable pixels")
    return total / count


def predicted_set(P, T) -> np.ndarray:
    P = np.asarray(P)
    return (P > 0) & (P < T)


def unseen_iou(P, M, T) -> float:
    """|M & P_hat| / |M| with P_hat = {0 < P < T}."""
    M = np.asarray(M) != 0
    n = int(np.count_nonzero(M))
    if n == 0:
        raise ValueError("empty unseen mask: IoU undefined")
    return int(np.count_nonzero(M & predicted_set(P, T))) / n


def unseen_recall(ious, alphas=ALPHAS) -> dict:
    """Percent of unseen-containing scenes with IoU strictly above each threshold."""
    ious = np.asarray(list(ious), dtype=float)
    if ious.size == 0:
        raise ValueError("no scenes with unseen vehicles")
    return {float(a): 100.0 * np.count_nonzero(ious > a) / ious.size for a in alphas}


def mse_metric(pairs, masks=None) -> float:
    pairs = _pairs(pairs)
    if masks is None:
        num = sum(float(np.sum((P - E) ** 2)) for P, E in pairs)
        return num / sum(E.size for _, E in pairs)
    num, den = 0.0, 0
    for (P, E), m in zip(pairs, masks):
        m = np.asarray(m, dtype=bool)
        num += float(np.sum((P[m] - E[m]) ** 2))
        den += int(np.count_nonzero(m))
    return num / den if den else float("nan")


@dataclass
class EvalReport:
    name: str
    MR: float
    aggressiveness: float
    UR: dict
    MSE: float
    MSE_drivable: float = float("nan")
    n_scenes: int = 0
    n_unseen_scenes: int = 0
    rows: list = field(default_factory=list)

    def summary(self) -> dict:
        d = {"name": self.name, "MR": self.MR, "aggressiveness": self.aggressiveness}
        for a, v in self.UR.items():
            d[f"UR_{a:g}"] = v
        d.update({"MSE": self.MSE, "MSE_drivable": self.MSE_drivable,
                  "n_scenes": self.n_scenes, "n_unseen_scenes": self.n_unseen_scenes})
        return d

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "scenes": self.rows}, sort_keys=True,
                          indent=1)

    def to_csv(self) -> str:
        cols = ["scene", "late_px", "pixels", "aggr_sum", "aggr_px", "sq_err", "iou"]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for r in self.rows:
            wr.writerow([r.get(c, "") for c in cols])
        s = self.summary()
        wr.writerow(["summary"] + [f"{k}={s[k]}" for k in s if k != "name"])
        return buf.getvalue()


def build_report(name, preds, gts, masks, T, config: MetricsConfig | None = None,
                 scene_ids=None, drivable=None) -> EvalReport:
    """Metrics over a dataset of (P, E, M) triples."""
    config = config or MetricsConfig(T=T)
    pairs = list(zip(preds, gts))
    ious, rows = [], []
    ids = scene_ids or [str(i) for i in range(len(pairs))]
    for sid, (P, E), M in zip(ids, pairs, masks):
        P = np.asarray(P, dtype=float)
        E = np.asarray(E, dtype=float)
        sel = E != 0
        row = {"scene": sid, "late_px": int(np.count_nonzero(P > E)), "pixels": int(E.size),
               "aggr_sum": float(np.sum(config.C - P[sel])), "aggr_px": int(np.count_nonzero(sel)),
               "sq_err": float(np.sum((P - E) ** 2)), "iou": ""}
        if np.any(np.asarray(M) != 0):
            iou = unseen_iou(P, M, T)
            ious.append(iou)
            row["iou"] = iou
        rows.append(row)
    ur = unseen_recall(ious, config.alphas) if ious else {float(a): float("nan")
                                                          for a in config.alphas}
    return EvalReport(
        name=name,
        MR=missing_rate(pairs),
        aggressiveness=aggressiveness(pairs, config.C),
        UR=ur,
        MSE=mse_metric(pairs),
        MSE_drivable=mse_metric(pairs, drivable) if drivable is not None else float("nan"),
        n_scenes=len(pairs),
        n_unseen_scenes=len(ious),
        rows=rows,
    )


def format_table(reports) -> str:
    """Fixed-width summary table, one row per predictor."""
    reports = list(reports)
    alphas = list(reports[0].UR) if reports else list(ALPHAS)
    head = ["Method", "MR(%)", "Aggr"] + [f"UR{a:g}(%)" for a in alphas] + ["MSE"]
    lines = ["  ".join(f"{h:>12}" for h in head)]
    for r in reports:
        vals = [r.name, f"{r.MR:.2f}", f"{r.aggressiveness:.2f}"]
        vals += [f"{r.UR[a]:.2f}" for a in alphas] + [f"{r.MSE:.2f}"]
        lines.append("  ".join(f"{v:>12}" for v in vals))
    return "\n".join(lines)
