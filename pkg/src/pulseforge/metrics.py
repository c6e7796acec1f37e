"""Heart-rate error metrics and the per-clip evaluation report."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ("clip_id", "hr_est", "hr_gt", "method")


def metrics(est, gt) -> dict[str, float]:
    """MAE, MAPE (percent), RMSE and Pearson rho between estimated and true BPM."""
    e = np.asarray(est, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if e.shape != g.shape or e.ndim != 1 or e.size == 0:
        raise ValueError(f"need two equal-length 1-D arrays, got {e.shape} and {g.shape}")
    if np.any(g <= 0):
        raise ValueError("ground-truth heart rates must be positive for MAPE")
    err = e - g
    rho = float("nan")
    if e.size >= 2 and e.std() > 0 and g.std() > 0:
        rho = float(np.corrcoef(e, g)[0, 1])
    return {
        "MAE": float(np.mean(np.abs(err))),
        "MAPE": float(100.0 * np.mean(np.abs(err) / g)),
        "RMSE": float(np.sqrt(np.mean(err**2))),
        "rho": rho,
    }


@dataclass
class EvalReport:
    rows: list[tuple[str, float, float, str]] = field(default_factory=list)

    def add(self, clip_id: str, hr_est: float, hr_gt: float, method: str) -> None:
        self.rows.append((clip_id, float(hr_est), float(hr_gt), method))

    def methods(self) -> list[str]:
        return sorted({r[3] for r in self.rows})

    def aggregates(self) -> dict[str, dict[str, float]]:
        out = {}
        for m in self.methods():
            est = [r[1] for r in self.rows if r[3] == m]
            gt = [r[2] for r in self.rows if r[3] == m]
            out[m] = {**metrics(est, gt), "n": len(est)}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for clip_id, est, gt, method in self.rows:
            w.writerow([clip_id, f"{est:.4f}", f"{gt:.4f}", method])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.aggregates(), indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str) -> EvalReport:
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {header}")
        rep = cls()
        for clip_id, est, gt, method in reader:
            rep.add(clip_id, float(est), float(gt), method)
        return rep
