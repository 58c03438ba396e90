from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from vamce.audio import Waveform
from vamce.errors import ShapeError
from vamce.utils.io import write_csv

SDR_CAP_DB = 60.0
REPORT_COLUMNS = ["id", "method", "sdr_noisy_db", "sdr_enhanced_db", "improvement_db"]

Signal = Union[Waveform, np.ndarray, Sequence[float]]


def _samples(x: Signal) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def si_sdr(reference: Signal, estimate: Signal) -> float:
    """
    Scale-invariant SDR in dB: the estimate is projected on the reference,
    s_t = <s_hat, s> / ||s||^2 * s, and the result is 10 log10(||s_t||^2 / ||s_hat - s_t||^2),
    clipped to +-60 dB. No mean removal.
    """
    s = _samples(reference)
    s_hat = _samples(estimate)
    if s.shape != s_hat.shape:
        raise ShapeError(f"si_sdr: reference has {s.size} samples, estimate has {s_hat.size}")
    reference_energy = float(np.dot(s, s))
    if reference_energy == 0.0:
        raise ValueError("si_sdr: reference signal is all zeros")

    target = (np.dot(s_hat, s) / reference_energy) * s
    residual = s_hat - target
    target_energy = float(np.dot(target, target))
    residual_energy = float(np.dot(residual, residual))
    if target_energy == 0.0:
        return -SDR_CAP_DB
    if residual_energy == 0.0:
        return SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(target_energy / residual_energy), -SDR_CAP_DB, SDR_CAP_DB))


@dataclass
class EvalItem:
    id: str
    method: str
    reference: Signal
    estimate: Signal
    noisy: Signal


@dataclass
class EvalRecord:
    id: str
    method: str
    sdr_noisy_db: float
    sdr_enhanced_db: float
    improvement_db: float


@dataclass
class EvalReport:
    records: List[EvalRecord]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=REPORT_COLUMNS)

    def medians(self) -> Dict[str, Dict[str, float]]:
        """Per-method medians of the three SDR columns."""
        out = {}
        for method in sorted({r.method for r in self.records}):
            rows = [r for r in self.records if r.method == method]
            out[method] = {
                "sdr_noisy_db": float(np.median([r.sdr_noisy_db for r in rows])),
                "sdr_enhanced_db": float(np.median([r.sdr_enhanced_db for r in rows])),
                "improvement_db": float(np.median([r.improvement_db for r in rows])),
                "n_items": len(rows),
            }
        return out

    def to_csv(self, path: str) -> pd.DataFrame:
        return write_csv([asdict(r) for r in self.records], path, REPORT_COLUMNS)


def evaluate_batch(items: Sequence[EvalItem]) -> EvalReport:
    if len(items) == 0:
        raise ValueError("evaluate_batch: no pairs to evaluate")
    records = []
    for item in items:
        noisy_db = si_sdr(item.reference, item.noisy)
        enhanced_db = si_sdr(item.reference, item.estimate)
        records.append(EvalRecord(str(item.id), item.method, noisy_db, enhanced_db, enhanced_db - noisy_db))
    return EvalReport(records)


def print_medians(report: EvalReport):
    for method, stats in report.medians().items():
        print(f"--- {method}: median SI-SDR noisy = {stats['sdr_noisy_db']:.2f} dB, "
              f"enhanced = {stats['sdr_enhanced_db']:.2f} dB, "
              f"improvement = {stats['improvement_db']:.2f} dB ({stats['n_items']} items)")
