import math

import numpy as np
import pandas as pd
import pytest

from vamce.audio import Waveform
from vamce.errors import ShapeError
from vamce.evaluation import (
    REPORT_COLUMNS,
    SDR_CAP_DB,
    EvalItem,
    EvalReport,
    evaluate_batch,
    print_medians,
    si_sdr,
)


def test_si_sdr_examples():
    s = np.array([1.0, 0.0, -1.0, 0.5])
    assert si_sdr(s, s) == SDR_CAP_DB
    assert si_sdr(s, 3.0 * s) == SDR_CAP_DB
    assert si_sdr(s, np.zeros(4)) == -SDR_CAP_DB
    # orthogonal residual of equal energy: 0 dB
    assert math.isclose(si_sdr([1.0, 0.0], [1.0, 1.0]), 0.0, abs_tol=1e-12)
    assert math.isclose(si_sdr([1.0, 0.0], [1.0, 0.1]), 20.0, rel_tol=1e-12)


def test_si_sdr_accepts_waveforms():
    x = np.random.default_rng(0).standard_normal(100)
    y = x + 0.1 * np.random.default_rng(1).standard_normal(100)
    assert si_sdr(Waveform(x), Waveform(y)) == si_sdr(x, y)


def test_si_sdr_is_scale_invariant():
    rng = np.random.default_rng(2)
    s = rng.standard_normal(1000)
    estimate = s + 0.3 * rng.standard_normal(1000)
    base = si_sdr(s, estimate)
    for alpha in [1e-3, 0.5, 2.0, 1e3]:
        assert math.isclose(si_sdr(s, alpha * estimate), base, abs_tol=1e-9)
        assert math.isclose(si_sdr(alpha * s, estimate), base, abs_tol=1e-9)


def test_si_sdr_decreases_with_noise_level():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(2000)
    noise = rng.standard_normal(2000)
    values = [si_sdr(s, s + level * noise) for level in [0.01, 0.1, 0.5, 1.0, 3.0]]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_si_sdr_guards():
    with pytest.raises(ShapeError):
        si_sdr(np.ones(10), np.ones(9))
    with pytest.raises(ValueError, match="all zeros"):
        si_sdr(np.zeros(10), np.ones(10))


def _items(n=7, seed=4):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        s = rng.standard_normal(500)
        noisy = s + rng.uniform(0.5, 2.0) * rng.standard_normal(500)
        estimate = s + rng.uniform(0.1, 1.0) * (noisy - s)
        method = "mcem" if i % 2 == 0 else "isnmf"
        items.append(EvalItem(f"test_{i:03d}", method, s, estimate, noisy))
    return items


def test_medians_match_a_sort_based_oracle():
    report = evaluate_batch(_items())
    for method, stats in report.medians().items():
        values = sorted(r.improvement_db for r in report.records if r.method == method)
        n = len(values)
        oracle = values[n // 2] if n % 2 else 0.5 * (values[n // 2 - 1] + values[n // 2])
        assert math.isclose(stats["improvement_db"], oracle, rel_tol=1e-12)
        assert stats["n_items"] == n
    assert set(report.medians()) == {"mcem", "isnmf"}
    for r in report.records:
        assert math.isclose(r.improvement_db, r.sdr_enhanced_db - r.sdr_noisy_db, abs_tol=1e-12)


def test_medians_do_not_depend_on_item_order():
    items = _items(9)
    forward = evaluate_batch(items).medians()
    backward = evaluate_batch(items[::-1]).medians()
    assert forward == backward


def test_empty_batch():
    with pytest.raises(ValueError, match="no pairs to evaluate"):
        evaluate_batch([])


def test_report_csv(tmp_path):
    report = evaluate_batch(_items(3))
    path = str(tmp_path / "report.csv")
    report.to_csv(path)
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == ",".join(REPORT_COLUMNS)
    df = pd.read_csv(path)
    assert list(df["id"]) == ["test_000", "test_001", "test_002"]
    assert np.allclose(df["sdr_enhanced_db"], report.to_frame()["sdr_enhanced_db"], rtol=1e-9)

    empty = str(tmp_path / "empty.csv")
    EvalReport([]).to_csv(empty)
    with open(empty, encoding="utf-8") as f:
        assert f.read().strip() == ",".join(REPORT_COLUMNS)


def test_print_medians(capsys):
    print_medians(evaluate_batch(_items(2)))
    out = capsys.readouterr().out
    assert "mcem" in out and "isnmf" in out
