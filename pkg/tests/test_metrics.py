import math

import numpy as np
import pytest

from rtfnet.metrics import (
    BASELINES,
    INF,
    IMAGES,
    LEVELS,
    METHODS,
    MetricsRecord,
    baseline,
    best_method,
    compare_report,
    curves_to_csv,
    mse,
    psnr,
    psnr_from_mse,
    read_curves_csv,
    table_key,
)


def test_mse_cases():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0
    assert mse([0.0, 0.0], [1.0, 1.0]) == 1
    assert mse([0.0, 1.0], [1.0, 1.0]) == 0.5
    with pytest.raises(ValueError):
        mse([1.0], [1.0, 2.0])


def test_psnr_values():
    assert psnr_from_mse(1.0, 255.0) == pytest.approx(48.1308, abs=1e-3)
    assert psnr([0.2, 0.4], [0.2, 0.4]) == INF and math.isinf(INF)
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.full((4, 4), 255, dtype=np.uint8)
    assert psnr(a, b, 255.0) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        psnr_from_mse(1.0, 0.0)


def test_csv_header_only(tmp_path):
    curves_to_csv([], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "epoch,train_loss,val_loss,train_psnr,val_psnr\n"
    assert read_curves_csv(tmp_path / "c.csv") == []


def test_csv_first_epoch_row(tmp_path):
    rec = MetricsRecord(0, 0.0026, 0.0012, 25.707, 29.022)
    curves_to_csv([rec], tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[1] == "0,0.0026,0.0012,25.707,29.022"
    assert read_curves_csv(tmp_path / "c.csv") == [rec]


def test_csv_rejects_foreign_header(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_curves_csv(tmp_path / "x.csv")


def test_table_shape():
    assert len(BASELINES) == len(IMAGES) * len(LEVELS) == 12
    assert all(list(row) == list(METHODS) for row in BASELINES.values())


def test_table_spot_checks():
    assert baseline("Lena", 30, "Ours") == 38.87
    assert baseline("pepper", 0.3, "NLSF-CNN") == 32.99
    assert baseline("BSD300", 70, "Ours") == 34.96
    assert baseline("Pepper", 30, "Ours") == 31.70


def test_best_method():
    assert best_method("Pepper", 30) == ("NLSF-CNN", 32.99)
    name, value = best_method("Lena", 0.7)
    assert (name, value) == ("Ours", 32.85)
    assert all(v < 32.85 for m, v in BASELINES[("Lena", 70)].items() if m != "Ours")


def test_table_key_errors():
    with pytest.raises(KeyError):
        table_key("Baboon", 30)
    with pytest.raises(KeyError):
        table_key("Lena", 40)


def test_report_without_measurements():
    text = compare_report()
    lines = text.splitlines()
    assert "Measured" not in lines[0]
    assert len(lines) == 13
    pepper30 = next(l for l in lines if l.split()[:2] == ["Pepper", "30%"])
    assert "32.99*" in pepper30 and "31.70*" not in pepper30


def test_report_with_measurements():
    text = compare_report({("lena", 0.3): 40.0, ("Bridge", 50): 10.0})
    lines = text.splitlines()
    assert lines[0].split()[-1] == "Measured"
    lena = next(l for l in lines if l.split()[:2] == ["Lena", "30%"])
    assert lena.split()[-1] == "40.00*"
    bridge = next(l for l in lines if l.split()[:2] == ["Bridge", "50%"])
    assert bridge.split()[-1] == "10.00" and "28.26*" in bridge
    pepper = next(l for l in lines if l.split()[:2] == ["Pepper", "50%"])
    assert pepper.split()[-1] == "-"
