"""Training driver: scheduling, logging, divergence reporting, IoU."""

import csv

import numpy as np
import pytest

from sacnet.datagen import gen_pairs
from sacnet.errors import NumericError, ProtocolError
from sacnet.network import SACNet, SACNetConfig
from sacnet.train import (TrainResult, dataset_loss, iou, train_toy,
                          write_history_csv)


@pytest.fixture(scope="module")
def short_run():
    pairs = gen_pairs(2, 64, 20)
    model = SACNet(SACNetConfig.micro(64, seed=20))
    steps = []
    result = train_toy(model, pairs, 5, lr=1e-3, on_step=steps.append)
    return pairs, model, result, steps


def test_round_robin_schedule(short_run):
    _, _, result, steps = short_run
    assert [r["pair"] for r in result.history] == [0, 1, 0, 1, 0]
    assert steps == result.history


def test_loss_decreases(short_run):
    pairs, model, result, _ = short_run
    assert result.final_loss < result.initial_loss
    # final loss is a fresh whole-set evaluation of the trained model
    assert abs(dataset_loss(model, pairs) - result.final_loss) < 1e-12


def test_history_rows_complete(short_run):
    _, _, result, _ = short_run
    for k, row in enumerate(result.history):
        assert row["step"] == k
        total = row["bce"] + row["smoothness"] + row["dice"]
        assert abs(row["total"] - total) < 1e-9          # default unit weights
        assert np.isfinite(row["total"])


def test_history_csv(short_run, tmp_path):
    _, _, result, _ = short_run
    path = tmp_path / "log.csv"
    write_history_csv(result.history, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert abs(float(rows[2]["total"]) - result.history[2]["total"]) < 1e-7


def test_empty_inputs_rejected():
    model = SACNet(SACNetConfig.micro(64, seed=21))
    with pytest.raises(ProtocolError):
        train_toy(model, [], 5)
    with pytest.raises(ProtocolError):
        train_toy(model, gen_pairs(1, 64, 21), 0)


def test_divergence_reports_step():
    pairs = gen_pairs(1, 64, 22)
    model = SACNet(SACNetConfig.micro(64, seed=22))
    # absurd learning rate blows the loss up within a few steps
    with pytest.raises(NumericError) as e:
        train_toy(model, pairs, 50, lr=1e6)
    assert e.value.step is not None
    assert "step" in str(e.value)


def test_iou():
    a = np.zeros((4, 4))
    a[:2] = 1.0
    assert iou(a, a) == 1.0
    b = np.zeros((4, 4))
    b[1:3] = 1.0
    assert abs(iou(a, b) - (4 / 12)) < 1e-12
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0   # empty union
    assert iou(np.ones((3, 3)), np.zeros((3, 3))) == 0.0
    # threshold is inclusive
    assert iou(np.full((2, 2), 0.5), np.ones((2, 2)), threshold=0.5) == 1.0