"""Smoke tests for the Python bindings over the C++ core."""

import json
import math
import os
import tempfile

import numpy as np
import pytest

import profuse


def test_cox_loss_uniform_risks():
    # Equal log-risks: each event contributes log(risk-set size).
    loss = profuse.cox_loss([0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [True, True, False])
    assert loss == pytest.approx(math.log(3) + math.log(2), rel=1e-12)


def test_cox_loss_gradient_zero_sum():
    rng = np.random.default_rng(0)
    h = rng.normal(size=8)
    times = rng.uniform(1.0, 20.0, size=8)
    events = [True, False, True, True, False, True, True, False]
    grad = np.asarray(profuse.cox_loss_gradient(h, times, events))
    assert grad.shape == (8,)
    assert abs(grad.sum()) < 1e-12


def test_concordance_perfect_ranking():
    # Higher risk, earlier event: every comparable pair is concordant.
    c = profuse.concordance_index([3.0, 2.0, 1.0], [1.0, 2.0, 3.0], [True, True, True])
    assert c == 1.0


def test_concordance_matches_oracle():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(2, 12))
        h = rng.normal(size=n)
        times = rng.integers(1, 6, size=n).astype(float)
        events = [bool(b) for b in rng.integers(0, 2, size=n)]
        if not any(events):
            continue
        try:
            want = profuse.oracle_cindex(h, times, events)
        except Exception:
            with pytest.raises(Exception):
                profuse.concordance_index(h, times, events)
            continue
        assert profuse.concordance_index(h, times, events) == want


def test_roc_auc_hand_case():
    auc = profuse.roc_auc([0.9, 0.8, 0.3, 0.2], [True, False, True, False])
    assert auc == pytest.approx(0.75)


def test_fit_cph_recovers_sign():
    rng = np.random.default_rng(42)
    n = 400
    x = rng.normal(size=(n, 1))
    h = 0.9 * x[:, 0]
    times = rng.exponential(scale=np.exp(-h))
    events = [True] * n
    beta, converged, iterations = profuse.fit_cph(x, times, events)
    assert converged
    assert iterations >= 1
    assert abs(beta[0] - 0.9) < 0.2


def test_ttr_is_antitone_in_risk():
    assert profuse.ttr_from_log_risk(2.0) < profuse.ttr_from_log_risk(-2.0)


def test_early_stop_epoch():
    assert profuse.early_stop_epoch([10.0, 9.0, 7.0, 4.0, 2.0, 1.0, 0.5]) == 3
    assert profuse.early_stop_epoch([10.0, 6.0, 3.0, 1.5, 1.2, 1.1]) is None
    assert profuse.early_stop_epoch([10.0, 9.0, 7.0, 4.0, 2.0, 1.0, 0.5], min_epochs=4) != 3


def test_summarize():
    mean, sigma = profuse.summarize([0.7, 0.9])
    assert mean == pytest.approx(0.8)
    assert sigma == pytest.approx(0.1)


def test_run_cli_end_to_end():
    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "cohort")
        code = profuse.run_cli(
            ["synth", "--n", "60", "--seed", "3", "--out", data,
             "--pathology-dim", "8", "--radiology-dim", "12",
             "--sparse-nnz", "3", "--noise-band", "6",
             "--patches-min", "2", "--patches-max", "4",
             "--slices-min", "2", "--slices-max", "3"]
        )
        assert code == 0
        assert os.path.exists(os.path.join(data, "labels.csv"))

        config = os.path.join(tmp, "run.json")
        with open(config, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "model": {"latent_dim": 16, "layers": 1, "heads": 2,
                              "ffn_width": 32, "dropout": 0.0, "top_k": 3,
                              "pooled_dim": 8, "scorer_hidden": 8,
                              "radiology_hidden": 8},
                    "training": {"max_epochs": 3, "min_epochs_before_stop": 3,
                                 "patience": 2, "seed": 1},
                    "cv": {"k": 2},
                    "data": {"pathology_dim": 8, "radiology_dim": 12},
                },
                fh,
            )
        run_dir = os.path.join(tmp, "run")
        assert profuse.run_cli(["train", "--data", data, "--out", run_dir,
                                "--config", config]) == 0
        with open(os.path.join(run_dir, "metrics.json"), encoding="utf-8") as fh:
            metrics = json.load(fh)
        assert len(metrics["per_fold"]) == 2
        assert 0.0 <= metrics["c_index_mean"] <= 1.0

        assert profuse.run_cli(["--definitely-not-a-flag"]) == 2


def test_invalid_inputs_raise():
    with pytest.raises(Exception):
        profuse.cox_loss([0.0, 0.0], [1.0, 2.0], [False, False])  # no events
    with pytest.raises(Exception):
        profuse.concordance_index([1.0], [1.0, 2.0], [True, True])  # length mismatch
