import math

import numpy as np
import pytest

import bias_experts as bx


def small_spec(seed=0):
    s = bx.SyntheticSpec()
    s.n_train, s.n_id_test, s.n_ood_test = 600, 200, 200
    s.seed = seed
    return s


def test_generate_shapes_and_determinism():
    d = bx.generate(small_spec(3))
    x = d.train.features()
    assert x.shape == (600, d.train.feature_dim)
    assert x.dtype == np.float64
    assert len(d.train.labels()) == 600
    assert sum(d.train.class_counts()) == 600
    biased, conflicting = d.train.groups()
    assert len(biased) + len(conflicting) == 600
    assert bx.generate(small_spec(3)).train.fingerprint() == d.train.fingerprint()


def test_losses():
    loss, grad = bx.softmax_ce([10.0, 0.0, 0.0], 0)
    assert loss == pytest.approx(9.0796e-5, rel=1e-4)
    assert sum(grad) == pytest.approx(0.0, abs=1e-15)
    u = [1 / 3] * 3
    poe = bx.poe_loss([0.2, -0.5, 1.1], u, 2)
    assert poe[0] == pytest.approx(bx.softmax_ce([0.2, -0.5, 1.1], 2)[0], abs=1e-12)
    assert bx.amplification_weight(1.0, 0.3, False) == 0.0
    assert bx.amplification_weight(0.0, 0.0, True) == 1.0
    with pytest.raises(bx.DistributionError):
        bx.poe_loss([0.0, 0.0], [0.7, 0.7], 0)


def test_merge_and_balance():
    p = bx.merge_logits([2.0, 0.0, -2.0])
    assert p == pytest.approx([0.8668, 0.1173, 0.0159], abs=1e-4)
    q = bx.merge_logits([2.0, 0.0, -2.0], "softplus")
    assert math.fsum(q) == pytest.approx(1.0, abs=1e-12)
    assert bx.balance_weights(3) == pytest.approx((2 / 3, 1 / 3))


def test_split_ovr():
    d = bx.generate(small_spec(1))
    views = bx.split_ovr(d.train, "reweight")
    assert len(views) == 3
    counts = d.train.class_counts()
    for c, v in enumerate(views):
        assert v.target_class == c
        assert v.active_positives == counts[c]
        assert len(v.active_indices) == 600
        assert set(v.weights) <= {2 / 3, 1 / 3}
    under = bx.split_ovr(d.train, "undersample", seed=2)
    assert all(v.active_positives == v.active_negatives for v in under)


def test_run_returns_report():
    cfg = {"dataset": {"n_train": 600, "n_id_test": 200, "n_ood_test": 200}, "train": {"epochs": 1}}
    r = bx.run(cfg, seed=2)
    assert r["status"] == "ok"
    assert r["seed"] == 2
    assert 0.0 <= r["splits"]["ood_test"]["accuracy"] <= 100.0
    again = bx.run(cfg, seed=2)
    assert again["splits"] == r["splits"]


def test_config_errors():
    with pytest.raises(bx.ConfigError, match="config.train.alpha"):
        bx.resolve_config({"train": {"alpha": "high"}})
    assert bx.resolve_config(preset="qqp-like")["dataset"]["k"] == 2
    assert bx.default_config()["train"]["alpha"] == 0.2


def test_gen_data_command(tmp_path):
    cfg = {"dataset": {"n_train": 300, "n_id_test": 100, "n_ood_test": 100}, "out_dir": str(tmp_path)}
    code, log = bx.command("gen-data", cfg)
    assert code == 0
    assert (tmp_path / "dataset.csv").exists()
    back = bx.Dataset.read_csv(str(tmp_path / "dataset.csv"), 3)
    assert len(back) == 300
