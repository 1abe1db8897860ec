import math

import numpy as np
import pytest
from scipy.special import expit

from shf import ConfigError, NetworkSpec, NumericError, WeightVec
from shf import driver
from shf.batch import BatchSchedule
from shf.driver import (TrainConfig, TrainState, gamma_update, init_state, line_search, lm_update,
                        shf_iteration, train)
from shf.network import loss_at


def tiny_data(seed=0, n=96):
    r = np.random.default_rng(seed)
    z = r.standard_normal((n, 2))
    return expit(z @ r.standard_normal((2, 8)) * 2 + 0.3 * r.standard_normal((n, 8)))


TINY_SPEC = NetworkSpec((8, 4, 2, 4, 8))
TINY_CFG = dict(lambda1=0.1, n1=16, n_max=64, maxiter1=50, m0=4, seed=0)


def tiny_run(**overrides):
    X = tiny_data()
    cfg = TrainConfig(**{**TINY_CFG, **overrides})
    return train(cfg, TINY_SPEC, X[:64], X[64:80], X[80:])


@pytest.mark.parametrize("rho, expected", [(0.1, 10 / 0.98), (0.8, 9.8), (0.5, 10.0),
                                           (0.25, 10.0), (0.75, 10.0), (-math.inf, 10 / 0.98),
                                           (math.nan, 10 / 0.98)])
def test_lm_update(rho, expected):
    assert lm_update(10.0, rho, 0.98) == pytest.approx(expected, rel=1e-15)


def test_lm_update_example_value():
    assert lm_update(10.0, 0.1, 0.98) == pytest.approx(10.20408, abs=1e-5)


@pytest.mark.parametrize("gamma, expected", [(0.7, 0.7014), (0.949, 0.95), (0.95, 0.95)])
def test_gamma_update(gamma, expected):
    assert gamma_update(gamma) == pytest.approx(expected, rel=1e-15)


def test_line_search_newton_step_on_bowl():
    w = 3.0
    s, accepted, f_s = line_search(lambda s: 0.5 * (w - s * w) ** 2, 0.5 * w * w, -w * w)
    assert (s, accepted, f_s) == (1.0, True, 0.0)


def test_line_search_rejects_ascent():
    w = 3.0
    probes = []

    def phi(s):
        probes.append(s)
        return 0.5 * (w + s * w) ** 2

    s, accepted, _ = line_search(phi, 0.5 * w * w, w * w, max_halvings=20)
    assert not accepted
    assert len(probes) == 21
    assert s == 2.0 ** -20


def test_line_search_shortens_overlong_step():
    alpha, slope = 1e-4, 4.0 * -8.0
    s, accepted, f_s = line_search(lambda s: (1.0 - 8.0 * s) ** 4, 1.0, slope, alpha)
    assert accepted and s < 1
    assert (1.0 - 8.0 * s) ** 4 <= 1.0 + alpha * s * slope
    assert f_s == (1.0 - 8.0 * s) ** 4


def test_line_search_numeric_probe_counts_as_failure():
    def phi(s):
        if s > 0.3:
            raise NumericError("overflow")
        return 0.0 if s < 0.3 else math.nan

    s, accepted, _ = line_search(phi, 1.0, -1.0)
    assert accepted and s == 0.25


def test_zero_residual_fixed_point():
    spec = NetworkSpec((3, 2, 3))
    X = np.full((20, 3), 0.5)
    cfg = TrainConfig(n1=10, n_max=20, lambda1=1.0)
    state = TrainState(w=WeightVec.zeros(spec), d_prev=WeightVec.zeros(spec), lam=1.0, gamma=0.7,
                       schedule=BatchSchedule(10, 20, 0.5, 200),
                       batch_rng=np.random.default_rng(0), precon_rng=np.random.default_rng(1))
    rec = shf_iteration(state, cfg, X, X[:5])
    assert rec.lsmr_iters == 0 and rec.lsmr_reason == "normal_residual"
    assert state.w.norm() == 0.0
    assert rec.f_val == 0.0 and rec.f_batch_post == rec.f_batch_pre == 0.0


def test_tiny_net_halves_training_loss():
    rep = tiny_run(max_hf_iters=30)
    assert len(rep.records) == 30
    assert rep.train_loss <= 0.5 * rep.initial_train_loss
    # pinned from the first passing run (single-threaded)
    assert rep.initial_train_loss == pytest.approx(0.8044423620238342, rel=1e-12)
    assert rep.train_loss == pytest.approx(0.012847085955385935, rel=1e-3)


def test_deterministic_records():
    a = tiny_run(max_hf_iters=8)
    b = tiny_run(max_hf_iters=8)
    assert [r.as_dict(timing=False) for r in a.records] == [r.as_dict(timing=False) for r in b.records]
    np.testing.assert_array_equal(a.best_w.data, b.best_w.data)


def test_run_invariants():
    rep = tiny_run(max_hf_iters=40, drop=0.9)
    lams = [TINY_CFG["lambda1"]] + [r.lambda_ for r in rep.records]
    for prev, nxt in zip(lams, lams[1:]):
        ratio = nxt / prev
        assert any(ratio == pytest.approx(f, rel=1e-12) for f in (1.0, 0.9, 1 / 0.9))
    gammas = [r.gamma for r in rep.records]
    assert all(a <= b <= 0.95 for a, b in zip(gammas, gammas[1:]))
    ns = [r.n for r in rep.records]
    assert all(a <= b <= 64 for a, b in zip(ns, ns[1:]))
    best = np.minimum.accumulate([r.f_val for r in rep.records])
    assert best[-1] == pytest.approx(rep.val_loss, rel=1e-12)
    for r in rep.records:
        if r.accepted:
            assert r.f_batch_post <= r.f_batch_pre
        assert r.step in {2.0 ** -j for j in range(21)} or r.step == 0.0


def test_reported_losses_use_best_weights():
    X = tiny_data()
    rep = tiny_run(max_hf_iters=10)
    assert rep.test_loss == loss_at(rep.best_w, X[80:])
    assert rep.val_loss == min(r.f_val for r in rep.records)


def test_patience_one_stops_after_val_rises():
    train_x = np.full((32, 8), 0.05)
    val_x = np.full((8, 8), 0.95)
    cfg = TrainConfig(lambda1=1.0, n1=8, n_max=32, maxiter1=20, m0=4, patience=1)
    rep = train(cfg, NetworkSpec((8, 4, 8)), train_x, val_x, val_x)
    assert len(rep.records) == 2
    assert rep.records[1].f_val > rep.records[0].f_val
    assert rep.best_iter == 1 and rep.stopped_by == "patience"


def test_iteration_cap():
    rep = tiny_run(max_hf_iters=5)
    assert len(rep.records) == 5 and rep.stopped_by == "max_iters"


def test_wall_clock_cap():
    rep = tiny_run(max_wall_seconds=0.0)
    assert len(rep.records) == 1 and rep.stopped_by == "wall_clock"


def test_empty_split_rejected():
    X = tiny_data()
    with pytest.raises(ConfigError):
        train(TrainConfig(**TINY_CFG), TINY_SPEC, X[:64], X[:0], X[80:])
    with pytest.raises(ConfigError):
        train(TrainConfig(**TINY_CFG), TINY_SPEC, X[:64, :4], X[64:80], X[80:])


def test_numeric_failure_skips_step(monkeypatch):
    def boom(*args, **kwargs):
        raise NumericError("bad", where=3)

    monkeypatch.setattr(driver, "lsmr_solve", boom)
    X = tiny_data()
    cfg = TrainConfig(**TINY_CFG)
    state = init_state(cfg, TINY_SPEC, 64)
    w0 = state.w.copy()
    rec = shf_iteration(state, cfg, X[:64], X[64:80])
    assert rec.lsmr_reason == "numeric_failure" and not rec.accepted
    assert state.lam == pytest.approx(cfg.lambda1 / cfg.drop)
    np.testing.assert_array_equal(state.w.data, w0.data)


@pytest.mark.parametrize("bad", [dict(drop=1.5), dict(gamma1=0.0), dict(alpha=1.0),
                                 dict(n1=10, n_max=5), dict(lambda1=-1.0), dict(theta=1.0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_record_dict_keys():
    rec = tiny_run(max_hf_iters=1).records[0]
    d = rec.as_dict(timing=False)
    assert d["t_wall"] is None and "lambda" in d and "lambda_" not in d
