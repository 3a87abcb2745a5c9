import numpy as np
import pytest

from qnnlab.derivatives import error_derivatives
from qnnlab.taskdata import errors, loss, orthogonal_dataset
from qnnlab.ansatz import build_rpa, init_params
from qnnlab.trainer import (ExperimentConfig, NumericalAbort, TrainingTrace, estimate_eps_infinity, gauge_orthogonal,
                            gauge_replay, gd_step, record_schedule, run)


@pytest.fixture(scope="module")
def small():
    cfg = ExperimentConfig(targets=(0.3, -0.5), L=48)
    return cfg.build()


def test_gd_step_zero_error_fixed():
    a = build_rpa(2, 6, 3)
    p = init_params(a, 4)
    # targets equal to the current outputs give zero errors
    ds0 = orthogonal_dataset(2, 2, (0.0, 0.0), 5, observable="ZI")
    y = errors(a, p, ds0)
    ds = orthogonal_dataset(2, 2, tuple(y), 5, observable="ZI")
    assert np.allclose(gd_step(a, p, ds, 1e-2), p, atol=1e-15)


def test_gd_step_single_datum():
    a = build_rpa(2, 6, 3)
    p = init_params(a, 4)
    ds = orthogonal_dataset(2, 1, (0.5,), 5, observable="ZI")
    e, G, _ = error_derivatives(a, p, ds, hessian=False)
    assert np.allclose(gd_step(a, p, ds, 0.1), p - 0.1 * e[0] * G[0], atol=1e-15)
    with pytest.raises(ValueError):
        gd_step(a, p, ds, 0.0)


def test_gd_step_decreases_loss(small):
    a, ds, p = small
    assert loss(a, gd_step(a, p, ds, 1e-3), ds) < loss(a, p, ds)


def test_record_schedule():
    s = record_schedule(1000)
    assert np.all(np.diff(s) > 0) and s[0] == 0 and s[-1] == 1000
    assert np.array_equal(s[:101], np.arange(101))
    assert np.array_equal(record_schedule(0), [0])


def test_config_validation():
    for bad in ({"eta": 0}, {"steps": -1}, {"ansatz": "mlp"}, {"ansatz": "hea"}, {"targets": ()}):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)
    c = ExperimentConfig(seed=3)
    assert ExperimentConfig(**c.to_dict()) == c


def test_steps_zero_initial_snapshot():
    tr = run(ExperimentConfig(steps=0))
    assert tr.steps.tolist() == [0] and tr.K.shape == (1, 2, 2)


def test_determinism_and_save_load(tmp_path):
    cfg = ExperimentConfig(targets=(0.3, -0.5), L=16, steps=300)
    t1, t2 = run(cfg), run(cfg)
    for f in ("eps", "K", "mu", "params", "loss"):
        assert np.array_equal(getattr(t1, f), getattr(t2, f))
    assert np.all(np.diff(t1.steps) > 0)
    assert np.all(np.diff(t1.loss) <= 1e-12)
    t1.save(tmp_path / "t.npz")
    t3 = TrainingTrace.load(tmp_path / "t.npz")
    assert t3.config == t1.config and np.array_equal(t3.mu, t1.mu)
    assert np.array_equal(t3.eps_inf, t1.eps_inf)


def test_frozen_kernel_and_error_endpoints():
    tr = run(ExperimentConfig(targets=(0.3, -0.5), steps=20000))
    assert np.all(np.abs(tr.eps[-1]) < 1e-3)
    assert np.allclose(tr.eps_inf, 0)
    tr = run(ExperimentConfig(targets=(5, -6), steps=20000))
    e1, e2 = tr.eps[-1]
    # outputs stay in [-1, 1], so eps_1 = o_1 - 5 in [-6, -4] and eps_2 in [5, 7]
    assert -6 <= e1 < -4 + 0.5 and 4.5 < e2 <= 7
    assert np.all(tr.eps_inf != 0)


def test_eps_infinity_constant():
    tr = run(ExperimentConfig(steps=0))
    tr.eps = np.full((50, 2), 0.7)
    tr.steps = np.arange(50)
    tr.targets = np.array([5.0, 6.0])
    assert np.allclose(estimate_eps_infinity(tr, 0.2), 0.7)


def test_gauge_replay(small):
    a, ds, p = small
    I = np.eye(2)
    assert gauge_replay(a, p, ds, I, 5)["param_dev"] == 0
    for s in range(3):
        S = gauge_orthogonal(2, s)
        assert np.allclose(S @ S.T, I, atol=1e-14)
        r = gauge_replay(a, p, ds, S, 100)
        assert r["param_dev"] < 1e-9 and r["loss_dev"] < 1e-9 and r["trK_dev"] < 1e-10


def test_decrement_ratio_eta_halving(small):
    a, ds, p = small
    e0 = errors(a, p, ds)
    d1 = errors(a, gd_step(a, p, ds, 1e-3), ds) - e0
    d2 = errors(a, gd_step(a, p, ds, 5e-4), ds) - e0
    assert np.allclose(d1 / d2, 2, rtol=1e-2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts():
    # the loss is bounded for any finite step, so force an overflow
    with pytest.raises(NumericalAbort) as ei:
        run(ExperimentConfig(targets=(5, -6), eta=1e308, steps=50))
    assert ei.value.eta == 1e308 and ei.value.trace is not None and ei.value.step >= 1
