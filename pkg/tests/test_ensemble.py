import warnings

import numpy as np
import pytest
from scipy import stats

from qnnlab import ensemble as en
from qnnlab.qsim import make_rng


def test_sample_rh_structure():
    rng = make_rng(0)
    u = en.sample_rh(8, 0, rng)
    assert np.allclose(u.conj().T @ u, np.eye(8), atol=1e-12)
    u = en.sample_rh(8, 8, rng)
    assert np.allclose(u, np.diag(np.diag(u))) and np.allclose(np.abs(np.diag(u)), 1)
    u = en.sample_rh(8, 3, rng)
    assert np.allclose(u.conj().T @ u, np.eye(8), atol=1e-12)
    assert np.allclose(u[:3, 3:], 0) and np.allclose(u[3:, :3], 0)
    assert np.allclose(u[:3, :3], np.diag(np.diag(u[:3, :3])))
    # N = d - 1 leaves a 1x1 block, which is just another phase
    assert np.allclose(np.abs(np.diag(en.sample_rh(8, 7, rng))), 1)
    with pytest.raises(ValueError):
        en.sample_rh(4, 5, rng)


def test_rh_phase_uniformity():
    rng = make_rng(1)
    ph = np.concatenate([np.angle(np.diag(en.sample_rh(4, 4, rng))) % (2 * np.pi) for _ in range(2500)])
    assert stats.kstest(ph / (2 * np.pi), "uniform").pvalue > 0.01


@pytest.mark.parametrize("N,value", [(0, 2), (1, 7), (2, 16), (6, 92), (7, 120), (8, 120)])
def test_fp_rh_exact2(N, value):
    assert en.fp_rh_exact2(N, 8) == value


def test_fp_rh_lower():
    for d in (4, 8):
        for N in range(d - 1):
            assert en.fp_rh_lower(N, d, 1) == N + 1
    for d in (4, 8):
        for N in range(d + 1):
            assert en.fp_rh_lower(N, d, 2) <= en.fp_rh_exact2(N, d)
    assert en.fp_rh_lower(2, 8, 2) <= 16
    assert en.fp_rh_lower(7, 8, 2) == 64 + 2
    with pytest.raises(ValueError):
        en.fp_rh_lower(1, 4, 0)


def test_fp_haar():
    assert en.fp_haar(2) == 2 and en.fp_haar(3) == 6


@pytest.mark.parametrize("N", [0, 2, 7])
def test_frame_potential_mc_rh(N):
    rep = en.frame_potential_mc(en.rh_sampler(8, N), 2, 4000, make_rng(N), d=8, N=N, analytic=en.fp_rh_exact2(N, 8))
    assert rep.mc_std_error > 0
    assert abs(rep.z_score) < 3


def test_frame_potential_std_error_scaling():
    a = en.frame_potential_mc(en.rh_sampler(8, 2), 2, 400, make_rng(5))
    b = en.frame_potential_mc(en.rh_sampler(8, 2), 2, 6400, make_rng(6))
    assert 2.5 < a.mc_std_error / b.mc_std_error < 6.5


def test_frame_potential_mc_validation():
    with pytest.raises(ValueError):
        en.frame_potential_mc(en.haar_sampler(4), 0, 10, make_rng(0))
    with pytest.raises(ValueError):
        en.frame_potential_mc(en.haar_sampler(4), 2, 1, make_rng(0))


def test_predicted_K_diag():
    assert en.predicted_K_diag(256, 16, 0.5) == pytest.approx(256 * 16 * 0.25 / (2 * 255))
    assert en.predicted_K_diag(256, 16, 0.5) == pytest.approx(2.0078, abs=1e-4)
    assert en.predicted_K_diag(10, 4, 0.0) == 0 and en.predicted_K_diag(10, 4, 1.0) == 0
    r = en.predicted_K_diag(256, 16, 0.3, exact=False) / en.predicted_K_diag(256, 16, 0.3)
    assert r == pytest.approx(255 / 256) and abs(1 - r) < 4e-3
    with pytest.raises(ValueError):
        en.predicted_K_diag(10, 4, 1.2)


def test_predicted_lambda_diag():
    d = 16
    for L in (64, 256):
        assert en.predicted_lambda_diag(L, d, 0.5) == pytest.approx(-(d - 4) / (4 * d))
    assert en.predicted_lambda_diag(100, d, 1.0) == pytest.approx(-(2 * (d - 2) + 100) / (4 * d))
    s = en.predicted_lambda_diag(257, d, 0.9) - en.predicted_lambda_diag(256, d, 0.9)
    assert s == pytest.approx(en.predicted_lambda_slope(d, 0.9))
    # exact and asymptotic forms agree to leading order in L and d
    a = en.predicted_lambda_diag(4096, 256, 0.9)
    assert en.predicted_lambda_diag(4096, 256, 0.9, exact=True) == pytest.approx(a, rel=0.02)


def test_aligned_unitary_block_diagonal():
    rng = make_rng(3)
    d, N = 8, 2
    B_in = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))[0]
    B_out = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))[0]
    R = en.sample_rh(d, N, rng)
    U = B_out @ R @ B_in.conj().T
    T = en.aligned_unitary(U, B_in[:, :N].T, B_out[:, :N].T)
    assert np.allclose(T.conj().T @ T, np.eye(d), atol=1e-12)
    assert np.allclose(T[:N, :N], R[:N, :N], atol=1e-12)
    assert np.allclose(T[:N, N:], 0, atol=1e-12) and np.allclose(T[N:, :N], 0, atol=1e-12)


def test_validate_low_power_warning():
    from qnnlab.trainer import ExperimentConfig, run

    tr = run(ExperimentConfig(targets=(5, 6), n=3, L=8, observable="projector", steps=200))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rep = en.validate_against_training([tr])
    assert any("low statistical power" in str(x.message) for x in w)
    assert rep.K_measured.shape == (2,) and np.all(rep.o >= 0) and np.all(rep.o <= 1)
    assert "K_predicted" in rep.to_dict()


def test_validate_window_mode():
    from qnnlab.trainer import ExperimentConfig, run

    tr = run(ExperimentConfig(targets=(5, 6), n=3, L=8, observable="projector", steps=300))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lim = en.validate_against_training([tr])
        win = en.validate_against_training([tr], o_mode="window")
        with pytest.raises(ValueError):
            en.validate_against_training([tr], o_mode="x")
    w = tr.late_window(0.1)
    ot = np.clip(tr.eps[w] + tr.targets, 0, 1)
    assert np.allclose(win.K_predicted, en.predicted_K_diag(8, 8, ot).mean(axis=0))
    assert np.allclose(win.o, ot.mean(axis=0))
    assert np.allclose(lim.K_measured, win.K_measured)
