import warnings

import numpy as np
import pytest

from qnnlab import kernels as kn
from qnnlab.ansatz import build_rpa, init_params
from qnnlab.derivatives import error_derivatives
from qnnlab.oracles import fd_loss_hessian, loop_dqntk, loop_qntk, loop_relative_dqntk
from qnnlab.qsim import ShapeError, make_rng
from qnnlab.taskdata import orthogonal_dataset


@pytest.fixture
def rand_GH():
    rng = make_rng(0)
    G = rng.normal(size=(3, 7))
    H = rng.normal(size=(3, 7, 7))
    return G, H + np.transpose(H, (0, 2, 1))


def test_qntk_examples(rand_GH):
    g = np.arange(5.0)
    K = kn.qntk([g, g])
    assert np.allclose(K, K[0, 0]) and np.linalg.matrix_rank(K) == 1
    K = kn.qntk([[1, 0, 0], [0, 2, 0]])
    assert np.allclose(K, np.diag([1, 4]))
    G, _ = rand_GH
    assert np.allclose(kn.qntk(G), loop_qntk(G), atol=1e-12)


def test_angle_examples():
    assert kn.angle_matrix([[4, 3], [3, 9]])[0, 1] == pytest.approx(0.5)
    A = kn.angle_matrix(kn.qntk([[1, 2], [1, 2]]))
    assert np.allclose(A, 1)
    A = kn.angle_matrix([[0, 0], [0, 1]])
    assert np.isnan(A[0, 1]) and A[1, 1] == 1
    with pytest.raises(kn.InvalidKernelError):
        kn.angle_matrix([[-1, 0], [0, 1]])


def test_dqntk(rand_GH):
    G, H = rand_GH
    mu = kn.dqntk(G, H)
    assert np.allclose(mu, loop_dqntk(G, H), atol=1e-10)
    assert np.allclose(mu, np.transpose(mu, (2, 1, 0)), atol=1e-10)
    assert np.all(kn.dqntk(G, np.zeros_like(H)) == 0)
    g, h = G[:1], H[:1]
    assert kn.dqntk(g, h)[0, 0, 0] == pytest.approx(g[0] @ h[0] @ g[0])
    with pytest.raises(ShapeError):
        kn.dqntk(G, H[:2])


def test_relative_dqntk(rand_GH):
    G, H = rand_GH
    K = kn.qntk(G)
    mu = kn.dqntk(G, H)
    lam = kn.relative_dqntk(mu, K)
    assert np.allclose(lam, loop_relative_dqntk(mu, K), atol=1e-12)
    assert np.allclose(kn.relative_dqntk(mu, np.eye(3)), mu)
    assert np.all(kn.relative_dqntk(np.zeros_like(mu), K) == 0)
    # uniform gradient rescaling with fixed Hessians leaves lambda unchanged
    assert np.allclose(kn.relative_dqntk(kn.dqntk(3 * G, H), kn.qntk(3 * G)), lam, atol=1e-12)
    # symmetry lam[g, a, b] = lam[b, a, g]
    assert np.allclose(lam, np.transpose(lam, (2, 1, 0)), atol=1e-12)


def test_f_matrix(rand_GH):
    G, H = rand_GH
    K = kn.qntk(G)
    lam = kn.relative_dqntk(kn.dqntk(G, H), K)
    eps = np.array([0.3, -0.1, 0.7])
    ref = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            for g in range(3):
                ref[a, b] += np.sqrt(K[g, g]) * eps[g] * lam[g, a, b]
    assert np.allclose(kn.f_matrix(K, eps, lam), ref, atol=1e-12)
    assert np.all(kn.f_matrix(K, np.zeros(3), lam) == 0)
    f1 = kn.f_matrix([[4.0]], [0.5], np.array([[[-2.0]]]))
    assert f1[0, 0] == pytest.approx(2 * 0.5 * -2)


def test_charges():
    lam = np.zeros((2, 2, 2))
    lam[0, 0, 0], lam[1, 1, 1] = -1, 0.5
    assert np.allclose(kn.charges([1.5, 2.0], [0, 0], lam), [1.5, 2.0])
    lam1 = np.array([[[-1.0]]])
    assert kn.charges([0.0], [2.0], lam1)[0] == pytest.approx(4.0)
    assert np.allclose(kn.charges(np.diag([1.5, 2.0]), [0, 0], lam), [1.5, 2.0])


def test_loss_hessian_rank_and_trace(rand_GH):
    G, H = rand_GH
    Hl = kn.loss_hessian(G, H, np.zeros(3))
    ev = kn.hessian_spectrum(Hl)
    assert np.all(np.diff(ev) <= 1e-12)
    assert np.sum(ev > 1e-10) == 3
    assert np.trace(Hl) == pytest.approx(np.trace(kn.qntk(G)), abs=1e-10)
    eps = np.array([0.2, -0.3, 0.1])
    Hl = kn.loss_hessian(G, H, eps)
    assert np.trace(Hl) == pytest.approx(np.trace(kn.qntk(G)) + sum(e * np.trace(h) for e, h in zip(eps, H)))


def test_loss_hessian_vs_fd():
    a = build_rpa(3, 8, 1)
    ds = orthogonal_dataset(3, 2, (0.2, -0.4), 2)
    p = init_params(a, 3)
    eps, G, H = error_derivatives(a, p, ds)
    Hl = kn.loss_hessian(G, H, eps)
    Hf = fd_loss_hessian(a, p, ds)
    assert np.max(np.abs(kn.hessian_spectrum(Hl) - np.linalg.eigvalsh(Hf)[::-1])) < 1e-5


def test_gauge_trace_invariance(rand_GH):
    G, _ = rand_GH
    K = kn.qntk(G)
    q, _ = np.linalg.qr(make_rng(3).normal(size=(3, 3)))
    assert np.trace(q @ K @ q.T) == pytest.approx(np.trace(K), abs=1e-10)


def test_psd_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        kn.qntk(np.eye(2))


def test_snapshot_serialization(rand_GH):
    G, H = rand_GH
    G = G.copy()
    G[1] = 0
    snap = kn.snapshot(5, [0.1, 0.0, -0.2], G, H)
    d = snap.to_dict()
    assert d["step"] == 5 and d["angles"][0][1] is None
    assert snap.lambda_norm1 >= 0
