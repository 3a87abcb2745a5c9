import numpy as np
import pytest

from qnnlab.ansatz import Ansatz, Layer, build_hea, build_rpa, init_params
from qnnlab.derivatives import (
    error_derivatives,
    fd_grad,
    fd_hessian,
    grad_error,
    hessian_error,
    shift_grad,
    shift_hessian_diag,
)
from qnnlab.qsim import MatrixObservable, PauliString, basis_state, make_rng, pauli_z
from qnnlab.taskdata import orthogonal_dataset


def rand_state(rng, d):
    s = rng.normal(size=d) + 1j * rng.normal(size=d)
    return s / np.linalg.norm(s)


@pytest.fixture(params=[("rpa", 3, 12, 0), ("rpa", 2, 16, 5), ("hea", 3, 2, 1)])
def instance(request):
    kind, n, size, seed = request.param
    a = build_rpa(n, size, seed) if kind == "rpa" else build_hea(n, size, seed)
    p = init_params(a, seed + 100)
    s = rand_state(make_rng(seed + 200), a.dim)
    return a, p, s, pauli_z(n)


def test_gradient_vs_fd(instance):
    a, p, s, O = instance
    assert np.max(np.abs(grad_error(a, p, s, 0.2, O) - fd_grad(a, p, s, 0.2, O))) < 1e-6


def test_gradient_vs_shift(instance):
    a, p, s, O = instance
    assert np.max(np.abs(grad_error(a, p, s, 0.2, O) - shift_grad(a, p, s, 0.2, O))) < 1e-10


def test_hessian_vs_fd_and_symmetry(instance):
    a, p, s, O = instance
    H = hessian_error(a, p, s, 0.2, O)
    assert np.max(np.abs(H - H.T)) < 1e-9
    assert np.max(np.abs(H - fd_hessian(a, p, s, 0.2, O))) < 1e-5


def test_hessian_diag_vs_shift(instance):
    a, p, s, O = instance
    H = hessian_error(a, p, s, 0.2, O)
    assert np.max(np.abs(np.diag(H) - shift_hessian_diag(a, p, s, 0.2, O))) < 1e-10


def test_constant_observable_zero_gradient():
    a = build_rpa(2, 5, 3)
    p = init_params(a, 1)
    O = MatrixObservable(2.5 * np.eye(4))
    s = rand_state(make_rng(0), 4)
    assert np.max(np.abs(grad_error(a, p, s, 0.0, O))) < 1e-12
    assert np.max(np.abs(hessian_error(a, p, s, 0.0, O))) < 1e-12


def test_single_rotation_closed_form():
    # <0|RX(t)^dag Z RX(t)|0> = cos t, so the second derivative is -(eps + y)
    a = Ansatz(1, (Layer(PauliString("X")),))
    s, O, y = basis_state(1, 0), pauli_z(1), 0.3
    for th in (0.0, 0.4, 2.1):
        H = hessian_error(a, [th], s, y, O)
        eps = np.cos(th) - y
        assert H[0, 0] == pytest.approx(-(eps + y), abs=1e-12)
        assert grad_error(a, [th], s, y, O)[0] == pytest.approx(-np.sin(th), abs=1e-12)


def test_fd_richardson_order():
    a = build_rpa(2, 6, 2)
    p = init_params(a, 3)
    s = rand_state(make_rng(1), 4)
    O = pauli_z(2)
    g = grad_error(a, p, s, 0.0, O)
    e1 = np.max(np.abs(fd_grad(a, p, s, 0.0, O, h=1e-2) - g))
    e2 = np.max(np.abs(fd_grad(a, p, s, 0.0, O, h=5e-3) - g))
    assert 3.5 < e1 / e2 < 4.5


def test_stationary_point_has_zero_loss_gradient():
    a = Ansatz(1, (Layer(PauliString("X")),))
    ds = orthogonal_dataset(1, 1, (np.cos(0.9),), 0, unitary="identity")
    eps, G, _ = error_derivatives(a, [0.9], ds)
    assert abs(eps @ G).max() < 1e-12


def test_error_derivatives_batch():
    a = build_rpa(3, 8, 4)
    ds = orthogonal_dataset(3, 3, (0.1, -0.2, 0.5), 9)
    p = init_params(a, 4)
    eps, G, H = error_derivatives(a, p, ds)
    assert eps.shape == (3,) and G.shape == (3, 8) and H.shape == (3, 8, 8)
    for i in range(3):
        assert np.allclose(G[i], grad_error(a, p, ds.states[i], ds.targets[i], ds.observables[i]), atol=1e-13)
