import numpy as np
import pytest

from qnnlab import oracles as orc
from qnnlab.ansatz import Ansatz, Layer, build_rpa, evolve, init_params
from qnnlab.qsim import PauliString, haar_unitary, make_rng
from qnnlab.taskdata import errors, orthogonal_dataset


@pytest.fixture(scope="module")
def inst():
    a = build_rpa(3, 12, 7)
    p = init_params(a, 8)
    ds = orthogonal_dataset(3, 2, (0.3, -0.5), 9, observable="ZII")
    return a, p, ds


def test_tolerance():
    t = orc.OracleTolerance(1e-10, 1e-8, "x")
    assert t.close(1.0, 1.0 + 1e-9) and not t.close(1.0, 1.1)
    with pytest.raises(ValueError):
        orc.OracleTolerance(0, 1e-8)


def test_dense_vs_evolve():
    a = build_rpa(2, 4, 1)
    p = init_params(a, 2)
    U = orc.dense_circuit_oracle(a, p)
    rng = make_rng(3)
    for _ in range(20):
        s = haar_unitary(4, rng)[:, 0]
        assert np.max(np.abs(U @ s - evolve(a, p, s))) < 1e-10


def test_dense_identity_and_cap():
    a = Ansatz(2, tuple(Layer(PauliString(g)) for g in ("XI", "ZY")))
    assert np.allclose(orc.dense_circuit_oracle(a, np.zeros(2)), np.eye(4))
    with pytest.raises(ValueError):
        orc.dense_circuit_oracle(build_rpa(9, 2, 0), np.zeros(2))


def test_dense_errors_match(inst):
    a, p, ds = inst
    assert np.allclose(orc.dense_errors(a, p, ds), errors(a, p, ds), atol=1e-12)


def test_eq5_and_eqK_halving(inst):
    a, p, ds = inst
    for check in (orc.eq5_step_oracle, orc.eqK_step_oracle):
        r = orc.halving_ratio(check, a, p, ds, 1e-2)
        assert 3.5 <= r <= 4.5


def test_eq5_zero_error_point(inst):
    a, p, _ = inst
    y = errors(a, p, orthogonal_dataset(3, 2, (0.0, 0.0), 9, observable="ZII"))
    ds = orthogonal_dataset(3, 2, tuple(y), 9, observable="ZII")
    c = orc.eq5_step_oracle(a, p, ds, 1e-3)
    assert np.allclose(c.predicted, 0, atol=1e-12) and np.allclose(c.measured, 0, atol=1e-9)


def test_eqK_prediction_symmetric(inst):
    a, p, ds = inst
    c = orc.eqK_step_oracle(a, p, ds, 1e-3)
    assert np.allclose(c.predicted, c.predicted.T)


def test_rk4_linear():
    A = np.array([[-1.0, 0.5], [0.0, -2.0]])
    assert orc.rk4_vs_exact_linear(A, np.array([1.0, 1.0]), 1.0, 200) < 1e-10
