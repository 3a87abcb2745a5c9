import numpy as np
import pytest

from qnnlab.ansatz import (
    Ansatz,
    Layer,
    brickwall,
    build_hea,
    build_rpa,
    evolve,
    evolve_adjoint,
    init_params,
    prefix_unitaries,
    segment_unitary,
)
from qnnlab.qsim import InvalidDimensionError, PauliString, expectation, make_rng, pauli_z


def rand_state(rng, d):
    s = rng.normal(size=d) + 1j * rng.normal(size=d)
    return s / np.linalg.norm(s)


def test_rpa_main_configuration():
    a = build_rpa(4, 48, 0)
    assert a.L == 48 and a.dim == 16
    assert all(len(g) == 4 and "I" not in g for g in a.generators)


def test_rpa_smallest():
    a = build_rpa(1, 1, 3)
    assert a.L == 1
    assert a.generators[0] in ("X", "Y", "Z")
    assert a.layers[0].fixed.shape == (2, 2)


def test_rpa_deterministic():
    a, b = build_rpa(3, 10, 11), build_rpa(3, 10, 11)
    assert a.generators == b.generators
    assert all(np.array_equal(x.fixed, y.fixed) for x, y in zip(a.layers, b.layers))
    assert a.fingerprint() == b.fingerprint()
    assert build_rpa(3, 10, 12).fingerprint() != a.fingerprint()


def test_hea_parameter_count():
    assert build_hea(2, 6).L == 24
    assert build_hea(2, 1).L == 4
    assert build_hea(3, 2).L == 12
    with pytest.raises(InvalidDimensionError):
        build_hea(1, 2)


def test_hea_zero_angles_is_entangler():
    a = build_hea(3, 2)
    U = segment_unitary(a, np.zeros(a.L), 0, a.L)
    B = brickwall(3)
    assert np.allclose(U, B @ B, atol=1e-12)


def test_identity_circuit():
    a = Ansatz(2, tuple(Layer(PauliString("XY")) for _ in range(3)))
    s = rand_state(make_rng(0), 4)
    assert np.allclose(evolve(a, np.zeros(3), s), s)


def test_evolve_roundtrip_and_linearity():
    rng = make_rng(1)
    a = build_rpa(3, 8, 2)
    p = init_params(a, 3)
    s, t = rand_state(rng, 8), rand_state(rng, 8)
    assert np.allclose(evolve_adjoint(a, p, evolve(a, p, s)), s, atol=1e-10)
    c1, c2 = 0.3 - 0.2j, 1.1j
    lhs = evolve(a, p, c1 * s + c2 * t)
    assert np.allclose(lhs, c1 * evolve(a, p, s) + c2 * evolve(a, p, t), atol=1e-10)


def test_segments():
    rng = make_rng(5)
    a = build_rpa(3, 9, 4)
    p = init_params(a, 6)
    s = rand_state(rng, 8)
    assert np.allclose(segment_unitary(a, p, 4, 4), np.eye(8))
    full = segment_unitary(a, p, 0, a.L)
    assert np.allclose(full @ s, evolve(a, p, s), atol=1e-12)
    for cut in (1, 4, 8):
        assert np.allclose(segment_unitary(a, p, cut, a.L) @ segment_unitary(a, p, 0, cut), full, atol=1e-10)
    pre = prefix_unitaries(a, p)
    assert pre.shape == (a.L + 1, 8, 8)
    assert np.allclose(pre[-1], full, atol=1e-12)


def test_two_pi_periodicity():
    rng = make_rng(8)
    a = build_rpa(2, 5, 1)
    p = init_params(a, 2)
    s = rand_state(rng, 4)
    q = p.copy()
    q[2] += 2 * np.pi
    assert np.allclose(evolve(a, q, s), -evolve(a, p, s), atol=1e-12)
    z = pauli_z(2)
    assert expectation(evolve(a, q, s), z) == pytest.approx(expectation(evolve(a, p, s), z), abs=1e-12)


def test_init_params_range():
    p = init_params(build_rpa(2, 200, 0), 1)
    assert p.min() >= 0 and p.max() < 2 * np.pi


def test_serialization_roundtrip():
    for a in (build_rpa(3, 6, 9), build_hea(2, 3, 0)):
        doc = a.to_dict()
        b = Ansatz.from_dict(doc)
        assert b.fingerprint() == a.fingerprint()
    doc = build_rpa(2, 3, 1).to_dict()
    doc["fingerprint"] = "0" * 64
    with pytest.raises(ValueError):
        Ansatz.from_dict(doc)
