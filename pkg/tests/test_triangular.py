import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsc.triangular import TriangularPointMatrix as TPM, pseudo_unitary_defects
from qsc.samplers import complex_normal


def rand_tpm(rng, dh, d):
    a, b = dh, dh * d
    return TPM(dh, d, mm=complex_normal(rng, a, a), m0=complex_normal(rng, a, b), mp=complex_normal(rng, a, a),
               z0=complex_normal(rng, b, b), zp=complex_normal(rng, b, a), pp=complex_normal(rng, a, a))


def test_dense_roundtrip(rng):
    F = rand_tpm(rng, 2, 2)
    G = TPM.from_dense(F.dense(), 2, 2)
    assert (F - G).max_abs() == 0.0
    D = F.dense()
    assert D.shape == (8, 8)
    assert np.all(D[2:, :2] == 0) and np.all(D[6:, :6] == 0)


def test_product_is_matrix_product(rng):
    F, G = rand_tpm(rng, 2, 2), rand_tpm(rng, 2, 2)
    assert np.allclose((F @ G).dense(), F.dense() @ G.dense())


def test_pseudo_conjugate_examples(rng):
    assert (TPM.identity(2, 1).pseudo_conjugate() - TPM.identity(2, 1)).max_abs() == 0
    v = complex_normal(rng, 2, 1)
    F = TPM(1, 2, zp=v)
    Fs = F.pseudo_conjugate()
    assert np.allclose(Fs.m0, v.conj().T)
    assert Fs.max_abs() == pytest.approx(np.abs(v).max())
    assert np.all(Fs.zp == 0) and np.all(Fs.mp == 0)


def test_pseudo_conjugate_is_flip_adjoint(rng):
    """F* = G F^dag G with the metric flipping the - and + components."""
    F = rand_tpm(rng, 2, 1)
    a, b = 2, 2
    G = np.zeros((2 * a + b, 2 * a + b))
    G[:a, a + b:] = np.eye(a)
    G[a + b:, :a] = np.eye(a)
    G[a:a + b, a:a + b] = np.eye(b)
    assert np.allclose(F.pseudo_conjugate().dense(), G @ F.dense().conj().T @ G)


@given(st.integers(0, 2 ** 31), st.integers(1, 2), st.integers(1, 2))
def test_pseudo_conjugate_anti_automorphism(seed, dh, d):
    rng = np.random.default_rng(seed)
    F, G = rand_tpm(rng, dh, d), rand_tpm(rng, dh, d)
    assert ((F @ G).pseudo_conjugate() - G.pseudo_conjugate() @ F.pseudo_conjugate()).max_abs() <= 1e-13 * 100
    assert (F.pseudo_conjugate().pseudo_conjugate() - F).max_abs() == 0.0


def test_hp_is_pseudounitary(rng):
    from qsc.samplers import random_hp_factor
    for dh in (1, 2):
        for d in (1, 2):
            F = random_hp_factor(rng, dh, d)
            assert max(pseudo_unitary_defects(F)) <= 1e-13


def test_epsilon_op_layout():
    F = TPM(1, 1, mm=1, pp=1, m0=2.0, mp=3.0, z0=5.0, zp=7.0)
    dt = 0.25
    assert np.allclose(F.epsilon_op(dt), [[1 + dt * 3, 0.5 * 2], [0.5 * 7, 5]])
    assert np.allclose(F.increment_op(dt), [[dt * 3, 0.5 * 2], [0.5 * 7, 5 + dt * 3]])


def test_lift(rng):
    f = rand_tpm(rng, 1, 2)
    Lf = f.lift(3)
    assert np.allclose(Lf.z0, np.kron(np.eye(3), f.z0))
    with pytest.raises(ValueError):
        Lf.lift(2)
