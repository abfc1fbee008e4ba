import numpy as np
import pytest
import scipy.linalg

from qsc.evolution import (canonical_decompose, chrono_kernel, decomposition_residuals, euler_apply,
                           euler_evolve, evolve, exponential_ito_check, hamiltonian_exp,
                           hamiltonian_exp_dense, hamiltonian_table, is_pseudo_hermitian, ito_formula_check,
                           pseudo_unitary_check, second_quantization, unitarity_defect)
from qsc.fock import FockVector, Grid, h_op_matrix, submasks, truncated_norm, popcount
from qsc.kernels import FourTable, Kernel, epsilon_matrix
from qsc.samplers import (complex_normal, random_hermitian, random_hp_factor, random_point_matrix,
                          random_pseudo_hermitian)
from qsc.triangular import TriangularPointMatrix as TPM


def order(ns, vals):
    return -np.polyfit(np.log2(ns), np.log2(vals), 1)[0]


# -- pseudo-unitarity and Hamiltonian exponentials -------------------------

def test_pseudo_unitary_check_identity_and_hp(rng):
    assert pseudo_unitary_check(TPM.identity(2, 2)).defect == 0.0
    W = random_hp_factor(rng, 2, 2)
    r = pseudo_unitary_check(W)
    assert max(r) <= 1e-13


def test_pseudo_unitary_check_detects_violation():
    F = TPM(1, 1, mm=1, pp=1, z0=2.0)
    assert pseudo_unitary_check(F).gauge == pytest.approx(3.0)


def test_hamiltonian_exp_zero():
    assert (hamiltonian_exp(TPM(2, 1)) - TPM.identity(2, 1)).max_abs() <= 1e-15


def test_hamiltonian_exp_leading_terms(rng):
    v = complex_normal(rng, 2, 1)
    h = 0.7
    H = hamiltonian_table(np.zeros((2, 2)), v, [[h]])
    F = hamiltonian_exp(H)
    assert np.allclose(F.zp, -1j * v)
    assert np.allclose(F.m0, -1j * v.conj().T)
    assert np.allclose(F.mp, -0.5 * v.conj().T @ v - 1j * h)


@pytest.mark.parametrize("dh,d", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_hamiltonian_exp_matches_dense(rng, dh, d):
    for scale in (0.1, 1.0, 3.0):
        H = random_pseudo_hermitian(rng, dh, d, scale)
        assert is_pseudo_hermitian(H)
        F = hamiltonian_exp(H)
        assert (F - hamiltonian_exp_dense(H)).max_abs() <= 1e-10 * max(1.0, scale ** 2)
        assert pseudo_unitary_check(F).defect <= 1e-10


def test_hamiltonian_exp_singular_h00(rng):
    H = random_pseudo_hermitian(rng, 1, 3)
    lam, V = np.linalg.eigh(H.z0)
    lam[:2] = 0.0
    H.z0[:] = (V * lam) @ V.conj().T
    assert (hamiltonian_exp(H) - hamiltonian_exp_dense(H)).max_abs() <= 1e-10


def test_canonical_decomposition_diagonal(rng):
    H = hamiltonian_table(random_hermitian(rng, 2), np.zeros((2, 1)), [[0.3]])
    dec = canonical_decompose(H)
    assert dec.L2.max_abs() == 0.0
    assert np.all(dec.L1.zp == 0) and np.all(dec.L1.m0 == 0)
    assert np.allclose(dec.L3.mp, -0.3j)


def test_canonical_decomposition_brownian(rng):
    v = complex_normal(rng, 2, 1)
    H = hamiltonian_table(np.zeros((2, 2)), v, np.zeros((1, 1)))
    dec = canonical_decompose(H)
    assert dec.L1.max_abs() == 0.0
    assert np.allclose(dec.E, 1j * v)
    r = decomposition_residuals(H, dec)
    assert max(r.values()) <= 1e-12


@pytest.mark.parametrize("rank", [0, 1, 2, 3])
def test_canonical_decomposition_residuals(rng, rank):
    H = random_pseudo_hermitian(rng, 1, 3)
    lam, V = np.linalg.eigh(H.z0)
    lam[rank:] = 0.0
    H.z0[:] = (V * lam) @ V.conj().T
    r = decomposition_residuals(H, canonical_decompose(H))
    assert max(r.values()) <= 1e-9


def test_canonical_rejects_non_hermitian():
    with pytest.raises(ValueError):
        canonical_decompose(TPM(1, 1, z0=1j))


# -- chronological kernels and evolutions ---------------------------------

def test_chrono_identity_is_unit(rng):
    g = Grid(1.0, 3, 2, 2)
    K = chrono_kernel(TPM.identity(2, 2), None, 0.7, g)
    assert K.distance(Kernel.unit(g)) <= 1e-15


def test_chrono_single_lebesgue_cell(rng):
    g = Grid(1.0, 3, 1, 2)
    F = [random_point_matrix(rng, 2, 1) for _ in range(3)]
    T0 = complex_normal(rng, 2, 2)
    K = chrono_kernel(F, T0, 1.0, g)
    assert np.allclose(K.block(FourTable(kmp=0b010)), F[1].mp @ T0)
    # beyond t the factors are identities
    K2 = chrono_kernel(F, T0, 0.4, g)
    assert np.allclose(K2.block(FourTable(kmp=0b100)), 0)
    assert np.allclose(K2.block(FourTable()), T0)


def test_chrono_cocycle(rng):
    g = Grid(1.0, 4, 1, 2)
    F = [random_point_matrix(rng, 2, 1, 0.5) for _ in range(4)]
    T0 = complex_normal(rng, 2, 2)
    K1 = chrono_kernel(F, T0, 0.5, g)
    # continue from t = 0.5: later factors act on the earlier kernel
    later = [TPM.identity(2, 1) if x < 2 else F[x] for x in range(4)]
    from qsc.kernels import kernel_product
    K2 = kernel_product(Kernel.factorized(g, None, later), K1)
    assert K2.distance(chrono_kernel(F, T0, 1.0, g)) <= 1e-12


def test_poissonian_evolution(rng):
    g = Grid(1.0, 3, 2, 1)
    W = [scipy.linalg.expm(1j * random_hermitian(rng, 2)) for _ in range(3)]
    F = [TPM(1, 2, mm=1, pp=1, z0=w) for w in W]
    U = epsilon_matrix(chrono_kernel(F, None, 0.5, g))
    a = FockVector.random(g, rng)
    r = FockVector.from_vec(g, U @ a.vec())
    for S in submasks(g.full_mask):
        want = a.sector(S)
        for x in (0, 1):  # t(x) < 0.5
            if (S >> x) & 1:
                ax = 1 + sum((S >> y) & 1 for y in range(x))
                want = np.moveaxis(np.tensordot(W[x], want, axes=([1], [ax])), 0, ax)
        assert np.allclose(r.sector(S), want)


def test_evolve_zero_generator(rng):
    g = Grid(1.0, 3, 1, 2)
    U0 = complex_normal(rng, 2, 2)
    assert np.allclose(evolve(TPM(2, 1), U0, None, g), h_op_matrix(g, U0))


def test_evolve_lebesgue(rng):
    g = Grid(1.0, 4, 1, 2)
    H = random_hermitian(rng, 2)
    L = TPM(2, 1, mp=-1j * H)
    U = evolve(L, None, 0.6, g)
    step = np.eye(2) - 1j * g.dt * H
    a = FockVector.random(g, rng)
    r = FockVector.from_vec(g, U @ a.vec())
    # sector S: product of the steps over the empty cells before t
    for S in submasks(g.full_mask):
        m = sum(1 for x in range(3) if not (S >> x) & 1)
        want = np.linalg.matrix_power(step, m) @ a.sector(S).reshape(2, -1)
        assert np.allclose(r.sector(S).reshape(2, -1), want)


@pytest.mark.parametrize("dh,d", [(1, 1), (2, 1), (1, 2)])
def test_kernel_matches_euler(rng, dh, d):
    """Two independent constructions; they coincide to O(dt) and exactly on adapted increments."""
    g = Grid(1.0, 3, d, dh)
    L = random_point_matrix(rng, dh, d, 0.5) - TPM.identity(dh, d)
    L.z0[:] -= np.eye(dh * d)
    Ue = euler_evolve(L, None, None, g)
    a = complex_normal(rng, dh, g.n_configs, 2)
    assert np.allclose(euler_apply(L, None, None, g, a).reshape(g.dim, 2), Ue @ a.reshape(g.dim, 2))
    Uk = evolve(L, None, None, g)
    assert np.linalg.norm(Uk - Ue, 2) <= 2.0


def test_kernel_vs_euler_first_order(rng):
    F = random_hp_factor(rng, 2, 1, 0.3)
    L = F - TPM.identity(2, 1)
    vals = []
    ns = (2, 4, 8)
    for n in ns:
        g = Grid(1.0, n, 1, 2)
        Uk = evolve(L, None, None, g)
        Ue = euler_evolve(L, None, None, g)
        vals.append(truncated_norm(Uk - Ue, g, 2))
    assert vals[-1] < vals[0]
    assert order(ns, vals) >= 0.8


def test_second_quantization(rng):
    g = Grid(1.0, 3)
    assert np.allclose(second_quantization(TPM(1, 1), None, g), np.eye(8))
    w = 0.6 + 0.3j
    G = second_quantization(TPM(1, 1, z0=w - 1), None, g)
    diag = np.array([w ** popcount(c) for c in range(8)])
    assert np.allclose(G, np.diag(diag))
    v = complex_normal(rng, 1, 1)
    l = TPM(1, 1, zp=v)
    assert np.allclose(second_quantization(l, None, g), evolve(l, None, None, g))


def test_unitarity_first_order(rng):
    F = random_hp_factor(np.random.default_rng(7), 2, 1, 0.3)
    L = F - TPM.identity(2, 1)
    ns = (4, 8, 16)
    vals = [unitarity_defect(L, None, None, Grid(1.0, n, 1, 2)) for n in ns]
    assert order(ns, vals) >= 0.9


def test_ito_zero_and_lebesgue(rng):
    g = Grid(1.0, 4, 1, 2)
    r = ito_formula_check(TPM(2, 1), None, None, g)
    assert r["ito_defect"] == 0.0 and r["three_term_defect"] <= 1e-15
    H = random_hermitian(rng, 2)
    L = TPM(2, 1, mp=-1j * H)
    # L + L* + L*L vanishes, so the Ito defect is the discrete unitarity defect alone
    r = ito_formula_check(L, None, None, g)
    assert r["ito_defect"] == pytest.approx(unitarity_defect(L, None, None, g), abs=1e-14)
    assert r["three_term_defect"] <= 1e-13


def test_ito_dense_oracle(rng):
    """Gram form against dense sums U_k^dag Lambda_k(M) U_k."""
    g = Grid(1.0, 3, 1, 2)
    L = random_point_matrix(rng, 2, 1, 0.4) - TPM.identity(2, 1)
    from qsc.fock import apply_cell_op, quanta_indices
    F = TPM.identity(2, 1) + L
    M = L + L.pseudo_conjugate() + L.pseudo_conjugate() @ L
    eye = np.eye(g.dim, dtype=complex).reshape(2, g.n_configs, g.dim)
    U = eye.reshape(g.dim, g.dim)
    D = -np.eye(g.dim, dtype=complex)
    for k in range(3):
        inc = apply_cell_op(U.reshape(2, g.n_configs, g.dim), g, k, M.increment_op(g.dt)).reshape(g.dim, g.dim)
        D -= U.conj().T @ inc
        U = apply_cell_op(U.reshape(2, g.n_configs, g.dim), g, k, F.epsilon_op(g.dt)).reshape(g.dim, g.dim)
    D += U.conj().T @ U
    idx = quanta_indices(g, 2)
    want = np.linalg.norm(D[np.ix_(idx, idx)], 2)
    r = ito_formula_check(L, None, None, g)
    assert r["ito_defect"] == pytest.approx(want, rel=1e-10)
    assert r["three_term_defect"] <= 1e-12


def test_ito_generic_decreases():
    rng = np.random.default_rng(2)
    L = random_point_matrix(rng, 2, 1, 0.3) - TPM.identity(2, 1)
    vals = [ito_formula_check(L, None, None, Grid(1.0, n, 1, 2), max_quanta=1)["ito_defect"] for n in (2, 4, 8)]
    assert vals[0] > vals[1] > vals[2]


def test_exponential_ito_examples():
    g = Grid(1.0, 4)
    r = exponential_ito_check(TPM(1, 1), None, g)
    assert r["exact"] and r["defect"] == 0.0
    c = -0.8 + 0.5j
    r = exponential_ito_check(TPM(1, 1, mp=c), None, g)
    # closed forms: exp(c t) against prod (1 + c dt)
    # sectors with m empty cells see prod(1 + c dt) over those cells only
    want = max(abs(np.exp(c) - (1 + c * g.dt) ** m) for m in range(5))
    assert r["max_abs"] == pytest.approx(want, rel=1e-10)
    assert np.prod([1 + (np.exp(c * g.dt) - 1)] * 4) == pytest.approx(np.exp(c))
    rng = np.random.default_rng(1)
    fam = [TPM(1, 1, z0=complex_normal(rng, 1, 1)) for _ in range(4)]
    r = exponential_ito_check(fam, None, g)
    assert r["exact"] and r["max_abs"] <= 1e-12


def test_exponential_ito_poissonian_d2(rng):
    g = Grid(1.0, 3, 2, 1)
    A = TPM(1, 2, z0=random_hermitian(rng, 2) * 1j)
    r = exponential_ito_check(A, None, g)
    assert r["max_abs"] <= 1e-12


def test_exponential_ito_noncommuting():
    g = Grid(1.0, 2, 1, 2)
    A = [TPM(2, 1, mp=[[1, 0], [0, -1]]), TPM(2, 1, mp=[[0, 1], [1, 0]])]
    with pytest.raises(ValueError, match="commute"):
        exponential_ito_check(A, None, g)
