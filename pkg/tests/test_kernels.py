import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsc.fock import FockVector, Grid, exponential_vector, submasks
from qsc.kernels import (FourTable, Kernel, WeightTable, admissible_epsilon, epsilon_apply, epsilon_matrix,
                         epsilon_operator_bound, epsilon_relative_norm, integrand_from_wick, involution,
                         kernel_product, multiplicativity_defect, wick_from_integrand, zeta_norm)
from qsc.samplers import complex_normal, random_point_matrix, random_sparse_kernel
from qsc.triangular import TriangularPointMatrix as TPM

from oracles import all_tables, epsilon_apply_bruteforce

GRIDS = [(3, 1, 1), (3, 1, 2), (3, 2, 1), (2, 2, 2)]


@pytest.mark.parametrize("n,d,dh", GRIDS)
def test_epsilon_apply_matches_bruteforce(rng, n, d, dh):
    g = Grid(1.0, n, d, dh)
    T = random_sparse_kernel(g, rng, 8)
    a = FockVector.random(g, rng)
    want = epsilon_apply_bruteforce(T, a)
    assert np.max(np.abs(epsilon_apply(T, a).data - want.data)) <= 1e-12


@pytest.mark.parametrize("n,d,dh", GRIDS)
@pytest.mark.parametrize("order", ["chrono", "antichrono"])
def test_factorized_apply_matches_bruteforce(rng, n, d, dh, order):
    g = Grid(1.0, n, d, dh)
    cells = [random_point_matrix(rng, dh, d, 0.7) for _ in range(n)]
    T = Kernel.factorized(g, complex_normal(rng, dh, dh), cells, order=order)
    a = FockVector.random(g, rng)
    assert np.max(np.abs(epsilon_apply(T, a).data - epsilon_apply_bruteforce(T, a).data)) <= 1e-11


def test_unit_kernel_identity(rng):
    g = Grid(1.0, 3, 2, 2)
    a = FockVector.random(g, rng)
    for fac in (False, True):
        U = Kernel.unit(g, factorized=fac)
        assert np.allclose(epsilon_apply(U, a).data, a.data, atol=1e-14)
    assert np.allclose(epsilon_matrix(Kernel.unit(g)), np.eye(g.dim))


def test_factorized_on_exponential_vector(rng):
    """Sector S: X h (x) prod_{x in S}(f00 k + f0+) * prod_{x not in S}(1 + dt (f-+ + f-0 k))."""
    n, d, dh = 3, 2, 2
    g = Grid(1.0, n, d, dh)
    f = [random_point_matrix(rng, 1, d, 0.6) for _ in range(n)]
    X = complex_normal(rng, dh, dh)
    h = complex_normal(rng, dh)
    k = complex_normal(rng, n, d)
    r = epsilon_apply(Kernel.factorized(g, X, f), exponential_vector(g, k, h))
    for S in submasks(g.full_mask):
        val = X @ h
        for x in range(n):
            if (S >> x) & 1:
                val = np.multiply.outer(val, f[x].z0 @ k[x] + f[x].zp[:, 0])
            else:
                val = val * (1 + g.dt * (f[x].mp[0, 0] + f[x].m0[0] @ k[x]))
        assert np.allclose(r.sector(S), val, atol=1e-12)


def test_one_cell_lebesgue_value(rng):
    g = Grid(1.0, 1, 1, 1)
    c = 0.3 - 0.2j
    T = Kernel.factorized(g, None, [TPM(1, 1, mm=1, pp=1, z0=1, mp=c)])
    k = np.array([[0.7]])
    e = exponential_vector(g, k)
    r = epsilon_apply(T, e)
    # empty sector picks up 1 + dt c; the occupied sector keeps k
    assert r.sector(0)[0] == pytest.approx(1 + c)
    assert r.sector(1)[0, 0] == pytest.approx(0.7)


def test_single_point_creation(rng):
    g = Grid(1.0, 3, 2, 2)
    v = complex_normal(rng, 2)
    T = Kernel.sparse(g, {FourTable(k0p=1): np.kron(np.eye(2), v[:, None])})
    h = complex_normal(rng, 2)
    r = epsilon_apply(T, FockVector.vacuum(g, h))
    assert np.allclose(r.sector(1), np.multiply.outer(h, v))
    assert np.count_nonzero(np.abs(r.data) > 1e-15) == 4


def test_epsilon_matrix_consistency(rng):
    g = Grid(1.0, 3, 1, 2)
    T = random_sparse_kernel(g, rng)
    M = epsilon_matrix(T)
    for _ in range(20):
        a = FockVector.random(g, rng)
        assert np.max(np.abs(M @ a.vec() - epsilon_apply(T, a).vec())) <= 1e-12


@pytest.mark.parametrize("n,d,dh", GRIDS)
def test_star_property(rng, n, d, dh):
    g = Grid(1.0, n, d, dh)
    T = random_sparse_kernel(g, rng, 10)
    assert np.max(np.abs(epsilon_matrix(involution(T)) - epsilon_matrix(T).conj().T)) <= 1e-12
    F = Kernel.factorized(g, complex_normal(rng, dh, dh), [random_point_matrix(rng, dh, d) for _ in range(n)])
    assert np.max(np.abs(epsilon_matrix(involution(F)) - epsilon_matrix(F).conj().T)) <= 1e-12


def test_involution_examples(rng):
    g = Grid(1.0, 2, 2, 2)
    v = complex_normal(rng, 2)
    B = np.kron(np.eye(2), v[:, None])
    T = Kernel.sparse(g, {FourTable(k0p=1): B})
    Ts = involution(T)
    assert list(Ts.blocks) == [FourTable(km0=1)]
    assert np.allclose(Ts.blocks[FourTable(km0=1)], B.conj().T)
    U = Kernel.unit(g)
    assert U.distance(involution(U)) == 0.0
    R = random_sparse_kernel(g, rng)
    assert involution(involution(R)).distance(R) == 0.0
    c = 0.4 + 1.1j
    assert involution(R.scaled(c)).distance(involution(R).scaled(np.conj(c))) <= 1e-15


def test_product_unit_laws(rng):
    g = Grid(1.0, 3, 2, 1)
    T = random_sparse_kernel(g, rng)
    U = Kernel.unit(g)
    assert kernel_product(U, T).distance(T) <= 1e-12
    assert kernel_product(T, U).distance(T) <= 1e-12


def test_product_ito_term(rng):
    g = Grid(1.0, 2, 2, 1)
    w, v = complex_normal(rng, 2), complex_normal(rng, 2)
    A = Kernel.sparse(g, {FourTable(km0=1): w.conj()[None, :]})
    C = Kernel.sparse(g, {FourTable(k0p=1): v[:, None]})
    P = kernel_product(A, C)
    assert set(P.blocks) == {FourTable(kmp=1)}
    assert P.blocks[FourTable(kmp=1)][0, 0] == pytest.approx(np.vdot(w, v))


@pytest.mark.parametrize("n,d,dh", [(3, 1, 2), (3, 2, 1), (2, 2, 2)])
def test_product_algebra_laws(rng, n, d, dh):
    g = Grid(1.0, n, d, dh)
    R, S, T = (random_sparse_kernel(g, rng, 5) for _ in range(3))
    lhs = kernel_product(kernel_product(R, S), T)
    rhs = kernel_product(R, kernel_product(S, T))
    assert lhs.distance(rhs) <= 1e-12
    st_ = involution(kernel_product(S, T))
    assert st_.distance(kernel_product(involution(T), involution(S))) <= 1e-12


def test_factorized_product_blockwise(rng):
    g = Grid(1.0, 3, 2, 2)
    f = [random_point_matrix(rng, 1, 2, 0.5) for _ in range(3)]
    h = [random_point_matrix(rng, 1, 2, 0.5) for _ in range(3)]
    X, Y = complex_normal(rng, 2, 2), complex_normal(rng, 2, 2)
    S, T = Kernel.factorized(g, X, f), Kernel.factorized(g, Y, h)
    fac = kernel_product(S, T)
    assert fac.kind == "factorized"
    sparse = kernel_product(S.to_sparse(), T.to_sparse())
    assert fac.distance(sparse) <= 1e-12
    assert fac.distance(Kernel.factorized(g, X @ Y, [a @ b for a, b in zip(f, h)])) <= 1e-12


def test_multiplicativity_first_order():
    rng = np.random.default_rng(3)
    fS = random_point_matrix(rng, 1, 1, 0.25, unitary_diag=True)
    fT = random_point_matrix(rng, 1, 1, 0.25, unitary_diag=True)
    vals = []
    for n in (2, 4, 8):
        g = Grid(1.0, n)
        vals.append(multiplicativity_defect(Kernel.factorized(g, None, fS), Kernel.factorized(g, None, fT),
                                            max_quanta=2))
    assert vals[2] < vals[1] < vals[0]
    g = Grid(1.0, 4)
    S, T = Kernel.factorized(g, None, fS), Kernel.factorized(g, None, fT)
    dense = np.linalg.norm(epsilon_matrix(kernel_product(S, T)) - epsilon_matrix(S) @ epsilon_matrix(T), 2)
    assert multiplicativity_defect(S, T) == pytest.approx(dense, rel=1e-8)


def test_multiplicativity_lanczos_matches_dense():
    rng = np.random.default_rng(4)
    f, h = (random_point_matrix(rng, 1, 1, 0.3) for _ in range(2))
    g = Grid(1.0, 10)
    S, T = Kernel.factorized(g, None, f), Kernel.factorized(g, None, h)
    dense = multiplicativity_defect(S, T, dense_max_dim=2 ** 10)
    lanczos = multiplicativity_defect(S, T, dense_max_dim=16)
    assert lanczos == pytest.approx(dense, rel=1e-6)


def test_zeta_norm_examples(rng):
    g = Grid(1.0, 3, 2, 2)
    one = WeightTable(3, 1.0)
    assert zeta_norm(Kernel.unit(g), one) == pytest.approx(1.0)
    f = [random_point_matrix(rng, 1, 2, 0.8) for _ in range(3)]
    X = complex_normal(rng, 2, 2)
    T = Kernel.factorized(g, X, f)
    zeta = WeightTable.of_factors(f)
    assert zeta_norm(T, zeta) == pytest.approx(np.linalg.norm(X, 2))
    assert zeta_norm(T.to_sparse(), zeta) == pytest.approx(np.linalg.norm(X, 2))
    R = random_sparse_kernel(g, rng)
    zr = WeightTable(3, 0.5, 2.0, 1.5, 0.7)
    assert zeta_norm(R.scaled(-2.5j), zr) == pytest.approx(2.5 * zeta_norm(R, zr))


def test_zeta_norm_zero_weight():
    g = Grid(1.0, 2)
    T = Kernel.sparse(g, {FourTable(k0p=1): [[1.0]]})
    with pytest.raises(ZeroDivisionError):
        zeta_norm(T, WeightTable(2, 1.0))


@given(st.integers(0, 2 ** 31))
def test_zeta_submultiplicative(seed):
    rng = np.random.default_rng(seed)
    g = Grid(1.0, 3, 1, 2)
    T = random_sparse_kernel(g, rng, 5)
    zeta = WeightTable(3, *(rng.uniform(0.3, 2.0, (4, 3))))
    lhs = zeta_norm(kernel_product(involution(T), T), zeta.star() @ zeta)
    assert lhs <= zeta_norm(T, zeta) ** 2 * (1 + 1e-12)


def test_operator_bound_examples():
    g = Grid(1.0, 3)
    z = WeightTable(3, 1.0)
    assert epsilon_operator_bound(Kernel.unit(g), z, 2.0, 1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="admissible"):
        admissible_epsilon(WeightTable(3, 2.0), 1.0, 1.0)


@given(st.integers(0, 2 ** 31), st.floats(1.5, 6.0), st.floats(0.1, 0.6))
def test_operator_bound_holds(seed, xp, xm):
    rng = np.random.default_rng(seed)
    g = Grid(1.0, 3, 1, 2)
    T = random_sparse_kernel(g, rng, 6, 0.7)
    zeta = WeightTable(3, *(rng.uniform(0.2, 1.0, (4, 3))))
    try:
        bound = epsilon_operator_bound(T, zeta, xp, xm)
    except ValueError:
        return
    assert epsilon_relative_norm(T, xp, xm) <= bound * (1 + 1e-12)


def test_wick_examples(rng):
    g = Grid(1.0, 2, 2, 2)
    X = complex_normal(rng, 2, 2)
    T = wick_from_integrand(Kernel.sparse(g, {FourTable(): X}))
    assert set(T.blocks) == {FourTable(k00=m) for m in range(4)}
    for m in range(4):
        I = np.eye(2 ** bin(m).count("1"))
        assert np.allclose(T.blocks[FourTable(k00=m)], np.kron(X, I))
    Z = Kernel.zero(g)
    assert not wick_from_integrand(Z).blocks and not integrand_from_wick(Z).blocks


def test_wick_leg_placement(rng):
    """L on the table k00 = {1} dresses with the identity on cell 0 in the (H, e0, e1) leg order."""
    g = Grid(1.0, 2, 2, 1)
    B = complex_normal(rng, 2, 2)
    T = wick_from_integrand(Kernel.sparse(g, {FourTable(k00=0b10): B}))
    want = np.einsum("ab,ij->iajb", B, np.eye(2)).reshape(4, 4)
    assert np.allclose(T.blocks[FourTable(k00=0b11)], want)


@pytest.mark.parametrize("n,d,dh", [(3, 1, 2), (3, 2, 1), (4, 1, 1)])
def test_wick_roundtrip_and_double_sum(rng, n, d, dh):
    g = Grid(1.0, n, d, dh)
    L = random_sparse_kernel(g, rng, 8)
    T = wick_from_integrand(L)
    assert integrand_from_wick(T).distance(L) <= 1e-13
    if d == 1:
        # direct double sum: T(k) = sum over theta in k00 of L(k with k00 = theta)
        for tab in all_tables(n):
            want = 0
            for th in submasks(tab.k00):
                want = want + L.block(tab._replace(k00=th))
            assert np.allclose(T.block(tab), want, atol=1e-13)
