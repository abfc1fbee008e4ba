"""QS evolutions: chronological kernels, Euler stepping, Hamiltonian exponentials.

A generator table is a per-cell list of :class:`TriangularPointMatrix` with
vanishing ``--``/``++`` blocks; the evolution factor of a cell is ``F = I + L``.
"""
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .fock import (apply_cell_op, apply_h_op, cells_of, h_op_matrix, quanta_indices, truncated_norm)
from .integrals import single_integral_apply, KINDS
from .kernels import Kernel, epsilon_columns, epsilon_matrix, epsilon_apply_coords
from .triangular import TriangularPointMatrix, pseudo_unitary_defects


def as_cells(L, grid):
    """Broadcast a single point matrix to a per-cell list."""
    if isinstance(L, TriangularPointMatrix):
        return [L] * grid.n_cells
    L = list(L)
    if len(L) != grid.n_cells:
        raise ValueError("one point matrix per cell is required")
    return L


def pseudo_conjugate(F):
    return F.pseudo_conjugate()


class PseudoUnitaryReport(NamedTuple):
    isometry: float
    coisometry: float
    gauge: float
    creation: float
    annihilation: float
    time: float

    @property
    def defect(self):
        return max(self.isometry, self.coisometry)


def pseudo_unitary_check(F):
    """Residuals of ``F*F = I`` (component by component) and of ``FF* = I``.

    Components: ``F00^dag F00 = I``, ``F00^dag F0+ + F-0^dag = 0``,
    ``F0+^dag F00 + F-0 = 0``, ``F-+^dag + F0+^dag F0+ + F-+ = 0``.
    """
    if not F.is_identity_diagonal(1e-12):
        raise ValueError("pseudo-unitarity check needs F-- = F++ = I")
    nrm = lambda m: float(np.max(np.abs(m))) if m.size else 0.0
    h = lambda m: m.conj().T
    g = nrm(h(F.z0) @ F.z0 - np.eye(F.z0.shape[0]))
    c = nrm(h(F.z0) @ F.zp + h(F.m0))
    a = nrm(h(F.zp) @ F.z0 + F.m0)
    t = nrm(h(F.mp) + h(F.zp) @ F.zp + F.mp)
    iso, co = pseudo_unitary_defects(F)
    return PseudoUnitaryReport(iso, co, g, c, a, t)


# ---------------------------------------------------------------------------
# Hamiltonian exponentials

def hamiltonian_table(H00, H0p, Hmp, Hm0=None):
    """Pseudo-Hermitian triangular table ``[[0, H-0, H-+], [0, H00, H0+], [0, 0, 0]]``."""
    H00 = np.asarray(H00, dtype=complex)
    H0p = np.asarray(H0p, dtype=complex)
    Hmp = np.asarray(Hmp, dtype=complex)
    dh = Hmp.shape[0]
    d = H00.shape[0] // dh
    Hm0 = H0p.conj().T if Hm0 is None else np.asarray(Hm0, dtype=complex)
    return TriangularPointMatrix(dh, d, m0=Hm0, mp=Hmp, z0=H00, zp=H0p)


def is_pseudo_hermitian(H, tol=1e-12):
    h = lambda m: m.conj().T
    return (np.max(np.abs(H.z0 - h(H.z0))) <= tol and np.max(np.abs(H.m0 - h(H.zp))) <= tol
            and np.max(np.abs(H.mp - h(H.mp))) <= tol)


def _phi12(lam):
    """Scalar ``Phi1(l) = (e^{-il} - 1)/l`` and ``Phi2(l) = (e^{-il} - 1 + il)/l^2``."""
    lam = np.asarray(lam, dtype=float)
    p1 = np.empty(lam.shape, dtype=complex)
    p2 = np.empty(lam.shape, dtype=complex)
    small = np.abs(lam) < 0.5
    ls = lam[small]
    # Taylor series: Phi1 = sum_{k>=1} (-i)^k l^{k-1}/k!, Phi2 = sum_{k>=2} (-i)^k l^{k-2}/k!
    s1 = np.zeros(ls.shape, dtype=complex)
    s2 = np.zeros(ls.shape, dtype=complex)
    term = np.ones(ls.shape, dtype=complex)  # (-i)^k l^k / k!
    for k in range(1, 30):
        term = term * (-1j) * ls / k
        # term/l = (-i)^k l^{k-1}/k!; avoid dividing by l via explicit coefficient
        coef = (-1j) ** k / float(np.prod(np.arange(1, k + 1)))
        s1 += coef * ls ** (k - 1)
        if k >= 2:
            s2 += coef * ls ** (k - 2)
    p1[small] = s1
    p2[small] = s2
    lb = lam[~small]
    e = np.exp(-1j * lb)
    p1[~small] = (e - 1.0) / lb
    p2[~small] = (e - 1.0 + 1j * lb) / lb ** 2
    return p1, p2


def hamiltonian_exp(H):
    """``F = exp(-i H)`` for a pseudo-Hermitian table via spectral phi-functions.

    ``F00 = e^{-iH00}``, ``F0+ = Phi1(H00) H0+``, ``F-0 = H-0 Phi1(H00)``,
    ``F-+ = H-0 Phi2(H00) H0+ - i H-+`` with ``Phi1``, ``Phi2`` the entire
    functions above, so singular ``H00`` is handled.
    """
    H00 = 0.5 * (H.z0 + H.z0.conj().T)
    lam, V = np.linalg.eigh(H00)
    p1, p2 = _phi12(lam)
    Vh = V.conj().T
    E = (V * np.exp(-1j * lam)) @ Vh
    P1 = (V * p1) @ Vh
    P2 = (V * p2) @ Vh
    dh = H.dim_h
    return TriangularPointMatrix(dh, H.d_mult, mm=np.eye(dh), m0=H.m0 @ P1, mp=H.m0 @ P2 @ H.zp - 1j * H.mp,
                                 z0=E, zp=P1 @ H.zp, pp=np.eye(dh))


def hamiltonian_exp_dense(H):
    """Oracle: matrix exponential of the full triangular matrix ``-iH``."""
    A = (-1j * H).dense()
    return TriangularPointMatrix.from_dense(scipy.linalg.expm(A), H.dim_h, H.d_mult)


class CanonicalDecomposition(NamedTuple):
    L1: TriangularPointMatrix  # Poissonian part
    L2: TriangularPointMatrix  # Brownian part
    L3: TriangularPointMatrix  # Lebesgue part
    E: np.ndarray
    F: np.ndarray
    P: np.ndarray


def canonical_decompose(H, rcond=1e-12):
    """Split ``exp(-iH) - I`` into Poissonian, Brownian and Lebesgue tables.

    With ``P`` the range projection of ``H00``, ``F = pinv(H00) H0+`` and
    ``E = i (I - P) H0+`` one has ``H0+ = H00 F - iE``, ``H-0 = F^dag H00 + iE^dag``
    and ``F^dag E = 0``.
    """
    if not is_pseudo_hermitian(H, 1e-10):
        raise ValueError("table is not pseudo-Hermitian")
    dh, d = H.dim_h, H.d_mult
    H00 = 0.5 * (H.z0 + H.z0.conj().T)
    pinv = np.linalg.pinv(H00, rcond=rcond, hermitian=True)
    P = H00 @ pinv
    Fp = pinv @ H.zp
    E = 1j * (np.eye(H00.shape[0]) - P) @ H.zp
    L00 = scipy.linalg.expm(-1j * H00) - np.eye(H00.shape[0])
    h = lambda m: m.conj().T
    L1 = TriangularPointMatrix.generator(dh, d, L00=L00, L0p=L00 @ Fp, Lm0=h(Fp) @ L00, Lmp=h(Fp) @ L00 @ Fp)
    L2 = TriangularPointMatrix.generator(dh, d, L0p=-E, Lm0=h(E), Lmp=-0.5 * h(E) @ E)
    L3 = TriangularPointMatrix.generator(dh, d, Lmp=-1j * (H.mp - h(Fp) @ H00 @ Fp))
    return CanonicalDecomposition(L1, L2, L3, E, Fp, P)


def decomposition_residuals(H, dec):
    """Residuals of the defining relations of :func:`canonical_decompose`."""
    h = lambda m: m.conj().T
    r1 = float(np.max(np.abs(H.m0 - (h(dec.F) @ H.z0 + 1j * h(dec.E)))))
    r2 = float(np.max(np.abs(H.zp - (H.z0 @ dec.F - 1j * dec.E))))
    r3 = float(np.max(np.abs(h(dec.F) @ dec.E))) if dec.E.size else 0.0
    Fx = hamiltonian_exp(H) - TriangularPointMatrix.identity(H.dim_h, H.d_mult)
    r4 = (dec.L1 + dec.L2 + dec.L3 - Fx).max_abs()
    return {"h_m0": r1, "h_0p": r2, "orthogonality": r3, "reconstruction": r4}


# ---------------------------------------------------------------------------
# evolutions

def chrono_kernel(F, T0, t, grid):
    """Chronological kernel ``F^t(x_m) ... F^t(x_1) T0`` (identity factors for ``t(x) >= t``)."""
    F = as_cells(F, grid)
    past = grid.cells_before(t)
    cells = [F[x] if (past >> x) & 1 else TriangularPointMatrix.identity(F[x].dim_h, grid.d_mult)
             for x in range(grid.n_cells)]
    return Kernel.factorized(grid, T0, cells, order="chrono")


def _factors(L, grid):
    return [TriangularPointMatrix.identity(f.dim_h, grid.d_mult) + f for f in as_cells(L, grid)]


def evolution_kernel(L, U0, t, grid):
    return chrono_kernel(_factors(L, grid), U0, t, grid)


def evolve(L, U0=None, t=None, grid=None):
    """Dense ``U^t = eps(chrono_kernel(I + L, U0, t))``."""
    t = grid.horizon_T if t is None else t
    return epsilon_matrix(evolution_kernel(L, U0, t, grid))


def evolve_apply(L, U0, t, grid, v):
    """Matrix-free ``U^t v`` for coordinate batches ``(dim_h, Q, B)``."""
    t = grid.horizon_T if t is None else t
    return epsilon_apply_coords(evolution_kernel(L, U0, t, grid), v)


def _leg_operator(blk, grid, legs_out, legs_in):
    """Dense ``blk (x) 1`` where ``blk`` acts on ``H (x) E^legs``; legs minor."""
    dh, d, Q = grid.dim_h, grid.d_mult, grid.n_configs
    shp = (dh,) + ((d,) if legs_out else ()) + (dh,) + ((d,) if legs_in else ())
    b = np.asarray(blk).reshape(shp)
    eye = np.eye(Q)
    if legs_out and legs_in:
        t = np.einsum("aebf,cg->acebgf", b, eye)
    elif legs_out:
        t = np.einsum("aeb,cg->acebg", b, eye)
    elif legs_in:
        t = np.einsum("abf,cg->acbgf", b, eye)
    else:
        t = np.einsum("ab,cg->acbg", b, eye)
    rows = grid.dim * (d if legs_out else 1)
    return t.reshape(rows, -1)


def euler_evolve(L, U0=None, t=None, grid=None, return_steps=False):
    """Independent oracle: ``U_{k+1} = U_k + Delta Lambda_k(L (.) U_k)``.

    Each step builds the dense integrands ``(L^mu_nu (x) 1) U_k`` and applies
    the single QS integrals over cell ``k`` only.
    """
    t = grid.horizon_T if t is None else t
    L = as_cells(L, grid)
    d = grid.d_mult
    U0 = np.eye(grid.dim_h) if U0 is None else np.asarray(U0, dtype=complex)
    U = h_op_matrix(grid, U0)
    steps = [U]
    for k in cells_of(grid.cells_before(t)):
        f = L[k]
        UE = np.kron(U, np.eye(d))
        D = {
            "gauge": _leg_operator(f.z0, grid, True, True) @ UE,
            "creation": _leg_operator(f.zp, grid, True, False) @ U,
            "annihilation": _leg_operator(f.m0, grid, False, True) @ UE,
            "time": _leg_operator(f.mp, grid, False, False) @ U,
        }
        eye = np.eye(grid.dim, dtype=complex).reshape(grid.dim_h, grid.n_configs, grid.dim)
        inc = np.zeros((grid.dim, grid.dim), dtype=complex)
        for kind in KINDS:
            fam = [None] * grid.n_cells
            fam[k] = D[kind]
            inc += single_integral_apply(kind, fam, eye, grid).reshape(grid.dim, grid.dim)
        U = U + inc
        steps.append(U)
    return steps if return_steps else U


def euler_apply(L, U0, t, grid, v):
    """Matrix-free Euler stepping with local increments ``I + Lambda_k(L)``."""
    t = grid.horizon_T if t is None else t
    L = as_cells(L, grid)
    U0 = np.eye(grid.dim_h) if U0 is None else np.asarray(U0, dtype=complex)
    v = apply_h_op(v, grid, U0)
    for k in cells_of(grid.cells_before(t)):
        op = np.eye(grid.dim_h * grid.q) + L[k].increment_op(grid.dt)
        v = apply_cell_op(v, grid, k, op)
    return v


def second_quantization(l, t=None, grid=None):
    """``Gamma(1 + l^t)`` for scalar-level per-cell triangular matrices."""
    t = grid.horizon_T if t is None else t
    cells = as_cells(l, grid)
    if any(f.dim_h != 1 for f in cells):
        raise ValueError("second quantization needs scalar-level (H-trivial) matrices")
    past = grid.cells_before(t)
    one = TriangularPointMatrix.identity(1, grid.d_mult)
    fs = [one + f if (past >> x) & 1 else one for x, f in enumerate(cells)]
    return epsilon_matrix(Kernel.factorized(grid, None, fs))


def unitarity_defect(L, U0, t, grid, max_quanta=2):
    """``||P_N (U^dag U - I) P_N||`` for the kernel evolution, matrix-free."""
    K = evolution_kernel(L, U0, t, grid)
    W = epsilon_columns(K, quanta_indices(grid, max_quanta))
    G = W.conj().T @ W - np.eye(W.shape[1])
    return float(np.linalg.norm(G, 2)) if G.size else 0.0


# ---------------------------------------------------------------------------
# Ito formula

SPLIT_MAX_CELLS = 8
# increments below this size (pseudounitary factors up to rounding) are skipped
INC_NEGLIGIBLE = 1e-13

def ito_formula_check(L, U0=None, t=None, grid=None, max_quanta=2):
    """Discrete check of ``d(U*U) = dLambda(U*(L + L* + L*L)U)``.

    Along the kernel evolution ``U_{k+1} = F_k U_k`` the accumulated defect
    ``U_n^dag U_n - U_0^dag U_0 - sum_k U_k^dag Lambda_k(L + L* + L*L) U_k``
    is measured in the truncated norm (``P_N`` onto at most ``max_quanta``
    quanta).  The three-term split ``U^dag dU + dU^dag U + dU^dag dU`` of each
    increment is checked as well.
    """
    t = grid.horizon_T if t is None else t
    L = as_cells(L, grid)
    dt = grid.dt
    U0 = np.eye(grid.dim_h) if U0 is None else np.asarray(U0, dtype=complex)
    past = cells_of(grid.cells_before(t))
    eye_loc = np.eye(grid.dim_h * grid.q)
    fwd = {}
    inc = {}
    for k in past:
        f = L[k]
        F = TriangularPointMatrix.identity(f.dim_h, grid.d_mult) + f
        fwd[k] = F.epsilon_op(dt)
        M = f + f.pseudo_conjugate() + f.pseudo_conjugate() @ f
        inc[k] = M.increment_op(dt)

    def Ud_apply(v, upto):
        for k in reversed(past):
            if k >= upto:
                continue
            v = apply_cell_op(v, grid, k, fwd[k].conj().T)
        return apply_h_op(v, grid, U0.conj().T)

    idx = quanta_indices(grid, max_quanta)
    nc = idx.size
    batch = 8

    def columns():
        e = np.zeros((grid.dim, nc), dtype=complex)
        e[idx, np.arange(nc)] = 1.0
        return apply_h_op(e.reshape(grid.dim_h, grid.n_configs, nc), grid, U0)

    # Gram form: P D P = W_n^dag W_n - W_0^dag W_0 - sum_k W_k^dag Inc_k W_k, W_k = U_k P
    W = columns()
    flat = lambda a: a.reshape(grid.dim, -1)
    G = -(flat(W).conj().T @ flat(W))
    for k in past:
        if np.max(np.abs(inc[k])) > INC_NEGLIGIBLE:
            Z = np.concatenate([flat(apply_cell_op(W[:, :, s:s + batch], grid, k, inc[k]))
                                for s in range(0, nc, batch)], axis=1)
            G -= flat(W).conj().T @ Z
            del Z
        for s in range(0, nc, batch):
            W[:, :, s:s + batch] = apply_cell_op(W[:, :, s:s + batch], grid, k, fwd[k])
    G += flat(W).conj().T @ flat(W)
    del W
    ito = float(np.linalg.norm(G, 2)) if nc else 0.0

    def split(v):
        out = np.zeros_like(v)
        w = apply_h_op(v, grid, U0)
        for k in past:
            Gk = fwd[k]
            w1 = apply_cell_op(w, grid, k, Gk)
            dw = w1 - w
            dG = (Gk - eye_loc).conj().T
            r = (apply_cell_op(w1, grid, k, Gk.conj().T) - w
                 - dw - apply_cell_op(w, grid, k, dG) - apply_cell_op(dw, grid, k, dG))
            out += Ud_apply(r, k)
            w = w1
        return out

    # the split is quadratic in n; it is an algebraic identity, so small grids suffice
    three = truncated_norm(split, grid, max_quanta) if grid.n_cells <= SPLIT_MAX_CELLS else None
    return {"ito_defect": ito, "three_term_defect": three, "max_quanta": max_quanta, "dt": dt}


def exponential_ito_check(A, t=None, grid=None, tol=1e-12, max_quanta=2):
    """Compare ``exp(Lambda^t(A))`` with the evolution generated by ``exp{A} - I``.

    ``A`` is a per-cell generator family whose one-cell increments must
    commute across cells.  Returns the truncated-norm defect; commuting
    gauge-only families agree exactly.
    """
    t = grid.horizon_T if t is None else t
    A = as_cells(A, grid)
    dt = grid.dt
    past = cells_of(grid.cells_before(t))
    # commutativity of the local increments on H (x) cell x (x) cell y
    q, dh = grid.q, grid.dim_h
    incs = [a.increment_op(dt) for a in A]
    eq = np.eye(q)
    for i, x in enumerate(past):
        for y in past[i + 1:]:
            ax = np.einsum("asbt,uv->asubtv", incs[x].reshape(dh, q, dh, q), eq).reshape(dh * q * q, -1)
            ay = np.einsum("aubv,st->asubtv", incs[y].reshape(dh, q, dh, q), eq).reshape(dh * q * q, -1)
            c = ax @ ay - ay @ ax
            if np.max(np.abs(c)) > 1e-12 * max(1.0, np.max(np.abs(ax)) * np.max(np.abs(ay))):
                raise ValueError(f"family does not commute (cells {x} and {y})")
    X = np.zeros((grid.dim, grid.dim), dtype=complex)
    eye = np.eye(grid.dim, dtype=complex).reshape(dh, grid.n_configs, grid.dim)
    for k in past:
        X += apply_cell_op(eye, grid, k, incs[k]).reshape(grid.dim, grid.dim)
    U_exp = scipy.linalg.expm(X)
    expA = [a.expm() - TriangularPointMatrix.identity(dh, grid.d_mult) for a in A]
    # exp of a generator table with zero diagonal corners keeps identity corners
    U_ev = evolve(expA, None, t, grid)
    diff = U_exp - U_ev
    dfull = float(np.max(np.abs(diff)))
    dtrunc = truncated_norm(diff, grid, max_quanta)
    return {"defect": dtrunc, "max_abs": dfull, "exact": dfull <= tol, "dt": dt}
