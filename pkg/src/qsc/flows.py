"""Quantum stochastic flows driven by structure maps.

A structure map assigns to every cell ``x`` linear maps ``lambda^mu_nu(x)`` on
operators on ``H``:

    lambda00: B(H) -> B(H (x) E),   lambda0+: B(H) -> B(H, H (x) E),
    lambda-0: B(H) -> B(H (x) E, H), lambda-+: B(H) -> B(H),

assembled into the triangular point matrix ``phi(x, A) = lambda(x, A) + A (x) 1``.
Maps are stored as superoperator matrices ``M`` with
``B.ravel() = M @ A.ravel()`` (row-major).

The flow ``j^t(A)`` is the multiple integral of the nested integrand
``tau0[lambda(x_1, lambda(x_2, ... lambda(x_m, A)))]`` with ``x_1`` earliest.
"""
from dataclasses import dataclass, field
from itertools import product as _iproduct
from typing import Optional

import numpy as np

from . import _kernels
from .fock import (Grid, apply_h_op, basis_sweep, cells_of, check_dense_cap, quanta_indices, relative_norm,
                   truncated_columns)
from .kernels import (ROLES, FourTable, Kernel, WeightTable, admissible_epsilon, epsilon_columns, permute_block,
                      wick_from_integrand)
from .triangular import TriangularPointMatrix

_FIELD = {"00": "z0", "0+": "zp", "-0": "m0", "-+": "mp"}
# (E leg on the output, E leg on the input) per role
_LEGS = {"00": (True, True), "0+": (True, False), "-0": (False, True), "-+": (False, False)}


def superop_of(fn, n_in, shape_out):
    """Superoperator matrix of a linear map ``fn: (n_in, n_in) -> shape_out``."""
    M = np.zeros((shape_out[0] * shape_out[1], n_in * n_in), dtype=complex)
    for k in range(n_in * n_in):
        e = np.zeros(n_in * n_in, dtype=complex)
        e[k] = 1.0
        M[:, k] = np.asarray(fn(e.reshape(n_in, n_in)), dtype=complex).reshape(-1)
    return M


def map_norm_bound(M, n_in, shape_out):
    """Upper bound on the norm of ``A -> M A`` tensored with any identity.

    Realigning ``M`` gives the operator-Schmidt form ``B = sum_m s_m U_m A V_m^T``.
    Both ``sum_m s_m ||U_m|| ||V_m||`` and the row/column bound
    ``||sum s_m U_m U_m^dag||^(1/2) ||sum s_m conj(V_m) V_m^T||^(1/2)`` dominate the
    completely bounded norm; the smaller one is returned.
    """
    r, c = shape_out
    R = np.asarray(M).reshape(r, c, n_in, n_in).transpose(0, 2, 1, 3).reshape(r * n_in, c * n_in)
    if not np.any(R):
        return 0.0
    u, s, vh = np.linalg.svd(R, full_matrices=False)
    keep = s > s[0] * 1e-15
    U = u[:, keep].T.reshape(-1, r, n_in)
    V = vh[keep].reshape(-1, c, n_in)
    s = s[keep]
    schmidt = sum(sm * np.linalg.norm(Um, 2) * np.linalg.norm(Vm, 2) for sm, Um, Vm in zip(s, U, V))
    row = np.einsum("m,mia,mja->ij", s, U, U.conj())
    col = np.einsum("m,mia,mja->ij", s, V.conj(), V)
    haag = np.sqrt(np.linalg.norm(row, 2) * np.linalg.norm(col, 2))
    return float(min(schmidt, haag))


class StructureMap:
    """Per-cell maps ``lambda^mu_nu(x)`` stored as superoperator matrices.

    Parameters
    ----------
    dim_h, d_mult : int
        Dimensions of H and E.
    lam : list of dict
        One dict per cell mapping roles ``"00", "0+", "-0", "-+"`` to
        superoperator matrices; missing roles are zero.
    """

    def __init__(self, dim_h, d_mult, lam):
        self.dim_h = int(dim_h)
        self.d_mult = int(d_mult)
        self.lam = []
        for x, cell in enumerate(lam):
            entry = {}
            for role in ROLES:
                r, c = self.block_shape(role)
                M = cell.get(role)
                M = np.zeros((r * c, self.dim_h ** 2), dtype=complex) if M is None else np.asarray(M, dtype=complex)
                if M.shape != (r * c, self.dim_h ** 2):
                    raise ValueError(f"lambda{role} at cell {x} has shape {M.shape}, "
                                     f"expected {(r * c, self.dim_h ** 2)}")
                entry[role] = M
            self.lam.append(entry)

    @property
    def n_cells(self):
        return len(self.lam)

    def block_shape(self, role):
        a, b = self.dim_h, self.dim_h * self.d_mult
        lo, li = _LEGS[role]
        return (b if lo else a, b if li else a)

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, dim_h, d_mult, n_cells):
        return cls(dim_h, d_mult, [{} for _ in range(n_cells)])

    @classmethod
    def from_phi(cls, dim_h, d_mult, n_cells, phi_fn, rng=None, tol=1e-10):
        """Build from ``phi_fn(x, A) -> TriangularPointMatrix``.

        ``lambda = phi - A (x) 1``; linearity is checked on a random pair.
        """
        lam = []
        for x in range(n_cells):
            entry = {}
            for role in ROLES:
                f = _FIELD[role]
                if role == "00":
                    fn = lambda A, f=f: getattr(phi_fn(x, A), f) - np.kron(A, np.eye(d_mult))
                else:
                    fn = lambda A, f=f: getattr(phi_fn(x, A), f)
                entry[role] = superop_of(fn, dim_h, cls(dim_h, d_mult, []).block_shape(role))
            lam.append(entry)
        out = cls(dim_h, d_mult, lam)
        rng = np.random.default_rng(0) if rng is None else rng
        A, B = (rng.standard_normal((2, dim_h, dim_h)) + 1j * rng.standard_normal((2, dim_h, dim_h)))
        for x in range(n_cells):
            lhs = phi_fn(x, A + 2.0 * B)
            rhs = phi_fn(x, A) + phi_fn(x, B) * 2.0
            if (lhs - rhs).max_abs() > tol * max(1.0, lhs.max_abs()):
                raise ValueError(f"phi is not linear at cell {x}")
        return out

    # -- evaluation --------------------------------------------------------
    def apply(self, x, role, A):
        r, c = self.block_shape(role)
        return (self.lam[x][role] @ np.asarray(A, dtype=complex).reshape(-1)).reshape(r, c)

    def phi(self, x, A):
        A = np.asarray(A, dtype=complex)
        return TriangularPointMatrix(
            self.dim_h, self.d_mult, mm=A, pp=A,
            z0=self.apply(x, "00", A) + np.kron(A, np.eye(self.d_mult)),
            zp=self.apply(x, "0+", A), m0=self.apply(x, "-0", A), mp=self.apply(x, "-+", A))

    def norms(self):
        """Per-cell norm bounds ``||lambda^mu_nu(x)||`` and ``||phi00(x)||``."""
        out = {r: np.zeros(self.n_cells) for r in ROLES}
        phi00 = np.zeros(self.n_cells)
        n = self.dim_h
        j00 = superop_of(lambda A: np.kron(A, np.eye(self.d_mult)), n, self.block_shape("00"))
        for x in range(self.n_cells):
            for r in ROLES:
                out[r][x] = map_norm_bound(self.lam[x][r], n, self.block_shape(r))
            phi00[x] = map_norm_bound(self.lam[x]["00"] + j00, n, self.block_shape("00"))
        return out, phi00


def spatial_structure_map(F, dim_h=None, d_mult=None, n_cells=None):
    """``phi(x, A) = F(x)* (A (x) 1) F(x)`` for per-cell point matrices ``F``."""
    if isinstance(F, TriangularPointMatrix):
        if n_cells is None:
            raise ValueError("n_cells is required for a single point matrix")
        F = [F] * n_cells
    F = list(F)
    dh, d = F[0].dim_h, F[0].d_mult
    Fs = [f.pseudo_conjugate() for f in F]

    def phi(x, A):
        j = TriangularPointMatrix(dh, d, mm=A, z0=np.kron(A, np.eye(d)), pp=A)
        return Fs[x] @ j @ F[x]

    return StructureMap.from_phi(dh, d, len(F), phi)


def _random_algebra_elements(generators, rng, count):
    gens = [np.asarray(g, dtype=complex) for g in generators]
    words = gens + [a @ b for a in gens for b in gens]
    out = []
    for _ in range(count):
        c = rng.standard_normal(len(words)) + 1j * rng.standard_normal(len(words))
        out.append(sum(ci * w for ci, w in zip(c, words)))
    return out


def structure_map_check(phi, generators, n_random=20, rng=None):
    """Homomorphism and unit defects of a structure map.

    Returns the max over cells and over pairs from ``generators`` plus
    ``n_random`` random algebra elements of ``||phi(A^dag B) - phi(A)* phi(B)||``
    (max-abs entries) and ``||phi(I) - I||``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    elems = [np.asarray(g, dtype=complex) for g in generators]
    elems = elems + _random_algebra_elements(elems, rng, n_random) if elems else elems
    idm = TriangularPointMatrix.identity(phi.dim_h, phi.d_mult)
    hom = 0.0
    unit = 0.0
    herm = 0.0
    for x in range(phi.n_cells):
        unit = max(unit, (phi.phi(x, np.eye(phi.dim_h)) - idm).max_abs())
        ph = [phi.phi(x, A) for A in elems]
        for A, pa in zip(elems, ph):
            herm = max(herm, (phi.phi(x, A.conj().T) - pa.pseudo_conjugate()).max_abs())
            for B, pb in zip(elems, ph):
                hom = max(hom, (phi.phi(x, A.conj().T @ B) - pa.pseudo_conjugate() @ pb).max_abs())
    return {"homomorphism": hom, "unital": unit, "hermitian": herm}


@dataclass
class FlowSpec:
    """Structure map, initial map ``tau0`` and algebra generators on a grid.

    ``tau0`` is a superoperator matrix on ``B(H)`` (``None`` for the identity).
    """

    grid: Grid
    structure: StructureMap
    tau0: Optional[np.ndarray] = None
    generators: list = field(default_factory=list)

    def __post_init__(self):
        s = self.structure
        if s.n_cells != self.grid.n_cells or s.dim_h != self.grid.dim_h or s.d_mult != self.grid.d_mult:
            raise ValueError("structure map does not match the grid")
        if self.tau0 is not None:
            self.tau0 = np.asarray(self.tau0, dtype=complex)
            if self.tau0.shape != (s.dim_h ** 2,) * 2:
                raise ValueError(f"tau0 has shape {self.tau0.shape}, expected {(s.dim_h ** 2,) * 2}")

    def apply_tau0(self, Y):
        """``tau0`` on the H factor of ``Y`` with shape ``(dh, R, dh, R')``."""
        if self.tau0 is None:
            return Y
        return _superop_on_h(self.tau0, Y, self.grid.dim_h, (self.grid.dim_h, self.grid.dim_h))


def _superop_on_h(M, Y, dh, shape_out):
    """Apply ``M (x) id`` to ``Y`` of shape ``(dh, Ro, dh, Ri)``; returns ``(r, Ro, c, Ri)``."""
    _, Ro, _, Ri = Y.shape
    t = Y.transpose(0, 2, 1, 3).reshape(dh * dh, Ro * Ri)
    r, c = shape_out
    return (M @ t).reshape(r, c, Ro, Ri).transpose(0, 2, 1, 3)


# ---------------------------------------------------------------------------
# flows

def flow_kernel(spec, A, t=None):
    """Kernel of ``j^t(A)``: nested integrand over tables in ``[0, t)``, Wick-dressed.

    Enumerates all ``5**m`` tables of the ``m`` cells before ``t``; intended
    for small grids.
    """
    g = spec.grid
    t = g.horizon_T if t is None else t
    s = spec.structure
    dh, d = g.dim_h, g.d_mult
    past = cells_of(g.cells_before(t))
    A = np.asarray(A, dtype=complex)
    blocks = {}
    for roles in _iproduct((None,) + ROLES, repeat=len(past)):
        Y = A.reshape(dh, 1, dh, 1)
        outs, ins = [], []
        zero = False
        for x, r in zip(reversed(past), reversed(roles)):
            if r is None:
                continue
            rr, cc = s.block_shape(r)
            Y = _superop_on_h(s.lam[x][r], Y, dh, (rr, cc))
            lo, li = _LEGS[r]
            Ro, Ri = Y.shape[1], Y.shape[3]
            Y = Y.reshape(dh, (d if lo else 1) * Ro, dh, (d if li else 1) * Ri)
            outs = ([x] if lo else []) + outs
            ins = ([x] if li else []) + ins
            if not np.any(Y):
                zero = True
                break
        if zero:
            continue
        Y = spec.apply_tau0(Y) if spec.tau0 is not None else Y
        tab = FourTable.from_roles({x: r for x, r in zip(past, roles)})
        B = Y.reshape(dh * Y.shape[1], dh * Y.shape[3])
        B = permute_block(B, dh, d, outs, tab.out_cells(), ins, tab.in_cells())
        blocks[tab] = B
    return wick_from_integrand(Kernel.sparse(g, blocks))


def flow_apply(spec, A, t=None):
    """Dense ``j^t(A)`` by the cellwise recursion from the latest cell.

    With ``Y`` the operator built on the cells after ``x``, the cell ``x``
    contributes ``[[Y + dt phi-+(Y), sqrt(dt) phi-0(Y)], [sqrt(dt) phi0+(Y), phi00(Y)]]``
    in the local coordinates (empty, occupied); cells at or after ``t`` act
    as the identity.  Finally ``tau0`` is applied to the H factor.
    """
    g = spec.grid
    check_dense_cap(g)
    t = g.horizon_T if t is None else t
    s = spec.structure
    dh, d, q, dt = g.dim_h, g.d_mult, g.q, g.dt
    rdt = np.sqrt(dt)
    past = g.cells_before(t)
    Y = np.asarray(A, dtype=complex).reshape(dh, 1, dh, 1)
    for x in reversed(range(g.n_cells)):
        R = Y.shape[1]
        Z = np.zeros((dh, R, q, dh, R, q), dtype=complex)
        if (past >> x) & 1:
            lam = s.lam[x]
            Z[:, :, 0, :, :, 0] = Y + dt * _superop_on_h(lam["-+"], Y, dh, (dh, dh))
            zp = _superop_on_h(lam["0+"], Y, dh, (dh * d, dh)).reshape(dh, d, R, dh, R)
            Z[:, :, 1:, :, :, 0] = rdt * zp.transpose(0, 2, 1, 3, 4)
            m0 = _superop_on_h(lam["-0"], Y, dh, (dh, dh * d)).reshape(dh, R, dh, d, R)
            Z[:, :, 0, :, :, 1:] = rdt * m0.transpose(0, 1, 2, 4, 3)
            z0 = _superop_on_h(lam["00"], Y, dh, (dh * d, dh * d)).reshape(dh, d, R, dh, d, R)
            Z[:, :, 1:, :, :, 1:] = z0.transpose(0, 2, 1, 3, 5, 4)
            for e in range(d):
                Z[:, :, 1 + e, :, :, 1 + e] += Y
        else:
            for sidx in range(q):
                Z[:, :, sidx, :, :, sidx] = Y
        Y = Z.reshape(dh, R * q, dh, R * q)
    Y = spec.apply_tau0(Y)
    return Y.reshape(g.dim, g.dim)


def _transfer_op(lam, dh, d, dt, active):
    """Local operator on (superoperator bond, cell) for the matrix-free sweep.

    Returns ``W[b_out, s, b_in, s']`` with ``b = h*dh + h'`` indexing the H-block.
    """
    q, n2 = 1 + d, dh * dh
    W = np.zeros((n2, q, n2, q), dtype=complex)
    eye = np.eye(n2)
    for s in range(q):
        W[:, s, :, s] = eye
    if not active:
        return W
    rdt = np.sqrt(dt)
    W[:, 0, :, 0] += dt * lam["-+"]
    W[:, 1:, :, 0] = rdt * lam["0+"].reshape(dh, d, dh, n2).transpose(0, 2, 1, 3).reshape(n2, d, n2)
    W[:, 0, :, 1:] = rdt * lam["-0"].reshape(dh, dh, d, n2).transpose(0, 1, 3, 2).reshape(n2, n2, d)
    W[:, 1:, :, 1:] += lam["00"].reshape(dh, d, dh, d, n2).transpose(0, 2, 1, 4, 3).reshape(n2, d, n2, d)
    return W


def flow_apply_vec(spec, A, v, t=None, adjoint=False):
    """Matrix-free ``j^t(A) v`` (or ``j^t(A)^dag v``) for coordinate batches ``(dim_h, Q, B)``.

    The H-block of the nested integrand is carried as a bond index through a
    sweep from the latest cell to the earliest; the H legs are contracted
    with the vector at the end.
    """
    g = spec.grid
    t = g.horizon_T if t is None else t
    dh, d, q, Q = g.dim_h, g.d_mult, g.q, g.n_configs
    n2 = dh * dh
    past = g.cells_before(t)
    v = np.asarray(v, dtype=complex).reshape(dh, Q, -1)
    nb = v.shape[-1]
    a = np.asarray(A, dtype=complex).reshape(-1)
    if adjoint:
        a = a.conj()
    # X[b, c, h', B]
    X = a[:, None, None, None] * v.transpose(1, 0, 2)[None, :, :, :]
    X = X.reshape(n2, Q, dh * nb)
    for x in reversed(range(g.n_cells)):
        W = _transfer_op(spec.structure.lam[x], dh, d, g.dt, (past >> x) & 1)
        if adjoint:
            W = W.conj().transpose(0, 3, 2, 1)
        hi, lo = q ** (g.n_cells - 1 - x), q ** x
        X = _kernels.local_apply(X.reshape(n2, hi, q, lo * dh * nb), W).reshape(n2, Q, dh * nb)
    if spec.tau0 is not None:
        T0 = spec.tau0.conj() if adjoint else spec.tau0
        X = (T0 @ X.reshape(n2, -1)).reshape(n2, Q, dh * nb)
    X = X.reshape(dh, dh, Q, dh, nb)
    if adjoint:
        # bond (h', h): the vector index is the first one
        return np.einsum("kacke->ace", X)
    return np.einsum("akcke->ace", X)


def flow_estimate(spec, t=None, xi_plus=1.0, xi_minus=1.0):
    """Bound on ``||j^t(A)||`` from ``||.||(xi_plus)`` to ``||.||(xi_minus)`` per unit ``||A||``.

    ``||tau0|| exp{sum_x dt (||lambda-+|| + (||lambda0+||^2 + ||lambda-0||^2) / (2 eps))}``
    with ``eps`` admissible for ``zeta00 = ||phi00||``; norms are
    operator-Schmidt bounds valid on every tensor extension.
    """
    g = spec.grid
    t = g.horizon_T if t is None else t
    past = np.array([(g.cells_before(t) >> x) & 1 for x in range(g.n_cells)], dtype=bool)
    nrm, phi00 = spec.structure.norms()
    zeta = WeightTable(g.n_cells, np.where(past, phi00, 1.0), nrm["0+"] * past, nrm["-0"] * past,
                       nrm["-+"] * past)
    eps = admissible_epsilon(zeta, xi_plus, xi_minus)
    expo = zeta.lp("-+", 1, g.dt) + (zeta.lp("-0", 2, g.dt) ** 2 + zeta.lp("0+", 2, g.dt) ** 2) / (2 * eps)
    dh = g.dim_h
    tau = 1.0 if spec.tau0 is None else map_norm_bound(spec.tau0, dh, (dh, dh))
    return tau * float(np.exp(expo))


def flow_relative_norm(spec, A, t=None, xi_plus=1.0, xi_minus=1.0):
    """Actual ``||j^t(A)||`` from ``||.||(xi_plus)`` to ``||.||(xi_minus)``."""
    return relative_norm(flow_apply(spec, A, t), spec.grid, xi_plus, xi_minus)


def flow_columns(spec, A, idx, t=None, adjoint=False):
    """Columns ``j^t(A) e_j`` (or of ``j^t(A)^dag``) for flat basis indices ``idx``.

    Same sweep as :func:`flow_apply_vec`, specialised to basis vectors so
    that only visited cells carry a superposition.
    """
    g = spec.grid
    t = g.horizon_T if t is None else t
    dh, d, Q = g.dim_h, g.d_mult, g.n_configs
    n2 = dh * dh
    past = g.cells_before(t)
    ops = []
    for x in range(g.n_cells):
        W = _transfer_op(spec.structure.lam[x], dh, d, g.dt, (past >> x) & 1)
        if adjoint:
            W = W.conj().transpose(0, 3, 2, 1)
        ops.append(W.reshape(n2 * g.q, n2 * g.q))
    a = np.asarray(A, dtype=complex).reshape(-1)
    a = a.conj() if adjoint else a
    T0 = None if spec.tau0 is None else (spec.tau0.conj() if adjoint else spec.tau0)
    out = np.empty((g.dim, len(idx)), dtype=complex)
    for k, j in enumerate(np.asarray(idx).tolist()):
        h, c = divmod(j, Q)
        X = basis_sweep(g, c, a, ops, ascending=False)
        if T0 is not None:
            X = T0 @ X
        X = X.reshape(dh, dh, Q)
        out[:, k] = (X[h] if adjoint else X[:, h]).reshape(-1)
    return out


def homomorphism_defect(spec, A, t=None, max_quanta=2):
    """``||P_N (j(A^dag A) - j(A)^dag j(A)) P_N||``, matrix-free."""
    g = spec.grid
    A = np.asarray(A, dtype=complex)
    idx = quanta_indices(g, max_quanta)
    C = flow_columns(spec, A, idx, t)
    R = flow_columns(spec, A.conj().T @ A, idx, t)[idx]
    R -= C.conj().T @ C
    return float(np.linalg.norm(R, 2)) if R.size else 0.0


def conjugation_defect(spec, A, U, t=None, max_quanta=2):
    """``||P_N (j(A) - U^dag (A (x) 1) U) P_N||`` for an evolution ``U``.

    ``U`` is a factorized :class:`~qsc.kernels.Kernel` or a callable on
    coordinate batches.
    """
    g = spec.grid
    A = np.asarray(A, dtype=complex)
    idx = quanta_indices(g, max_quanta)
    R = flow_columns(spec, A, idx, t)[idx]
    C = epsilon_columns(U, idx) if isinstance(U, Kernel) else truncated_columns(U, g, max_quanta)
    AC = apply_h_op(C.reshape(g.dim_h, g.n_configs, -1), g, A).reshape(g.dim, -1)
    R -= C.conj().T @ AC
    return float(np.linalg.norm(R, 2)) if R.size else 0.0
