"""Four-table kernels, their representation on Fock space and the kernel algebra.

A four-table ``(k00, k0p, km0, kmp)`` assigns each of its cells one of the
roles gauge-preserved, created, annihilated or scalar.  A kernel maps tables to
blocks ``H (x) E^(km0) (x) E^(k00) -> H (x) E^(k00) (x) E^(k0p)``; block rows
use the leg order ``(H, k00 asc, k0p asc)`` and columns ``(H, km0 asc, k00 asc)``.

Kernels are stored either sparsely (a dict of blocks, missing = 0) or in
factorized form ``X (x) f^(x)`` given by an H-operator and one triangular point
matrix per cell.
"""
from itertools import product as _iproduct
from typing import NamedTuple
import math

import numpy as np

from . import _kernels
from .fock import (FockVector, basis_sweep, apply_cell_op, apply_h_op, cells_of, leg_offsets,
                   popcount, quanta_indices, relative_norm, check_dense_cap, CapExceededError)
from .triangular import TriangularPointMatrix

ROLES = ("00", "0+", "-0", "-+")
_ROLE_FIELD = {"00": "z0", "0+": "zp", "-0": "m0", "-+": "mp"}

#: sparse expansion of a factorized kernel is limited to this many cells
EXPAND_MAX_CELLS = 6


class FourTable(NamedTuple):
    """Four pairwise disjoint chains (bitmasks)."""

    k00: int = 0
    k0p: int = 0
    km0: int = 0
    kmp: int = 0

    @property
    def support(self):
        return self.k00 | self.k0p | self.km0 | self.kmp

    @property
    def in_mask(self):
        return self.k00 | self.km0

    @property
    def out_mask(self):
        return self.k00 | self.k0p

    def out_cells(self):
        return cells_of(self.k00) + cells_of(self.k0p)

    def in_cells(self):
        return cells_of(self.km0) + cells_of(self.k00)

    def star(self):
        """Table transpose: created and annihilated roles swap."""
        return FourTable(self.k00, self.km0, self.k0p, self.kmp)

    def is_partition(self):
        m = [self.k00, self.k0p, self.km0, self.kmp]
        return all(m[i] & m[j] == 0 for i in range(4) for j in range(i + 1, 4))

    def role_of(self, x):
        b = 1 << x
        for r, m in zip(ROLES, self):
            if m & b:
                return r
        return None

    @classmethod
    def from_roles(cls, roles):
        """Build from ``{cell: role}``."""
        m = dict.fromkeys(ROLES, 0)
        for x, r in roles.items():
            if r is not None:
                m[r] |= 1 << x
        return cls(m["00"], m["0+"], m["-0"], m["-+"])


def block_shape(grid, tab):
    d = grid.d_mult
    return (grid.dim_h * d ** (popcount(tab.k00) + popcount(tab.k0p)),
            grid.dim_h * d ** (popcount(tab.km0) + popcount(tab.k00)))


def coordinate_factor(grid, tab):
    """``dt**(|kmp| + (|km0| + |k0p|)/2)``, the block weight in coordinates."""
    return grid.dt ** (popcount(tab.kmp) + 0.5 * (popcount(tab.km0) + popcount(tab.k0p)))


def permute_block(B, dh, d, out_from, out_to, in_from, in_to):
    """Reorder the E-legs of a block between two cell orderings."""
    if d == 1 or (list(out_from) == list(out_to) and list(in_from) == list(in_to)):
        return B
    no, ni = len(out_from), len(in_from)
    t = B.reshape((dh,) + (d,) * no + (dh,) + (d,) * ni)
    po = [1 + out_from.index(c) for c in out_to]
    pi = [2 + no + in_from.index(c) for c in in_to]
    t = t.transpose([0] + po + [1 + no] + pi)
    return t.reshape(B.shape)


def _dress_identity(B, dh, d, out_cells, in_cells, id_cells, new_out, new_in):
    """Block of ``B (x) I(id_cells)`` with legs laid out as ``new_out``/``new_in``."""
    if d == 1:
        return B
    no, ni = len(out_cells), len(in_cells)
    lab_out = lambda c: 2 + 2 * c
    lab_in = lambda c: 3 + 2 * c
    ops = [B.reshape((dh,) + (d,) * no + (dh,) + (d,) * ni),
           [0] + [lab_out(c) for c in out_cells] + [1] + [lab_in(c) for c in in_cells]]
    eye = np.eye(d)
    for c in id_cells:
        ops += [eye, [lab_out(c), lab_in(c)]]
    res = [0] + [lab_out(c) for c in new_out] + [1] + [lab_in(c) for c in new_in]
    t = np.einsum(*ops, res)
    return t.reshape(dh * d ** len(new_out), dh * d ** len(new_in))


class Kernel:
    """Kernel on the four-tables of a grid.

    Use :meth:`sparse`, :meth:`factorized` or :meth:`unit` to construct.
    """

    def __init__(self, grid, kind, blocks=None, X=None, cells=None, order="chrono"):
        self.grid = grid
        self.kind = kind
        self.blocks = blocks
        self.X = X
        self.cells = cells
        self.order = order

    # -- construction ------------------------------------------------------
    @classmethod
    def sparse(cls, grid, blocks):
        checked = {}
        for tab, B in blocks.items():
            tab = FourTable(*tab)
            if not tab.is_partition():
                raise ValueError(f"table {tab} is not a partition")
            if tab.support >> grid.n_cells:
                raise ValueError(f"table {tab} has cells outside the grid")
            B = np.asarray(B, dtype=complex)
            shp = block_shape(grid, tab)
            if B.shape != shp:
                raise ValueError(f"block for {tab} has shape {B.shape}, expected {shp}")
            checked[tab] = B
        return cls(grid, "sparse", blocks=checked)

    @classmethod
    def factorized(cls, grid, X, cells, order="chrono"):
        """``X (x) f^(x)`` with one triangular point matrix per cell.

        ``order='chrono'`` represents ``f(x_m) ... f(x_1) X`` (latest factor
        leftmost), ``'antichrono'`` represents ``X f(x_1) ... f(x_m)``.  Cells
        given at scalar level (``dim_h == 1``) act trivially on H.
        """
        if order not in ("chrono", "antichrono"):
            raise ValueError("order must be 'chrono' or 'antichrono'")
        if isinstance(cells, TriangularPointMatrix):
            cells = [cells] * grid.n_cells
        cells = list(cells)
        if len(cells) != grid.n_cells:
            raise ValueError("one point matrix per cell is required")
        for f in cells:
            if f.d_mult != grid.d_mult or f.dim_h not in (1, grid.dim_h):
                raise ValueError("point matrix dimensions do not match the grid")
            if not f.is_identity_diagonal(1e-12):
                raise ValueError("kernel factors need F-- = F++ = I")
        X = np.eye(grid.dim_h, dtype=complex) if X is None else np.asarray(X, dtype=complex)
        return cls(grid, "factorized", X=X, cells=cells, order=order)

    @classmethod
    def unit(cls, grid, factorized=False):
        if factorized:
            return cls.factorized(grid, None, [TriangularPointMatrix.identity(1, grid.d_mult)] * grid.n_cells)
        d = grid.d_mult
        blocks = {}
        for m in range(1 << grid.n_cells):
            blocks[FourTable(m, 0, 0, 0)] = np.eye(grid.dim_h * d ** popcount(m))
        return cls(grid, "sparse", blocks=blocks)

    @classmethod
    def zero(cls, grid):
        return cls(grid, "sparse", blocks={})

    @property
    def h_trivial(self):
        return self.kind == "factorized" and all(f.dim_h == 1 for f in self.cells)

    def lifted_cells(self):
        return [f.lift(self.grid.dim_h) if f.dim_h == 1 and self.grid.dim_h > 1 else f for f in self.cells]

    # -- table access ------------------------------------------------------
    def block(self, tab):
        tab = FourTable(*tab)
        if self.kind == "sparse":
            B = self.blocks.get(tab)
            return np.zeros(block_shape(self.grid, tab), complex) if B is None else B
        return self._factor_block(tab)

    def _factor_block(self, tab):
        g = self.grid
        dh, d = g.dim_h, g.d_mult
        cells = self.lifted_cells()
        # tensor with labels: h_out, out legs..., h_in, in legs...
        cur = self.X.copy()
        out_c, in_c = [], []
        for x in range(g.n_cells):
            r = tab.role_of(x)
            if r is None:
                continue
            f = getattr(cells[x], _ROLE_FIELD[r])
            fo = r in ("00", "0+")
            fi = r in ("00", "-0")
            ft = f.reshape((dh,) + ((d,) if fo else ()) + (dh,) + ((d,) if fi else ()))
            no, ni = len(out_c), len(in_c)
            ct = cur.reshape((dh,) + (d,) * no + (dh,) + (d,) * ni)
            lo = list(range(3, 3 + no))
            li = list(range(20, 20 + ni))
            eo = [40] if fo else []
            ei = [41] if fi else []
            res = [0] + lo + eo + [2] + li + ei
            if self.order == "chrono":
                # f(x) acts after the current product
                fl = [0] + eo + [1] + ei
                cl = [1] + lo + [2] + li
            else:
                # the current product acts after f(x)
                cl = [0] + lo + [1] + li
                fl = [1] + eo + [2] + ei
            cur = np.einsum(ct, cl, ft, fl, res)
            if fo:
                out_c.append(x)
            if fi:
                in_c.append(x)
            cur = cur.reshape(dh * d ** len(out_c), dh * d ** len(in_c))
        return permute_block(cur, dh, d, out_c, tab.out_cells(), in_c, tab.in_cells())

    def to_sparse(self, max_cells=EXPAND_MAX_CELLS):
        """Expand a factorized kernel over all ``5**n`` tables."""
        if self.kind == "sparse":
            return self
        g = self.grid
        if g.n_cells > max_cells:
            raise CapExceededError(f"sparse expansion over 5^{g.n_cells} tables exceeds the limit 5^{max_cells}")
        blocks = {}
        for roles in _iproduct((None,) + ROLES, repeat=g.n_cells):
            tab = FourTable.from_roles(dict(enumerate(roles)))
            blocks[tab] = self._factor_block(tab)
        return Kernel(g, "sparse", blocks=blocks)

    def tables(self):
        return list(self.to_sparse().blocks.keys())

    def scaled(self, c):
        if self.kind == "sparse":
            return Kernel(self.grid, "sparse", blocks={k: c * v for k, v in self.blocks.items()})
        return Kernel(self.grid, "factorized", X=c * self.X, cells=self.cells, order=self.order)

    def __add__(self, other):
        a, b = self.to_sparse(), other.to_sparse()
        out = dict(a.blocks)
        for k, v in b.blocks.items():
            out[k] = out[k] + v if k in out else v
        return Kernel(self.grid, "sparse", blocks=out)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def distance(self, other):
        """Max-abs difference over the union of supported tables."""
        a, b = self.to_sparse(), other.to_sparse()
        keys = set(a.blocks) | set(b.blocks)
        return max((float(np.max(np.abs(a.block(k) - b.block(k)))) for k in keys), default=0.0)

    def __repr__(self):
        if self.kind == "sparse":
            return f"Kernel(sparse, {len(self.blocks)} tables)"
        return f"Kernel(factorized, {self.order}, n={self.grid.n_cells})"


# ---------------------------------------------------------------------------
# representation

def _sparse_apply(T, v):
    g = T.grid
    dh, d = g.dim_h, g.d_mult
    out = np.zeros_like(v)
    if not T.blocks:
        return out
    if d == 1:
        tabs = list(T.blocks)
        o_cfg = np.array([t.out_mask for t in tabs], dtype=np.int64)
        i_cfg = np.array([t.in_mask for t in tabs], dtype=np.int64)
        scale = np.array([coordinate_factor(g, t) for t in tabs])
        blocks = np.stack([T.blocks[t] for t in tabs])
        return _kernels.scatter_apply(out, v, o_cfg, i_cfg, scale, blocks)
    for tab, B in T.blocks.items():
        o = leg_offsets(g, tab.out_cells())
        i = leg_offsets(g, tab.in_cells())
        Bt = B.reshape(dh, o.size, dh, i.size)
        out[:, o, :] += coordinate_factor(g, tab) * np.einsum("aobi,bic->aoc", Bt, v[:, i, :])
    return out


def epsilon_ops(T):
    """Local factors ``(X, [op_x])`` of a factorized kernel in coordinates."""
    dt = T.grid.dt
    return T.X, [f.epsilon_op(dt) for f in T.lifted_cells()]


def _factorized_apply(T, v):
    g = T.grid
    X, ops = epsilon_ops(T)
    if T.order == "chrono":
        v = apply_h_op(v, g, X)
        for x in range(g.n_cells):
            v = apply_cell_op(v, g, x, ops[x])
    else:
        for x in reversed(range(g.n_cells)):
            v = apply_cell_op(v, g, x, ops[x])
        v = apply_h_op(v, g, X)
    return v


def epsilon_columns(T, idx):
    """Columns ``eps(T) e_j`` for flat basis indices ``idx`` of a factorized kernel.

    Each column is swept cell by cell in the factor order (see
    :func:`~qsc.fock.basis_sweep`); the result has shape ``(dim, len(idx))``.
    """
    if T.kind != "factorized":
        raise ValueError("epsilon_columns needs a factorized kernel")
    g = T.grid
    X, ops = epsilon_ops(T)
    X = np.eye(g.dim_h) if X is None else np.asarray(X, dtype=complex)
    out = np.empty((g.dim, len(idx)), dtype=complex)
    for k, j in enumerate(np.asarray(idx).tolist()):
        h, c = divmod(j, g.n_configs)
        if T.order == "chrono":
            S = basis_sweep(g, c, X[:, h], ops, ascending=True)
        else:
            S = X @ basis_sweep(g, c, np.eye(g.dim_h)[:, h], ops, ascending=False)
        out[:, k] = S.reshape(-1)
    return out


def epsilon_apply_coords(T, v):
    """Apply ``eps(T)`` to coordinate vectors of shape ``(dim_h, Q, B)``."""
    v = np.asarray(v, dtype=complex)
    if T.kind == "sparse":
        return _sparse_apply(T, v)
    return _factorized_apply(T, v)


def epsilon_apply(T, a):
    """``eps(T) a`` for a :class:`FockVector` without free legs."""
    if a.grid != T.grid:
        raise ValueError("grid mismatch")
    if a.n_legs:
        raise ValueError("epsilon_apply expects a vector without free legs")
    g = T.grid
    r = epsilon_apply_coords(T, a.vec().reshape(g.dim_h, g.n_configs, 1))
    return FockVector.from_vec(g, r.reshape(-1))


def epsilon_matrix(T):
    """Dense matrix of ``eps(T)`` in orthonormal coordinates, built from basis columns."""
    g = T.grid
    check_dense_cap(g)
    eye = np.eye(g.dim, dtype=complex).reshape(g.dim_h, g.n_configs, g.dim)
    return epsilon_apply_coords(T, eye).reshape(g.dim, g.dim)


# ---------------------------------------------------------------------------
# algebra

def involution(T):
    """``T*(k) = T(k*)^dag``; factorized kernels reverse their factor order."""
    g = T.grid
    if T.kind == "factorized":
        order = {"chrono": "antichrono", "antichrono": "chrono"}[T.order]
        return Kernel(g, "factorized", X=T.X.conj().T, cells=[f.pseudo_conjugate() for f in T.cells],
                      order=order)
    out = {}
    for tab, B in T.blocks.items():
        st = tab.star()
        Bh = B.conj().T
        # rows of Bh carry the input legs (km0, k00) of tab, columns its output legs
        out[st] = permute_block(Bh, g.dim_h, g.d_mult, tab.in_cells(), st.out_cells(),
                                tab.out_cells(), st.in_cells())
    return Kernel(g, "sparse", blocks=out)


def _compose_blocks(g, s_tab, Bs, t_tab, Bt, p_tab):
    if g.d_mult == 1:
        return Bs @ Bt
    dh, d = g.dim_h, g.d_mult
    so, si = s_tab.out_cells(), s_tab.in_cells()
    to, ti = t_tab.out_cells(), t_tab.in_cells()
    lo = lambda c: 3 + 3 * c
    lm = lambda c: 4 + 3 * c
    li = lambda c: 5 + 3 * c
    st = Bs.reshape((dh,) + (d,) * len(so) + (dh,) + (d,) * len(si))
    tt = Bt.reshape((dh,) + (d,) * len(to) + (dh,) + (d,) * len(ti))
    res = [0] + [lo(c) for c in p_tab.out_cells()] + [2] + [li(c) for c in p_tab.in_cells()]
    r = np.einsum(st, [0] + [lo(c) for c in so] + [1] + [lm(c) for c in si],
                  tt, [1] + [lm(c) for c in to] + [2] + [li(c) for c in ti], res)
    return r.reshape(block_shape(g, p_tab))


def kernel_product(S, T):
    """Kernel of the product ``S . T`` (``T`` acts first).

    Per cell, roles compose like matrix units of the triangular algebra, with
    an absent cell acting as ``e-- + e++``; the annihilation-after-creation
    coincidence contracts into a scalar role.  H-trivial factorized kernels
    stay factorized with cellwise triangular products.
    """
    if S.grid != T.grid:
        raise ValueError("grid mismatch")
    g = S.grid
    if S.h_trivial and T.h_trivial:
        cells = [f @ h for f, h in zip(S.cells, T.cells)]
        return Kernel(g, "factorized", X=S.X @ T.X, cells=cells, order=T.order)
    s, t = S.to_sparse(), T.to_sparse()
    if not s.blocks or not t.blocks:
        return Kernel.zero(g)
    s_tabs = list(s.blocks)
    t_tabs = list(t.blocks)
    i_s, i_t, p = _kernels.product_pairs(np.array(s_tabs, dtype=np.int64), np.array(t_tabs, dtype=np.int64))
    out = {}
    for a, b, pt in zip(i_s.tolist(), i_t.tolist(), p.tolist()):
        st, tt = s_tabs[a], t_tabs[b]
        ptab = FourTable(*pt)
        blk = _compose_blocks(g, st, s.blocks[st], tt, t.blocks[tt], ptab)
        if ptab in out:
            out[ptab] = out[ptab] + blk
        else:
            out[ptab] = blk
    return Kernel(g, "sparse", blocks=out)


def _dress(L, sign):
    g = L.grid
    L = L.to_sparse()
    dh, d = g.dim_h, g.d_mult
    tabs = list(L.blocks)
    if not tabs:
        return Kernel.zero(g)
    free = np.array([g.full_mask & ~t.support for t in tabs], dtype=np.int64)
    idx, subs = _kernels.submask_enum(free)
    out = {}
    for i, r in zip(idx.tolist(), subs.tolist()):
        tab = tabs[i]
        new = FourTable(tab.k00 | r, tab.k0p, tab.km0, tab.kmp)
        blk = L.blocks[tab]
        if d > 1:
            blk = _dress_identity(blk, dh, d, tab.out_cells(), tab.in_cells(), cells_of(r),
                                  new.out_cells(), new.in_cells())
        if sign < 0 and popcount(r) % 2:
            blk = -blk
        out[new] = out[new] + blk if new in out else blk
    return Kernel(g, "sparse", blocks=out)


def wick_from_integrand(L):
    """``T(k) = sum_{theta subset k00} L(.., theta, ..) (x) I(k00 - theta)``."""
    return _dress(L, +1)


def integrand_from_wick(T):
    """Inverse of :func:`wick_from_integrand` (Moebius inversion over ``k00``)."""
    return _dress(T, -1)


# ---------------------------------------------------------------------------
# norms and bounds

class WeightTable:
    """Per-cell nonnegative weights ``zeta^mu_nu(x)``; ``zeta-- = zeta++ = 1``."""

    def __init__(self, n_cells, z00=1.0, z0p=0.0, zm0=0.0, zmp=0.0):
        arrs = [np.broadcast_to(np.asarray(z, dtype=float), (n_cells,)).copy() for z in (z00, z0p, zm0, zmp)]
        if any(np.any(a < 0) for a in arrs):
            raise ValueError("weights must be nonnegative")
        self.n_cells = n_cells
        self.z = dict(zip(ROLES, arrs))

    def __getitem__(self, role):
        return self.z[role]

    def star(self):
        return WeightTable(self.n_cells, self.z["00"], self.z["-0"], self.z["0+"], self.z["-+"])

    def __matmul__(self, other):
        """Cellwise triangular product of weight matrices."""
        a, b = self.z, other.z
        return WeightTable(self.n_cells,
                           a["00"] * b["00"],
                           a["0+"] + a["00"] * b["0+"],
                           b["-0"] + a["-0"] * b["00"],
                           a["-+"] + b["-+"] + a["-0"] * b["0+"])

    def lp(self, role, p, dt):
        return float(np.sum(self.z[role] ** p) * dt) ** (1.0 / p)

    @classmethod
    def of_factors(cls, cells):
        """Weights equal to the block norms of per-cell point matrices."""
        n = len(cells)
        vals = {r: np.array([np.linalg.norm(getattr(f, _ROLE_FIELD[r]), 2) for f in cells]) for r in ROLES}
        return cls(n, vals["00"], vals["0+"], vals["-0"], vals["-+"])


def _table_weight(zeta, tab):
    w = 1.0
    for r, m in zip(ROLES, tab):
        for x in cells_of(m):
            w *= zeta[r][x]
    return w


def zeta_norm(T, zeta):
    """``max_k ||T(k)|| / zeta(k)`` over supported tables."""
    if T.h_trivial:
        nx = float(np.linalg.norm(T.X, 2))
        tot = nx
        for x, f in enumerate(T.cells):
            best = 1.0
            for r in ROLES:
                v = float(np.linalg.norm(getattr(f, _ROLE_FIELD[r]), 2))
                if v == 0:
                    continue
                if zeta[r][x] == 0:
                    raise ZeroDivisionError(f"zero weight on supported role {r} at cell {x}")
                best = max(best, v / zeta[r][x])
            tot *= best
        return tot
    best = 0.0
    for tab, B in T.to_sparse().blocks.items():
        nb = float(np.linalg.norm(B, 2)) if B.size else 0.0
        if nb == 0:
            continue
        w = _table_weight(zeta, tab)
        if w == 0:
            raise ZeroDivisionError(f"zero weight on supported table {tab}")
        best = max(best, nb / w)
    return best


def admissible_epsilon(zeta, xi_plus, xi_minus):
    """``(xi+ + 1/xi- - sqrt((xi+ - 1/xi-)^2 + 4 ||zeta00||^2)) / 2``."""
    z = float(np.max(zeta["00"])) if zeta["00"].size else 0.0
    a, b = float(xi_plus), 1.0 / float(xi_minus)
    eps = 0.5 * (a + b - math.sqrt((a - b) ** 2 + 4.0 * z * z))
    if not eps > 0:
        raise ValueError("no admissible epsilon > 0 for the given (xi_plus, xi_minus)")
    return eps


def epsilon_operator_bound(T, zeta, xi_plus, xi_minus, dt=None):
    """Upper bound for ``||eps(T)||`` from ``||.||(xi_plus)`` to ``||.||(xi_minus)``.

    ``exp{||zeta-+||_1 + (||zeta-0||_2^2 + ||zeta0+||_2^2) / (2 eps)} ||T||(zeta)``.
    """
    dt = T.grid.dt if dt is None else dt
    eps = admissible_epsilon(zeta, xi_plus, xi_minus)
    expo = zeta.lp("-+", 1, dt) + (zeta.lp("-0", 2, dt) ** 2 + zeta.lp("0+", 2, dt) ** 2) / (2 * eps)
    return math.exp(expo) * zeta_norm(T, zeta)


def epsilon_relative_norm(T, xi_plus, xi_minus):
    """Dense ``||eps(T)||`` from ``||.||(xi_plus)`` to ``||.||(xi_minus)``."""
    return relative_norm(epsilon_matrix(T), T.grid, xi_plus, xi_minus)


def multiplicativity_defect(S, T, max_quanta=None, dense_max_dim=512, tol=1e-8):
    """``||eps(S.T) - eps(S) eps(T)||`` in the operator norm.

    With ``max_quanta`` the defect is compressed to at most that many quanta
    (``P_N D P_N``).  Otherwise the full norm is computed densely for small
    spaces and from the largest singular value of the matrix-free defect
    operator (Lanczos with a fixed start vector) beyond.
    """
    from scipy.sparse.linalg import LinearOperator, svds
    g = S.grid
    P = kernel_product(S, T)
    if max_quanta is not None:
        idx = quanta_indices(g, max_quanta)
        if T.kind == "factorized":
            C = epsilon_columns(T, idx)
        else:
            E = np.zeros((g.dim, idx.size), dtype=complex)
            E[idx, np.arange(idx.size)] = 1.0
            C = epsilon_apply_coords(T, E.reshape(g.dim_h, g.n_configs, -1)).reshape(g.dim, -1)
        SC = epsilon_apply_coords(S, C.reshape(g.dim_h, g.n_configs, -1)).reshape(g.dim, -1)[idx]
        PC = epsilon_columns(P, idx)[idx] if P.kind == "factorized" else None
        if PC is None:
            E = np.zeros((g.dim, idx.size), dtype=complex)
            E[idx, np.arange(idx.size)] = 1.0
            PC = epsilon_apply_coords(P, E.reshape(g.dim_h, g.n_configs, -1)).reshape(g.dim, -1)[idx]
        return float(np.linalg.norm(PC - SC, 2))
    if g.dim <= dense_max_dim:
        D = epsilon_matrix(P) - epsilon_matrix(S) @ epsilon_matrix(T)
        return float(np.linalg.norm(D, 2))
    Ps, Ss, Ts = involution(P), involution(S), involution(T)
    shp = (g.dim_h, g.n_configs, 1)

    def mv(v):
        v = np.asarray(v, dtype=complex).reshape(shp)
        return (epsilon_apply_coords(P, v) - epsilon_apply_coords(S, epsilon_apply_coords(T, v))).reshape(-1)

    def rmv(v):
        v = np.asarray(v, dtype=complex).reshape(shp)
        return (epsilon_apply_coords(Ps, v) - epsilon_apply_coords(Ts, epsilon_apply_coords(Ss, v))).reshape(-1)

    op = LinearOperator((g.dim, g.dim), matvec=mv, rmatvec=rmv, dtype=complex)
    v0 = np.ones(g.dim, dtype=complex) / np.sqrt(g.dim)
    s = svds(op, k=1, tol=tol, v0=v0, return_singular_vectors=False)
    return float(s[0])
