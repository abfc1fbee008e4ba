"""Single and multiple QS integrals of dense integrands.

All operators are dense matrices in orthonormal coordinates (see
:mod:`qsc.fock`).  An operator carrying extra E-legs lays them out as minor
indices after the configuration index, e.g. ``D00(x)`` acts on vectors indexed
by ``(h, c, e)``.  For a cell ``x`` the split-off leg is read from configurations
with ``x`` occupied; the remaining configuration has ``x`` empty.
"""
import math

import numpy as np

from .fock import cells_of, empty_configs, leg_offsets, popcount, relative_norm
from .kernels import FourTable, ROLES, epsilon_matrix

KINDS = ("gauge", "creation", "annihilation", "time")
_KIND_ROLE = {"gauge": "00", "creation": "0+", "annihilation": "-0", "time": "-+"}


class IntegrandFamily:
    """Per-cell dense integrands ``D^mu_nu(x)``; ``None`` marks a zero entry.

    Shapes: ``gauge`` ``(dim*d, dim*d)``, ``creation`` ``(dim*d, dim)``,
    ``annihilation`` ``(dim, dim*d)``, ``time`` ``(dim, dim)``.
    """

    def __init__(self, grid, gauge=None, creation=None, annihilation=None, time=None):
        self.grid = grid
        n = grid.n_cells
        dim, d = grid.dim, grid.d_mult
        shapes = {"gauge": (dim * d, dim * d), "creation": (dim * d, dim),
                  "annihilation": (dim, dim * d), "time": (dim, dim)}
        self.parts = {}
        for k, v in zip(KINDS, (gauge, creation, annihilation, time)):
            if v is None:
                v = [None] * n
            elif not isinstance(v, (list, tuple)):
                v = [v] * n
            if len(v) != n:
                raise ValueError(f"{k}: one entry per cell is required")
            out = []
            for x, m in enumerate(v):
                if m is not None:
                    m = np.asarray(m, dtype=complex)
                    if m.shape != shapes[k]:
                        raise ValueError(f"{k}[{x}] has shape {m.shape}, expected {shapes[k]}")
                out.append(m)
            self.parts[k] = out

    def __getitem__(self, kind):
        return self.parts[kind]

    def only(self, x):
        """Family restricted to cell ``x``."""
        n = self.grid.n_cells
        kw = {k: [self.parts[k][y] if y == x else None for y in range(n)] for k in KINDS}
        return IntegrandFamily(self.grid, **kw)


def _split_index(grid, x):
    """Configurations with ``x`` empty and their occupied partners per leg value."""
    base = empty_configs(grid, 1 << x)
    d = grid.d_mult
    tgt = base[:, None] + (np.arange(d)[None, :] + 1) * grid.q ** x
    return base, tgt


def single_integral_apply(kind, D, v, grid, t=None):
    """Apply the single QS integral of kind ``kind`` to coordinate vectors.

    ``v`` has shape ``(dim_h, Q, B)``; ``D`` is a per-cell list of dense
    integrands (``None`` = 0).  Cells with ``t(x) < t`` contribute.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown integral kind {kind!r}")
    v = np.asarray(v, dtype=complex)
    dh, Q, b = v.shape
    d = grid.d_mult
    dim = grid.dim
    sq = math.sqrt(grid.dt)
    out = np.zeros_like(v)
    horizon = grid.cells_before(t)
    for x in cells_of(horizon):
        Dx = D[x]
        if Dx is None:
            continue
        base, tgt = _split_index(grid, x)
        if kind == "time":
            out += grid.dt * (Dx @ v.reshape(dim, b)).reshape(dh, Q, b)
        elif kind == "gauge":
            w = np.zeros((dh, Q, d, b), dtype=complex)
            w[:, base] = v[:, tgt]
            y = (Dx @ w.reshape(dim * d, b)).reshape(dh, Q, d, b)
            out[:, tgt] += y[:, base]
        elif kind == "creation":
            w = np.zeros_like(v)
            w[:, base] = v[:, base]
            y = (Dx @ w.reshape(dim, b)).reshape(dh, Q, d, b)
            out[:, tgt] += sq * y[:, base]
        else:
            w = np.zeros((dh, Q, d, b), dtype=complex)
            w[:, base] = v[:, tgt]
            y = (Dx @ w.reshape(dim * d, b)).reshape(dh, Q, b)
            out[:, base] += sq * y[:, base]
    return out


def single_integral(kind, D, grid, t=None):
    """Dense matrix of one of the four single QS integrals."""
    eye = np.eye(grid.dim, dtype=complex).reshape(grid.dim_h, grid.n_configs, grid.dim)
    return single_integral_apply(kind, D, eye, grid, t).reshape(grid.dim, grid.dim)


def qs_integral(family, t=None):
    """``Lambda^t(D)``: sum of the four single integrals of a family."""
    g = family.grid
    return sum(single_integral(k, family[k], g, t) for k in KINDS)


def qs_integral_apply(family, v, t=None):
    g = family.grid
    return sum(single_integral_apply(k, family[k], v, g, t) for k in KINDS)


# ---------------------------------------------------------------------------
# multiple integrals

def integrand_shape(grid, tab, extra_out=0, extra_in=0):
    d = grid.d_mult
    return (grid.dim * d ** (popcount(tab.k00) + popcount(tab.k0p) + extra_out),
            grid.dim * d ** (popcount(tab.km0) + popcount(tab.k00) + extra_in))


def multiple_integral(B, grid, t=None, extra_out=0, extra_in=0):
    """Multiple QS integral ``Lambda_[0,t)(B)`` of a table-indexed integrand.

    ``B`` maps four-tables to dense operators.  ``B(theta)`` receives the
    legs ``(theta-0 asc, theta00 asc)`` read off the input and emits legs
    ``(theta00 asc, theta0+ asc)`` into the output; annihilated cells are absent
    from the output and created cells absent from the input.  Optional
    passive legs (``extra_out``/``extra_in``) stay as minor indices.
    """
    d = grid.d_mult
    dh, Q = grid.dim_h, grid.n_configs
    po, pi = d ** extra_out, d ** extra_in
    M = np.zeros((grid.dim * po, grid.dim * pi), dtype=complex)
    horizon = grid.cells_before(t)
    for tab, Bt in B.items():
        tab = FourTable(*tab)
        if tab.support & ~horizon:
            raise ValueError(f"table {tab} is not supported in cells before t")
        Bt = np.asarray(Bt, dtype=complex)
        shp = integrand_shape(grid, tab, extra_out, extra_in)
        if Bt.shape != shp:
            raise ValueError(f"integrand for {tab} has shape {Bt.shape}, expected {shp}")
        oc, ic = tab.out_cells(), tab.in_cells()
        off_o, off_i = leg_offsets(grid, oc), leg_offsets(grid, ic)
        c_o = empty_configs(grid, tab.out_mask | tab.km0)
        c_i = empty_configs(grid, tab.in_mask | tab.k0p)
        scale = grid.dt ** (popcount(tab.kmp) + 0.5 * (popcount(tab.km0) + popcount(tab.k0p)))
        B8 = Bt.reshape(dh, Q, off_o.size, po, dh, Q, off_i.size, pi)
        sub = B8[:, c_o][:, :, :, :, :, c_i]
        rows = ((np.arange(dh)[:, None, None, None] * Q + (c_o[:, None] + off_o[None, :])[None, :, :, None]) * po
                + np.arange(po)[None, None, None, :]).reshape(-1)
        cols = ((np.arange(dh)[:, None, None, None] * Q + (c_i[:, None] + off_i[None, :])[None, :, :, None]) * pi
                + np.arange(pi)[None, None, None, :]).reshape(-1)
        M[np.ix_(rows, cols)] += scale * sub.reshape(rows.size, cols.size)
    return M


def star_integrand(B, grid, extra_out=0, extra_in=0):
    """``B*(theta) = B(theta*)^dag`` with legs reordered to the convention."""
    d = grid.d_mult
    dh, Q = grid.dim_h, grid.n_configs
    out = {}
    for tab, Bt in B.items():
        tab = FourTable(*tab)
        st = tab.star()
        # rows of Bt^dag carry legs (km0, k00) of tab = (k0p*, k00*) of st
        A = np.asarray(Bt).conj().T
        if d > 1:
            fo, fi = tab.in_cells(), tab.out_cells()
            to, ti = st.out_cells(), st.in_cells()
            no, ni = len(fo), len(fi)
            A6 = A.reshape((dh, Q) + (d,) * no + (d ** extra_in, dh, Q) + (d,) * ni + (d ** extra_out,))
            perm = ([0, 1] + [2 + fo.index(c) for c in to] + [2 + no]
                    + [3 + no, 4 + no] + [5 + no + fi.index(c) for c in ti] + [5 + no + ni])
            A = A6.transpose(perm).reshape(A.shape)
        out[st] = A
    return out


def qs_derivatives(B, grid, x):
    """QS derivatives ``D^mu_nu(x) = Lambda_[0,t(x))(B(x^mu_nu (+) .))``.

    Returns a dict keyed by role with dense operators shaped like an
    :class:`IntegrandFamily` entry (the cell-``x`` legs become the last legs).
    """
    d = grid.d_mult
    dh, Q = grid.dim_h, grid.n_configs
    bx = 1 << x
    past = (1 << x) - 1
    shifted = {r: {} for r in ROLES}
    for tab, Bt in B.items():
        tab = FourTable(*tab)
        r = tab.role_of(x)
        if r is None or (tab.support & ~bx) & ~past:
            continue
        field = {"00": "k00", "0+": "k0p", "-0": "km0", "-+": "kmp"}[r]
        rest = tab._replace(**{field: getattr(tab, field) & ~bx})
        A = np.asarray(Bt, dtype=complex)
        if d > 1 and r in ("00", "-0"):
            no = len(tab.out_cells())
            ni = len(tab.in_cells())
            A8 = A.reshape((dh, Q) + (d,) * no + (dh, Q) + (d,) * ni)
            perm_o = list(range(2 + no))
            if r == "00":
                k = tab.out_cells().index(x)
                perm_o = [0, 1] + [2 + i for i in range(no) if i != k] + [2 + k]
            base_i = 2 + no
            k = tab.in_cells().index(x)
            perm_i = [base_i, base_i + 1] + [base_i + 2 + i for i in range(ni) if i != k] + [base_i + 2 + k]
            A = A8.transpose(perm_o + perm_i).reshape(A.shape)
        shifted[r][rest] = A
    out = {}
    t_x = grid.cell_time(x)
    for r in ROLES:
        eo = 1 if r in ("00", "0+") else 0
        ei = 1 if r in ("00", "-0") else 0
        out[r] = multiple_integral(shifted[r], grid, t_x, eo, ei)
    return out


def reconstruct(B, grid, t=None):
    """``B(empty) + sum_x Lambda(D(x))`` from the QS derivatives of ``B``."""
    M = np.zeros((grid.dim, grid.dim), dtype=complex)
    e = FourTable()
    if e in B:
        M += np.asarray(B[e])
    kinds = dict(zip(ROLES, KINDS))
    for x in cells_of(grid.cells_before(t)):
        D = qs_derivatives(B, grid, x)
        for r, kind in kinds.items():
            fam = [None] * grid.n_cells
            fam[x] = D[r]
            M += single_integral(kind, fam, grid, t)
    return M


def integrand_norm(B, grid, eta_up, eta_down, t=None):
    """Discrete integrability norm of a table-indexed integrand.

    ``eta_up = (e-, e0, e+)`` (upper indices), ``eta_down = (e_-, e_0, e_+)``.
    With ``||B(theta)||`` the operator norm from ``||.||(e+)`` to ``||.||(e_-)``:

        sum_{theta-+} dt^|theta-+| [ sum_{theta-0, theta0+} dt^(|theta-0| + |theta0+|)
            e_+^|theta0+| / (e-)^|theta-0| max_{theta00} (e_0/e0)^|theta00| ||B(theta)||^2 ]^(1/2)
    """
    em, e0, ep = (float(v) for v in eta_up)
    dm, d0, dp = (float(v) for v in eta_down)
    if min(em, e0, ep, dm, d0, dp) <= 0:
        raise ValueError("all weights must be positive")
    horizon = grid.cells_before(t)
    dt = grid.dt
    groups = {}
    for tab, Bt in B.items():
        tab = FourTable(*tab)
        if tab.support & ~horizon:
            continue
        no = popcount(tab.k00) + popcount(tab.k0p)
        ni = popcount(tab.km0) + popcount(tab.k00)
        nb = relative_norm(Bt, grid, ep, dm, extra_out=no, extra_in=ni)
        if nb == 0:
            continue
        val = (d0 / e0) ** popcount(tab.k00) * nb * nb
        key = (tab.kmp, tab.km0, tab.k0p)
        groups[key] = max(groups.get(key, 0.0), val)
    outer = {}
    for (kmp, km0, k0p), val in groups.items():
        w = dt ** (popcount(km0) + popcount(k0p)) * dp ** popcount(k0p) / em ** popcount(km0)
        outer[kmp] = outer.get(kmp, 0.0) + w * val
    return float(sum(dt ** popcount(kmp) * math.sqrt(s) for kmp, s in outer.items()))


# ---------------------------------------------------------------------------
# kernel-valued integrands (d = 1)

def kernel_integrand(Lfam):
    """``B(theta) = eps(L(theta))`` for a table-indexed family of kernels."""
    return {FourTable(*k): epsilon_matrix(L) for k, L in Lfam.items()}


def nest_kernel(Lfam, grid, t=None):
    """``N_[0,t)(L)(k) = sum_{theta subset k^t} L(theta, k - theta)`` (``d = 1``).

    Each ``L(theta)`` must be supported on tables disjoint from ``theta``.
    """
    from .kernels import Kernel
    if grid.d_mult != 1:
        raise NotImplementedError("kernel-valued integrands are supported for d = 1")
    horizon = grid.cells_before(t)
    out = {}
    for th, L in Lfam.items():
        th = FourTable(*th)
        if th.support & ~horizon:
            raise ValueError(f"table {th} is not supported in cells before t")
        for k, blk in L.to_sparse().blocks.items():
            if k.support & th.support:
                raise ValueError("L(theta) must vanish on tables meeting theta")
            full = FourTable(*(a | b for a, b in zip(th, k)))
            out[full] = out[full] + blk if full in out else blk
    return Kernel.sparse(grid, out)


# ---------------------------------------------------------------------------
# adapted integrals

def adaptedness_test(W, grid, t, tol=1e-10):
    """True iff ``W`` acts as the identity on every cell with ``t(x) >= t``.

    The check is a commutant test: ``W`` must commute with all matrix
    units of every future cell, which generate that cell's full algebra.
    """
    W = np.asarray(W, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(W)))) if W.size else 1.0
    q = grid.q
    future = grid.full_mask & ~grid.cells_before(t)
    dh, Q = grid.dim_h, grid.n_configs
    occ_digits = np.arange(Q)
    for x in cells_of(future):
        s = (occ_digits // q ** x) % q
        for a in range(q):
            for b in range(q):
                # E_ab on cell x: maps configs with s_x=b to s_x=a
                src = np.nonzero(s == b)[0]
                dst = src + (a - b) * q ** x
                Wt = W.reshape(dh, Q, dh, Q)
                # (W E)[:, :, :, src] = W[:, :, :, dst]; (E W)[:, dst] = W[:, src]
                we = np.zeros_like(Wt)
                we[:, :, :, src] = Wt[:, :, :, dst]
                ew = np.zeros_like(Wt)
                ew[:, dst] = Wt[:, src]
                if np.max(np.abs(we - ew)) > tol * scale:
                    return False
    return True


def pointwise_product(family, steps):
    """``(B (.) U)(x) = B(x)(U(t(x)) (x) 1_E)`` for a step process ``U``."""
    g = family.grid
    d = g.d_mult

    def u_at(x):
        tx = g.cell_time(x)
        cur = None
        for ti, Ui in steps:
            if ti <= tx + 1e-12 * g.dt:
                cur = Ui
        if cur is None:
            raise ValueError("step process undefined at cell time")
        return np.asarray(cur, dtype=complex)

    kw = {}
    for k in KINDS:
        vals = []
        for x, Dx in enumerate(family[k]):
            if Dx is None:
                vals.append(None)
                continue
            U = u_at(x)
            if k in ("gauge", "annihilation"):
                # the split-off leg is the minor index
                U = np.kron(U, np.eye(d))
            vals.append(Dx @ U)
        kw[k] = vals
    return IntegrandFamily(g, **kw)


def ito_sum_integral(family, steps, t=None, tol=1e-10):
    """``sum_i (Lambda^{t_{i+1}} - Lambda^{t_i})(B) U^{t_i}`` for a step process.

    ``steps`` is a list of ``(t_i, U_i)`` with increasing ``t_i`` starting at 0.
    """
    g = family.grid
    t = g.horizon_T if t is None else t
    times = [s[0] for s in steps]
    if not times or abs(times[0]) > 1e-12 or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("step times must start at 0 and increase")
    total = np.zeros((g.dim, g.dim), dtype=complex)
    for i, (ti, Ui) in enumerate(steps):
        if ti >= t:
            break
        if not adaptedness_test(Ui, g, ti, tol):
            raise ValueError(f"adaptedness violated for the step starting at t={ti}")
        tn = min(times[i + 1], t) if i + 1 < len(steps) else t
        inc = qs_integral(family, tn) - qs_integral(family, ti)
        total += inc @ np.asarray(Ui)
    return total
