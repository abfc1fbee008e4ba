"""Pseudo-Fock space over triples of chains and the decomposable form of kernels.

Each cell of a triple ``(k-, k0, k+)`` of disjoint chains is in one local
state ``s``: ``0`` (no chain), ``1`` (in ``k-``), ``2 + e`` (in ``k0`` with
E-index ``e``) or ``d + 2`` (in ``k+``).  Vectors are functions of the triple
with values in ``H``; coordinates carry the weight ``dt**(|k-| + |k0| + |k+|)/2``.

The pseudo-scalar product pairs ``a(k-, k0, k+)`` with ``b(k+, k0, k-)``, i.e. it
is ``a^H G b`` in coordinates with the local flip ``G: 1 <-> d + 2``.
"""
import numpy as np

from . import _kernels
from .fock import FockVector, cells_of, check_dense_cap, quanta_indices
from .kernels import involution


class TripleChainVector:
    """Function on chain triples; ``data`` has shape ``(dim_h, (d + 3)**n)``."""

    def __init__(self, grid, data):
        data = np.asarray(data, dtype=complex)
        if data.shape != (grid.dim_h, local_dim(grid) ** grid.n_cells):
            raise ValueError(f"data shape {data.shape} does not match grid")
        self.grid = grid
        self.data = data

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.dim_h, local_dim(grid) ** grid.n_cells), complex))

    @classmethod
    def random(cls, grid, rng):
        shape = (grid.dim_h, local_dim(grid) ** grid.n_cells)
        return cls(grid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    @classmethod
    def from_coords(cls, grid, vec):
        vec = np.asarray(vec, dtype=complex).reshape(grid.dim_h, -1)
        return cls(grid, vec / triple_scale(grid)[None, :])

    @classmethod
    def from_components(cls, grid, comps):
        """Build from ``{(m_minus, m_zero, m_plus): array (dim_h,) + (d,)*|m_zero|}``."""
        v = cls.zeros(grid)
        p = local_dim(grid)
        d = grid.d_mult
        for (mm, m0, mp), val in comps.items():
            if mm & m0 or mm & mp or m0 & mp:
                raise ValueError("triple chains must be disjoint")
            base = sum((1 if (mm >> x) & 1 else d + 2 if (mp >> x) & 1 else 0) * p ** x
                       for x in range(grid.n_cells))
            zc = cells_of(m0)
            off = np.zeros(1, dtype=np.int64)
            for x in zc:
                off = (off[:, None] + ((2 + np.arange(d)) * p ** x)[None, :]).reshape(-1)
            v.data[:, base + off] = np.asarray(val, dtype=complex).reshape(grid.dim_h, -1)
        return v

    def coords(self):
        return (self.data * triple_scale(self.grid)[None, :]).reshape(-1)

    def __add__(self, other):
        return TripleChainVector(self.grid, self.data + other.data)

    def __sub__(self, other):
        return TripleChainVector(self.grid, self.data - other.data)

    def __mul__(self, c):
        return TripleChainVector(self.grid, self.data * c)

    __rmul__ = __mul__


def local_dim(grid):
    return grid.d_mult + 3


def triple_digits(grid):
    p = local_dim(grid)
    c = np.arange(p ** grid.n_cells)
    return np.stack([(c // p ** x) % p for x in range(grid.n_cells)], axis=0)


def triple_scale(grid):
    """``dt**(|chain|/2)`` per triple configuration."""
    occ = (triple_digits(grid) > 0).sum(axis=0)
    return grid.dt ** (0.5 * occ)


def flip_permutation(grid):
    """Configuration permutation of ``G`` (``k-`` and ``k+`` swapped)."""
    p = local_dim(grid)
    dig = triple_digits(grid)
    minus, plus = dig == 1, dig == p - 1
    dig = np.where(minus, p - 1, np.where(plus, 1, dig))
    return (dig * (p ** np.arange(grid.n_cells))[:, None]).sum(axis=0)


def _flip(grid, coords):
    v = np.asarray(coords).reshape(grid.dim_h, local_dim(grid) ** grid.n_cells, -1)
    return v[:, flip_permutation(grid)]


def pseudo_inner(a, b):
    """Indefinite form ``sum <a(k-, k0, k+) | b(k+, k0, k-)>`` with chain weights."""
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    g = a.grid
    return complex(np.vdot(a.coords(), _flip(g, b.coords()).reshape(-1)))


# ---------------------------------------------------------------------------
# the embedding J

def j_local(grid):
    """Local isometry of ``J`` on ``H (x) cell``: ``(dim_h*p, dim_h*q)``.

    An empty cell maps to ``|0> + sqrt(dt) |+>``, an occupied one to ``|0_e>``.
    """
    d, p, q, dh = grid.d_mult, local_dim(grid), grid.q, grid.dim_h
    j = np.zeros((p, q), dtype=complex)
    j[0, 0] = 1.0
    j[p - 1, 0] = np.sqrt(grid.dt)
    for e in range(d):
        j[2 + e, 1 + e] = 1.0
    return np.kron(np.eye(dh), j)


def _apply_local_chain(v, grid, ops, p_in, p_out):
    """Apply per-cell operators ``(dh*p_out, dh*p_in)`` to coordinates ``(dh, p_in**n, B)``."""
    dh, n = grid.dim_h, grid.n_cells
    b = v.shape[-1]
    for x in range(n):
        hi = p_in ** (n - 1 - x)
        lo = p_out ** x
        t = v.reshape(dh, hi, p_in, lo * b)
        op = np.asarray(ops[x]).reshape(dh, p_out, dh, p_in)
        t = np.einsum("asbt,bitj->aisj", op, t)
        v = t.reshape(dh, -1, b)
    return v


def embed_j_coords(grid, v):
    """``J`` on Fock coordinates ``(dim_h, Q, B)``."""
    jl = j_local(grid)
    return _apply_local_chain(np.asarray(v, dtype=complex), grid, [jl] * grid.n_cells, grid.q, local_dim(grid))


def adjoint_j_coords(grid, w):
    """``J* = J^H G`` on triple coordinates ``(dim_h, P, B)``."""
    jl = j_local(grid).conj().T
    return _apply_local_chain(_flip(grid, w), grid, [jl] * grid.n_cells, local_dim(grid), grid.q)


def embed_j(a):
    """``[Ja](k-, k0, k+) = delta(k- empty) a(k0)``."""
    g = a.grid
    w = embed_j_coords(g, a.vec().reshape(g.dim_h, g.n_configs, 1))
    return TripleChainVector.from_coords(g, w)


def adjoint_j(b):
    """``[J* b](k) = sum over k- of b(k-, k, empty)`` with chain weights."""
    g = b.grid
    v = adjoint_j_coords(g, b.coords().reshape(g.dim_h, -1, 1))
    return FockVector.from_vec(g, v)


# ---------------------------------------------------------------------------
# decomposable operators

def decomposable_local(grid, f):
    """Local operator of a factor ``f``: identity on the empty state, ``f`` on ``(-, 0, +)``."""
    dh, d, p = grid.dim_h, grid.d_mult, local_dim(grid)
    if f.dim_h == 1 and dh > 1:
        f = f.lift(dh)
    D = f.dense()
    # triangular order (-: h), (0: h, e), (+: h) -> local states (h, s)
    pos = np.concatenate([np.arange(dh) * p + 1,
                          (np.arange(dh)[:, None] * p + 2 + np.arange(d)[None, :]).reshape(-1),
                          np.arange(dh) * p + p - 1])
    op = np.zeros((dh * p, dh * p), dtype=complex)
    op[np.ix_(pos, pos)] = D
    op[np.arange(dh) * p, np.arange(dh) * p] = 1.0
    return op


def _table_maps(grid, tab):
    """Input/output triple configurations of a table over all free-cell states.

    Returns ``(o_idx, i_idx)`` of shapes ``(F, n_out_legs)`` and ``(F, n_in_legs)``
    with leg orders matching the block layout.
    """
    p, d = local_dim(grid), grid.d_mult
    free = cells_of(grid.full_mask & ~tab.support)
    base_in = sum((d + 2) * p ** x for x in cells_of(tab.kmp | tab.k0p))
    base_out = sum(p ** x for x in cells_of(tab.kmp | tab.km0))
    fs = np.zeros(1, dtype=np.int64)
    for x in free:
        fs = (fs[:, None] + (np.array([0, 1, d + 2]) * p ** x)[None, :]).reshape(-1)

    def legs(cells):
        off = np.zeros(1, dtype=np.int64)
        for x in cells:
            off = (off[:, None] + ((2 + np.arange(d)) * p ** x)[None, :]).reshape(-1)
        return off

    o = base_out + fs[:, None] + legs(tab.out_cells())[None, :]
    i = base_in + fs[:, None] + legs(tab.in_cells())[None, :]
    return o, i


def decomposable_apply_coords(T, w):
    """``T w`` for the decomposable operator of a kernel on triple coordinates ``(dim_h, P, B)``.

    Per table the input has ``k00, k-0`` in ``k0`` and ``k-+, k0+`` in ``k+``.
    The output has ``k-0, k-+`` in ``k-`` and ``k00, k0+`` in ``k0``.  Cells
    outside the table keep their state, with ``G-- = G++ = 1``.  The chain is
    unchanged, so no weights enter.
    """
    g = T.grid
    dh = g.dim_h
    w = np.asarray(w, dtype=complex).reshape(dh, local_dim(g) ** g.n_cells, -1)
    if T.kind == "factorized":
        ops = [decomposable_local(g, f) for f in T.cells]
        if T.order == "chrono":
            w = np.tensordot(T.X, w, axes=(1, 0))
            for x in range(g.n_cells):
                w = _one_cell(w, g, x, ops[x])
        else:
            for x in reversed(range(g.n_cells)):
                w = _one_cell(w, g, x, ops[x])
            w = np.tensordot(T.X, w, axes=(1, 0))
        return w
    out = np.zeros_like(w)
    for tab, B in T.blocks.items():
        o, i = _table_maps(g, tab)
        no, ni = o.shape[1], i.shape[1]
        Bt = B.reshape(dh, no, dh, ni)
        src = w[:, i]  # (dh, F, ni, b)
        res = np.einsum("aobi,bfij->afoj", Bt, src)
        out[:, o] += res
    return out


def _one_cell(w, grid, x, op):
    p, dh, n = local_dim(grid), grid.dim_h, grid.n_cells
    b = w.shape[-1]
    t = w.reshape(dh, p ** (n - 1 - x), p, p ** x * b)
    return _kernels.local_apply(t, np.asarray(op).reshape(dh, p, dh, p)).reshape(dh, -1, b)


def decomposable_apply(T, a):
    """Decomposable operator of ``T`` on a :class:`TripleChainVector`."""
    g = a.grid
    w = decomposable_apply_coords(T, a.coords().reshape(g.dim_h, -1, 1))
    return TripleChainVector.from_coords(g, w)


def _dense(grid, fn, dim_in):
    eye = np.eye(dim_in, dtype=complex).reshape(grid.dim_h, -1, dim_in)
    return fn(eye).reshape(-1, dim_in)


def spatial_epsilon_check(T):
    """Max-abs entry of ``eps(T) - J* T J`` (dense)."""
    from .kernels import epsilon_matrix
    g = T.grid
    check_dense_cap(g)
    E = epsilon_matrix(T)
    S = _dense(g, lambda v: adjoint_j_coords(g, decomposable_apply_coords(T, embed_j_coords(g, v))), g.dim)
    return float(np.max(np.abs(E - S)))


def pseudo_isometry_defect(grid, rng, trials=5):
    """``max |(Ja|Ja) - ||a||^2|`` over random vectors, relative to ``||a||^2``."""
    worst = 0.0
    for _ in range(trials):
        a = FockVector.random(grid, rng)
        ja = embed_j(a)
        worst = max(worst, abs(pseudo_inner(ja, ja) - a.norm() ** 2) / a.norm() ** 2)
    return worst


def projection_defect(T, max_quanta=2):
    """``||P_N (J* T* J J* T J - J* T* T J) P_N||`` computed matrix-free."""
    g = T.grid
    Ts = involution(T)
    idx = quanta_indices(g, max_quanta)
    cols = []
    for s in range(0, idx.size, 8):
        sel = idx[s:s + 8]
        e = np.zeros((g.dim, sel.size), dtype=complex)
        e[sel, np.arange(sel.size)] = 1.0
        v = e.reshape(g.dim_h, g.n_configs, -1)
        tj = decomposable_apply_coords(T, embed_j_coords(g, v))
        left = adjoint_j_coords(g, decomposable_apply_coords(Ts, embed_j_coords(g, adjoint_j_coords(g, tj))))
        right = adjoint_j_coords(g, decomposable_apply_coords(Ts, tj))
        cols.append((left - right).reshape(g.dim, -1)[idx])
    M = np.concatenate(cols, axis=1)
    return float(np.linalg.norm(M, 2))
