"""Discretized Fock space over chains of grid cells.

A chain is a subset of the ``n_cells`` grid cells and is stored as an integer
bitmask.  A Fock vector assigns an element of ``H (x) E^{(x)|S|}`` to every
chain ``S``.  Internally all sectors live in one dense array of shape
``(dim_h, (1 + d)**n)``: a configuration ``c = sum_x s_x (1+d)**x`` records for
every cell either ``s_x = 0`` (empty) or ``s_x = 1 + e`` (occupied, E-basis
index ``e``).  For ``d = 1`` the configuration index is the chain bitmask.

Two normalizations are used.  ``FockVector.data`` holds the sector values
``a(S)`` as functions on chains.  ``FockVector.vec()`` returns orthonormal
coordinates ``dt**(|S|/2) a(S)``, in which the chain-integral inner product is
the Euclidean one.  Every dense operator in this package is a matrix in those
coordinates, so operator adjoints are conjugate transposes.
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from . import _kernels

DEFAULT_CAP_BITS = 22


class CapExceededError(ValueError):
    """Dense representation would exceed the configured size cap."""


@dataclass(frozen=True)
class Grid:
    """Uniform partition of ``[0, horizon_T)`` into ``n_cells`` cells.

    Parameters
    ----------
    horizon_T : float
        Time horizon.
    n_cells : int
        Number of cells.
    d_mult : int
        Noise multiplicity, ``dim E``.
    dim_h : int
        Dimension of the initial space H.
    cap_bits : int
        Dense arrays are limited to ``dim_h * (1 + d_mult)**n_cells <= 2**cap_bits``.
    """

    horizon_T: float
    n_cells: int
    d_mult: int = 1
    dim_h: int = 1
    cap_bits: int = DEFAULT_CAP_BITS

    def __post_init__(self):
        if not (self.horizon_T > 0):
            raise ValueError("horizon_T must be positive")
        if self.n_cells < 1 or self.d_mult < 1 or self.dim_h < 1:
            raise ValueError("n_cells, d_mult and dim_h must be positive")
        if self.dim_h * (1 + self.d_mult) ** self.n_cells > 2 ** self.cap_bits:
            raise CapExceededError(
                f"dim_h*(1+d)^n = {self.dim_h}*{1 + self.d_mult}^{self.n_cells} exceeds 2^{self.cap_bits}")

    @property
    def dt(self):
        return self.horizon_T / self.n_cells

    @property
    def q(self):
        return 1 + self.d_mult

    @property
    def n_configs(self):
        return self.q ** self.n_cells

    @property
    def dim(self):
        return self.dim_h * self.n_configs

    @property
    def full_mask(self):
        return (1 << self.n_cells) - 1

    def cell_time(self, x):
        return x * self.dt

    def cells_before(self, t):
        """Bitmask of cells ``x`` with ``t(x) < t``."""
        if t is None:
            return self.full_mask
        k = int(math.ceil(t / self.dt - 1e-9))
        k = max(0, min(self.n_cells, k))
        return (1 << k) - 1

    def with_cells(self, n_cells):
        return Grid(self.horizon_T, n_cells, self.d_mult, self.dim_h, self.cap_bits)


# ---------------------------------------------------------------------------
# chain helpers

def cells_of(mask):
    """Ascending list of cells in a bitmask."""
    out = []
    x = 0
    while mask:
        if mask & 1:
            out.append(x)
        mask >>= 1
        x += 1
    return out


def mask_of(cells):
    m = 0
    for x in cells:
        m |= 1 << int(x)
    return m


def popcount(mask):
    return bin(mask).count("1")


def submasks(mask):
    """All submasks of ``mask``, including 0 and ``mask``."""
    s = mask
    while True:
        yield s
        if s == 0:
            return
        s = (s - 1) & mask


@lru_cache(maxsize=64)
def _occupancy(n, q):
    c = np.arange(q ** n, dtype=np.int64)
    occ = np.zeros_like(c)
    rest = c.copy()
    for x in range(n):
        occ |= (rest % q != 0).astype(np.int64) << x
        rest //= q
    occ.setflags(write=False)
    return occ


def occupancy(grid):
    """Chain bitmask of every configuration index."""
    return _occupancy(grid.n_cells, grid.q)


@lru_cache(maxsize=64)
def _config_pop(n, q):
    occ = _occupancy(n, q)
    pc = _kernels.popcount_table(n)[occ]
    pc.setflags(write=False)
    return pc


def config_popcount(grid):
    """Number of occupied cells of every configuration."""
    return _config_pop(grid.n_cells, grid.q)


@lru_cache(maxsize=4096)
def _leg_offsets(cells, q, d):
    k = len(cells)
    if k == 0:
        return np.zeros(1, dtype=np.int64)
    e = np.indices((d,) * k).reshape(k, -1)
    w = np.array([q ** c for c in cells], dtype=np.int64)
    off = ((e + 1) * w[:, None]).sum(axis=0)
    off.setflags(write=False)
    return off


def leg_offsets(grid, cells):
    """Config offsets ``sum_i (e_i + 1) q**cells[i]`` for all leg values.

    Leg values run in C order over ``cells`` taken in the given order, which
    is the order in which the legs of a block are laid out.
    """
    return _leg_offsets(tuple(int(c) for c in cells), grid.q, grid.d_mult)


@lru_cache(maxsize=4096)
def _empty_configs(n, q, mask):
    occ = _occupancy(n, q)
    out = np.nonzero((occ & mask) == 0)[0].astype(np.int64)
    out.setflags(write=False)
    return out


def empty_configs(grid, mask):
    """Configurations in which every cell of ``mask`` is empty."""
    return _empty_configs(grid.n_cells, grid.q, mask)


def sector_configs(grid, mask):
    """Configurations of the sector ``mask`` in ascending-leg order."""
    return leg_offsets(grid, cells_of(mask))


def coordinate_scale(grid):
    """``dt**(|S(c)|/2)`` for every configuration."""
    return np.sqrt(grid.dt) ** config_popcount(grid)


def xi_weights(grid, xi):
    """``xi**(|S(c)|/2)`` for every configuration."""
    return np.sqrt(float(xi)) ** config_popcount(grid)


# ---------------------------------------------------------------------------
# Fock vectors

class FockVector:
    """Square-integrable function on chains with values in ``H (x) E^(x)|S|``.

    ``data`` has shape ``(dim_h, q**n) + (d,) * n_legs``; the optional trailing
    legs are free E-legs (e.g. created by point derivatives).
    """

    def __init__(self, grid, data, max_quanta=None):
        data = np.asarray(data, dtype=np.complex128)
        if data.shape[:2] != (grid.dim_h, grid.n_configs):
            raise ValueError(f"data shape {data.shape} does not match grid")
        if any(s != grid.d_mult for s in data.shape[2:]):
            raise ValueError("extra legs must have dimension d_mult")
        self.grid = grid
        self.max_quanta = max_quanta
        if max_quanta is not None:
            data = data.copy()
            data[:, config_popcount(grid) > max_quanta] = 0
        self.data = data

    @property
    def n_legs(self):
        return self.data.ndim - 2

    @classmethod
    def zeros(cls, grid, n_legs=0):
        return cls(grid, np.zeros((grid.dim_h, grid.n_configs) + (grid.d_mult,) * n_legs, complex))

    @classmethod
    def vacuum(cls, grid, h=None):
        v = cls.zeros(grid)
        v.data[:, 0] = np.eye(grid.dim_h)[0] if h is None else np.asarray(h)
        return v

    @classmethod
    def from_sectors(cls, grid, sectors, max_quanta=None):
        """Build from ``{mask: array of shape (dim_h,) + (d,)*|mask|}``."""
        v = cls.zeros(grid)
        for mask, val in sectors.items():
            val = np.asarray(val, dtype=complex).reshape(grid.dim_h, -1)
            v.data[:, sector_configs(grid, mask)] = val
        return cls(grid, v.data, max_quanta)

    @classmethod
    def from_vec(cls, grid, vec, n_legs=0):
        """Inverse of :meth:`vec`."""
        shape = (grid.dim_h, grid.n_configs) + (grid.d_mult,) * n_legs
        vec = np.asarray(vec, dtype=complex).reshape(shape)
        scale = coordinate_scale(grid).reshape((1, -1) + (1,) * n_legs)
        return cls(grid, vec / scale)

    @classmethod
    def random(cls, grid, rng, max_quanta=None, n_legs=0):
        shape = (grid.dim_h, grid.n_configs) + (grid.d_mult,) * n_legs
        data = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return cls(grid, data, max_quanta)

    def sector(self, mask):
        """Value on the chain ``mask`` as an array ``(dim_h,) + (d,)*|mask| + legs``."""
        k = popcount(mask)
        d = self.grid.d_mult
        block = self.data[:, sector_configs(self.grid, mask)]
        return block.reshape((self.grid.dim_h,) + (d,) * k + self.data.shape[2:])

    def vec(self):
        """Orthonormal coordinates as a flat array."""
        scale = coordinate_scale(self.grid).reshape((1, -1) + (1,) * self.n_legs)
        return (self.data * scale).reshape(-1)

    def inner(self, other):
        """Chain-integral inner product, antilinear in ``self``."""
        return complex(np.vdot(self.vec(), other.vec()))

    def norm(self):
        return float(np.linalg.norm(self.vec()))

    def sector_sq_norms(self):
        """``||a(S)||^2`` indexed by chain bitmask (unscaled by ``dt``)."""
        g = self.grid
        w = np.abs(self.data) ** 2
        w = w.reshape(g.dim_h, g.n_configs, -1).sum(axis=(0, 2))
        return np.bincount(occupancy(g), weights=w, minlength=1 << g.n_cells)

    def truncate(self, max_quanta):
        return FockVector(self.grid, self.data, max_quanta)

    def __add__(self, other):
        return FockVector(self.grid, self.data + other.data)

    def __sub__(self, other):
        return FockVector(self.grid, self.data - other.data)

    def __mul__(self, c):
        return FockVector(self.grid, self.data * c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"FockVector(n={self.grid.n_cells}, d={self.grid.d_mult}, dim_h={self.grid.dim_h}, legs={self.n_legs})"


def chain_integral(f, grid, horizon=None):
    """``sum_{S subset horizon} f(S) dt**|S|``.

    ``f`` is a callable on bitmasks or an array indexed by bitmask; ``horizon``
    is a bitmask (default: all cells).
    """
    horizon = grid.full_mask if horizon is None else horizon
    masks = np.fromiter(submasks(horizon), dtype=np.int64)
    if callable(f):
        vals = np.array([f(int(m)) for m in masks], dtype=complex)
    else:
        vals = np.asarray(f, dtype=complex)[masks]
    pc = _kernels.popcount_table(grid.n_cells)[masks]
    return complex(np.sum(vals * grid.dt ** pc))


def point_derivative(a, x):
    """Sector shift ``[a'(x)](S) = a(S | {x})`` for ``x`` not in ``S``.

    The split-off E-leg is appended as the last free leg; sectors containing
    ``x`` are zero.
    """
    g = a.grid
    d = g.d_mult
    base = empty_configs(g, 1 << x)
    out = np.zeros(a.data.shape + (d,), dtype=complex)
    for e in range(d):
        out[..., e][:, base] = a.data[:, base + (e + 1) * g.q ** x]
    return FockVector(g, out)


def xi_norm(a, xi):
    """``||a||(xi) = (sum_S xi^|S| dt^|S| ||a(S)||^2)**(1/2)``."""
    g = a.grid
    w = np.abs(a.data) ** 2
    w = w.reshape(g.dim_h, g.n_configs, -1).sum(axis=(0, 2))
    pc = config_popcount(g)
    return math.sqrt(float(np.sum(w * (float(xi) * g.dt) ** pc)))


def exponential_vector(grid, k, h=None):
    """Product vector with sector values ``h (x) k(x_1) (x) ... (x) k(x_m)``.

    ``k`` has shape ``(n_cells, d)`` or is a callable returning a length-``d``
    vector per cell.
    """
    if callable(k):
        k = np.array([np.atleast_1d(k(x)) for x in range(grid.n_cells)])
    k = np.asarray(k, dtype=complex).reshape(grid.n_cells, grid.d_mult)
    prod = np.ones(1, dtype=complex)
    for x in range(grid.n_cells):
        prod = np.kron(np.concatenate(([1.0], k[x])), prod)
    h = np.eye(grid.dim_h)[0] if h is None else np.asarray(h, dtype=complex)
    return FockVector(grid, np.outer(h, prod))


def derivative_isometry_sum(a, xi, eta):
    """Brute-force left side of the multiple point-derivative isometry.

    Returns ``sum_{S, R disjoint} xi^|S| eta^|R| dt^{|S|+|R|} ||a(S|R)||^2``,
    enumerating all disjoint pairs of chains.
    """
    return _kernels.disjoint_pair_sum(a.sector_sq_norms(), xi, eta, a.grid.dt)


# ---------------------------------------------------------------------------
# dense operator helpers (orthonormal coordinates)

def as_tensor(v, grid):
    """View a batch of coordinate vectors ``(dim, B)`` as ``(dim_h, Q, B)``."""
    v = np.asarray(v)
    return v.reshape(grid.dim_h, grid.n_configs, -1)


def apply_cell_op(v, grid, x, op):
    """Apply a local operator on ``H (x) cell x`` to coordinate vectors.

    ``op`` is ``(dim_h*q, dim_h*q)`` with row index ``h*q + s``; ``v`` has
    shape ``(dim_h, Q, B)``.
    """
    dh, q = grid.dim_h, grid.q
    b = v.shape[-1]
    hi = q ** (grid.n_cells - 1 - x)
    lo = q ** x
    r = _kernels.local_apply(v.reshape(dh, hi, q, lo * b), np.asarray(op).reshape(dh, q, dh, q))
    return r.reshape(dh, grid.n_configs, b)


def apply_h_op(v, grid, X):
    """Apply ``X (x) 1`` to coordinate vectors of shape ``(dim_h, Q, B)``."""
    return np.tensordot(np.asarray(X), v, axes=(1, 0))


def h_op_matrix(grid, X):
    """Dense ``X (x) 1`` on the full space."""
    return np.kron(np.asarray(X, dtype=complex), np.eye(grid.n_configs))


def cell_op_matrix(grid, x, op):
    """Dense matrix of a local operator on ``H (x) cell x``."""
    eye = np.eye(grid.dim).reshape(grid.dim_h, grid.n_configs, grid.dim)
    return apply_cell_op(eye, grid, x, op).reshape(grid.dim, grid.dim)


def check_dense_cap(grid):
    """Raise unless a dense ``dim x dim`` matrix fits (``dim <= 2**min(cap_bits, 13)``)."""
    if grid.dim > 2 ** min(grid.cap_bits, 13):
        raise CapExceededError(f"dense matrix of dimension {grid.dim} exceeds the cap")


def quanta_indices(grid, max_quanta):
    """Flat coordinate indices of configurations with at most ``max_quanta`` cells."""
    cfg = np.nonzero(config_popcount(grid) <= max_quanta)[0]
    return (np.arange(grid.dim_h)[:, None] * grid.n_configs + cfg[None, :]).reshape(-1)


def config_digits(grid, c):
    """Cell states ``s_x`` of a configuration index."""
    q = grid.q
    return [(c // q ** x) % q for x in range(grid.n_cells)]


@lru_cache(maxsize=32)
def _digit_reversal(n, q):
    c = np.arange(q ** n)
    r = np.zeros_like(c)
    for x in range(n):
        r = r * q + (c // q ** x) % q
    return r


def basis_sweep(grid, config, init, ops, ascending=True):
    """Apply one local operator per cell to ``init (x) |config>``.

    ``ops[x]`` acts on ``(bond, cell x)`` with shape ``(nb*q, nb*q)``.  Cells
    not yet visited keep their basis state, so the work grows with the number
    of visited cells only.  Returns the ``(nb, Q)`` result.
    """
    q = grid.q
    init = np.asarray(init, dtype=complex).reshape(-1)
    nb = init.size
    digits = config_digits(grid, config)
    S = init.reshape(nb, 1)
    cells = range(grid.n_cells) if ascending else reversed(range(grid.n_cells))
    for x in cells:
        col = np.asarray(ops[x]).reshape(nb, q, nb, q)[:, :, :, digits[x]].reshape(nb * q, nb)
        # the visited cell becomes the most significant digit
        S = (col @ S).reshape(nb, -1)
    if not ascending:
        S = S[:, _digit_reversal(grid.n_cells, q)]
    return S


def truncated_columns(op, grid, max_quanta=2, batch=8):
    """Columns ``op P_N`` of a callable on coordinate batches, as a ``(dim, n)`` array."""
    idx = quanta_indices(grid, max_quanta)
    out = np.empty((grid.dim, idx.size), dtype=complex)
    for start in range(0, idx.size, batch):
        sel = idx[start:start + batch]
        e = np.zeros((grid.dim, sel.size), dtype=complex)
        e[sel, np.arange(sel.size)] = 1.0
        r = op(e.reshape(grid.dim_h, grid.n_configs, sel.size))
        out[:, start:start + sel.size] = r.reshape(grid.dim, sel.size)
    return out


def truncated_norm(op, grid, max_quanta=2, batch=8):
    """Spectral norm of ``P_N op P_N`` with ``P_N`` onto at most ``max_quanta`` quanta.

    ``op`` is a dense matrix or a callable mapping coordinate batches of shape
    ``(dim_h, Q, B)`` to the same shape.
    """
    idx = quanta_indices(grid, max_quanta)
    if not callable(op):
        sub = np.asarray(op)[np.ix_(idx, idx)]
    else:
        sub = truncated_columns(op, grid, max_quanta, batch)[idx]
    return float(np.linalg.norm(sub, 2)) if sub.size else 0.0


def truncated_gram_defect(op, grid, max_quanta=2, batch=8):
    """``||P_N (A^dag A - I) P_N||`` from the columns ``A P_N`` of a callable ``A``."""
    W = truncated_columns(op, grid, max_quanta, batch)
    G = W.conj().T @ W - np.eye(W.shape[1])
    return float(np.linalg.norm(G, 2)) if G.size else 0.0


def relative_norm(M, grid, xi_in, xi_out, extra_out=0, extra_in=0):
    """``||W(xi_out) M W(xi_in)^{-1}||`` with ``W(xi) = xi^{|S|/2}`` on chains.

    This is the operator norm from ``||.||(xi_in)`` to ``||.||(xi_out)``.
    """
    d = grid.d_mult
    wo = np.kron(np.ones(grid.dim_h), np.repeat(xi_weights(grid, xi_out), d ** extra_out))
    wi = np.kron(np.ones(grid.dim_h), np.repeat(xi_weights(grid, xi_in), d ** extra_in))
    return float(np.linalg.norm(wo[:, None] * np.asarray(M) / wi[None, :], 2))
