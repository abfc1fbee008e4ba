"""Independent brute-force implementations used as test oracles.

These work on sector values (functions on chains) and enumerate tables
directly, without the dense coordinate machinery of the package.
"""
import itertools

import numpy as np

from qsc.fock import FockVector, cells_of, popcount
from qsc.kernels import FourTable, ROLES


def all_tables(n):
    for roles in itertools.product((None,) + ROLES, repeat=n):
        yield FourTable.from_roles(dict(enumerate(roles)))


def _to_order(arr, cells, target, lead=1):
    """Transpose E-legs of ``arr`` (after ``lead`` axes) from ``cells`` order to ``target`` order."""
    perm = list(range(lead)) + [lead + cells.index(c) for c in target]
    return arr.transpose(perm + list(range(lead + len(cells), arr.ndim)))


def epsilon_apply_bruteforce(T, a):
    """Sum over tables of ``dt^{|km0|+|kmp|} T(k) a(k00 u km0)`` into sector ``k00 u k0p``."""
    g = T.grid
    dh, d = g.dim_h, g.d_mult
    out = FockVector.zeros(g)
    sp = T.to_sparse()
    res = {}
    for tab, B in sp.blocks.items():
        inn = sorted(cells_of(tab.k00) + cells_of(tab.km0))
        val = a.sector(tab.k00 | tab.km0)
        val = _to_order(val, inn, tab.in_cells()).reshape(-1)
        r = (B @ val).reshape((dh,) + (d,) * (popcount(tab.k00) + popcount(tab.k0p)))
        outc = sorted(tab.out_cells())
        r = _to_order(r, tab.out_cells(), outc)
        w = g.dt ** (popcount(tab.km0) + popcount(tab.kmp))
        m = tab.k00 | tab.k0p
        res[m] = res.get(m, 0) + w * r
    for m, v in res.items():
        out.data[:, _sector_configs(g, m)] = v.reshape(dh, -1)
    return out


def _sector_configs(g, mask):
    from qsc.fock import sector_configs
    return sector_configs(g, mask)


def dense_from_apply(apply, g):
    """Dense coordinate matrix of a map on FockVectors."""
    M = np.zeros((g.dim, g.dim), dtype=complex)
    for j in range(g.dim):
        e = np.zeros(g.dim, dtype=complex)
        e[j] = 1.0
        M[:, j] = apply(FockVector.from_vec(g, e)).vec()
    return M
