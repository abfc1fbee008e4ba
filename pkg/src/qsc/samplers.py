"""Seeded random instances: matrices, point matrices, kernels, generators."""
import numpy as np
from scipy.stats import unitary_group

from .kernels import FourTable, Kernel, ROLES, block_shape
from .triangular import TriangularPointMatrix


def complex_normal(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_hermitian(rng, n, scale=1.0):
    a = complex_normal(rng, n, n)
    return scale * 0.5 * (a + a.conj().T)


def random_unitary(rng, n):
    if n == 1:
        return np.exp(2j * np.pi * rng.random()).reshape(1, 1)
    return unitary_group.rvs(n, random_state=rng)


def random_point_matrix(rng, dim_h, d_mult, scale=1.0, unitary_diag=False):
    """Point matrix with identity corners and random off-corner blocks.

    With ``unitary_diag`` the ``00`` block is a random unitary, otherwise
    ``I + scale * G`` with complex Gaussian ``G``.
    """
    a, b = dim_h, dim_h * d_mult
    z0 = random_unitary(rng, b) if unitary_diag else np.eye(b) + scale * complex_normal(rng, b, b)
    return TriangularPointMatrix(dim_h, d_mult, mm=np.eye(a), pp=np.eye(a),
                                 m0=scale * complex_normal(rng, a, b), mp=scale * complex_normal(rng, a, a),
                                 z0=z0, zp=scale * complex_normal(rng, b, a))


def random_hp_factor(rng, dim_h, d_mult, scale=1.0):
    """Pseudounitary factor from random ``W`` unitary, ``L`` and Hermitian ``H``."""
    W = random_unitary(rng, dim_h * d_mult)
    L = scale * complex_normal(rng, dim_h * d_mult, dim_h)
    H = random_hermitian(rng, dim_h, scale)
    return TriangularPointMatrix.hp(W, L, H)


def random_pseudo_hermitian(rng, dim_h, d_mult, scale=1.0):
    """Table ``[[0, H-0, H-+], [0, H00, H0+], [0, 0, 0]]`` with ``H-0 = H0+^dag``."""
    b = dim_h * d_mult
    zp = scale * complex_normal(rng, b, dim_h)
    return TriangularPointMatrix(dim_h, d_mult, m0=zp.conj().T, mp=random_hermitian(rng, dim_h, scale),
                                 z0=random_hermitian(rng, b, scale), zp=zp)


def random_sparse_kernel(grid, rng, n_tables=6, scale=1.0):
    """Sparse kernel on ``n_tables`` random four-tables with Gaussian blocks."""
    blocks = {}
    choices = (None,) + ROLES
    for _ in range(n_tables):
        roles = {x: choices[rng.integers(len(choices))] for x in range(grid.n_cells)}
        tab = FourTable.from_roles(roles)
        blocks[tab] = scale * complex_normal(rng, *block_shape(grid, tab))
    return Kernel.sparse(grid, blocks)
