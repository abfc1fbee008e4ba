"""Upper-triangular point matrices over ``H`` and ``H (x) E``.

A point matrix has blocks indexed by ``mu, nu in {-, 0, +}`` with ``mu <= nu``:

    [[mm, m0, mp],
     [ 0, z0, zp],
     [ 0,  0, pp]]

acting on ``H (+) (H (x) E) (+) H``.  ``H (x) E`` uses the index ``h*d + e``.
"""
import numpy as np
import scipy.linalg

_BLOCKS = ("mm", "m0", "mp", "z0", "zp", "pp")


class TriangularPointMatrix:
    """Triangular block matrix with the pseudo-conjugation of the flip metric.

    Parameters
    ----------
    dim_h, d_mult : int
        Dimensions of H and E.
    mm, m0, mp, z0, zp, pp : array_like, optional
        Blocks; missing blocks are zero.
    """

    __slots__ = ("dim_h", "d_mult") + _BLOCKS

    def __init__(self, dim_h, d_mult, mm=None, m0=None, mp=None, z0=None, zp=None, pp=None):
        self.dim_h = int(dim_h)
        self.d_mult = int(d_mult)
        a, b = self.dim_h, self.dim_h * self.d_mult
        shapes = {"mm": (a, a), "m0": (a, b), "mp": (a, a), "z0": (b, b), "zp": (b, a), "pp": (a, a)}
        vals = {"mm": mm, "m0": m0, "mp": mp, "z0": z0, "zp": zp, "pp": pp}
        for k in _BLOCKS:
            v = vals[k]
            arr = np.zeros(shapes[k], dtype=complex) if v is None else np.array(v, dtype=complex)
            if arr.shape != shapes[k]:
                arr = arr.reshape(shapes[k])
            setattr(self, k, arr)

    # -- constructors -----------------------------------------------------
    @classmethod
    def identity(cls, dim_h, d_mult):
        a, b = dim_h, dim_h * d_mult
        return cls(dim_h, d_mult, mm=np.eye(a), z0=np.eye(b), pp=np.eye(a))

    @classmethod
    def zero(cls, dim_h, d_mult):
        return cls(dim_h, d_mult)

    @classmethod
    def from_dense(cls, M, dim_h, d_mult):
        M = np.asarray(M, dtype=complex)
        a, b = dim_h, dim_h * d_mult
        i0, i1 = a, a + b
        return cls(dim_h, d_mult, mm=M[:i0, :i0], m0=M[:i0, i0:i1], mp=M[:i0, i1:],
                   z0=M[i0:i1, i0:i1], zp=M[i0:i1, i1:], pp=M[i1:, i1:])

    @classmethod
    def generator(cls, dim_h, d_mult, L00=None, L0p=None, Lm0=None, Lmp=None):
        """Generator table with vanishing ``--`` and ``++`` entries."""
        return cls(dim_h, d_mult, m0=Lm0, mp=Lmp, z0=L00, zp=L0p)

    @classmethod
    def hp(cls, W, L, H):
        """Pseudounitary factor ``F`` of the HP parametrization.

        ``F00 = W``, ``F0+ = L``, ``F-0 = -L^dag W``, ``F-+ = -L^dag L / 2 - iH``,
        ``F-- = F++ = I``.  ``W`` unitary and ``H`` Hermitian make ``F``
        pseudounitary.
        """
        W = np.asarray(W, dtype=complex)
        L = np.asarray(L, dtype=complex)
        H = np.asarray(H, dtype=complex)
        dh = H.shape[0]
        d = W.shape[0] // dh
        Ld = L.conj().T
        return cls(dh, d, mm=np.eye(dh), m0=-Ld @ W, mp=-0.5 * Ld @ L - 1j * H,
                   z0=W, zp=L, pp=np.eye(dh))

    # -- structure --------------------------------------------------------
    @property
    def size(self):
        return 2 * self.dim_h + self.dim_h * self.d_mult

    def dense(self):
        a, b = self.dim_h, self.dim_h * self.d_mult
        M = np.zeros((2 * a + b, 2 * a + b), dtype=complex)
        i0, i1 = a, a + b
        M[:i0, :i0] = self.mm
        M[:i0, i0:i1] = self.m0
        M[:i0, i1:] = self.mp
        M[i0:i1, i0:i1] = self.z0
        M[i0:i1, i1:] = self.zp
        M[i1:, i1:] = self.pp
        return M

    def blocks(self):
        return {k: getattr(self, k) for k in _BLOCKS}

    def copy(self):
        return TriangularPointMatrix(self.dim_h, self.d_mult, **{k: v.copy() for k, v in self.blocks().items()})

    def _like(self, **blocks):
        return TriangularPointMatrix(self.dim_h, self.d_mult, **blocks)

    def __add__(self, other):
        return self._like(**{k: getattr(self, k) + getattr(other, k) for k in _BLOCKS})

    def __sub__(self, other):
        return self._like(**{k: getattr(self, k) - getattr(other, k) for k in _BLOCKS})

    def __neg__(self):
        return self._like(**{k: -getattr(self, k) for k in _BLOCKS})

    def __mul__(self, c):
        return self._like(**{k: c * getattr(self, k) for k in _BLOCKS})

    __rmul__ = __mul__

    def __matmul__(self, other):
        """Triangular product ``(PQ)^mu_nu = sum_lambda P^mu_lambda Q^lambda_nu``."""
        P, Q = self, other
        return self._like(
            mm=P.mm @ Q.mm,
            m0=P.mm @ Q.m0 + P.m0 @ Q.z0,
            mp=P.mm @ Q.mp + P.m0 @ Q.zp + P.mp @ Q.pp,
            z0=P.z0 @ Q.z0,
            zp=P.z0 @ Q.zp + P.zp @ Q.pp,
            pp=P.pp @ Q.pp,
        )

    def pseudo_conjugate(self):
        """``(F*)^mu_nu = (F^{nu'}_{mu'})^dag`` with ``'`` swapping ``-`` and ``+``."""
        h = lambda m: m.conj().T
        return self._like(mm=h(self.pp), m0=h(self.zp), mp=h(self.mp),
                          z0=h(self.z0), zp=h(self.m0), pp=h(self.mm))

    def max_abs(self):
        return max(float(np.max(np.abs(v))) if v.size else 0.0 for v in self.blocks().values())

    def is_identity_diagonal(self, tol=0.0):
        e = np.eye(self.dim_h)
        return (np.max(np.abs(self.mm - e)) <= tol) and (np.max(np.abs(self.pp - e)) <= tol)

    def expm(self):
        """Matrix exponential of the triangular matrix (dense oracle)."""
        return TriangularPointMatrix.from_dense(scipy.linalg.expm(self.dense()), self.dim_h, self.d_mult)

    def lift(self, dim_h):
        """``I_{dim_h} (x) f`` for a scalar-level matrix (``self.dim_h == 1``)."""
        if self.dim_h != 1:
            raise ValueError("lift requires a scalar-level matrix")
        e = np.eye(dim_h)
        return TriangularPointMatrix(dim_h, self.d_mult, **{k: np.kron(e, v) for k, v in self.blocks().items()})

    # -- local operators in orthonormal coordinates -----------------------
    def epsilon_op(self, dt):
        """Local factor on ``H (x) cell`` of a one-point kernel factor.

        In coordinates ``(h, s)`` with ``s = 0`` empty and ``s = 1 + e``
        occupied: ``[[F-- + dt F-+, sqrt(dt) F-0], [sqrt(dt) F0+, F00]]``.
        """
        return _local(self.dim_h, self.d_mult, self.mm + dt * self.mp, np.sqrt(dt) * self.m0,
                      np.sqrt(dt) * self.zp, self.z0)

    def increment_op(self, dt):
        """Local operator of the one-cell QS increment of this integrand.

        ``[[dt M-+, sqrt(dt) M-0], [sqrt(dt) M0+, M00 + dt M-+]]``, i.e. the
        gauge, creation, annihilation and time integrators over a single cell.
        """
        eye_e = np.kron(self.mp, np.eye(self.d_mult))
        return _local(self.dim_h, self.d_mult, dt * self.mp, np.sqrt(dt) * self.m0,
                      np.sqrt(dt) * self.zp, self.z0 + dt * eye_e)

    def __repr__(self):
        return f"TriangularPointMatrix(dim_h={self.dim_h}, d={self.d_mult})"


def _local(dh, d, ee, eo, oe, oo):
    q = 1 + d
    op = np.zeros((dh, q, dh, q), dtype=complex)
    op[:, 0, :, 0] = ee
    op[:, 0, :, 1:] = eo.reshape(dh, dh, d)
    op[:, 1:, :, 0] = oe.reshape(dh, d, dh)
    op[:, 1:, :, 1:] = oo.reshape(dh, d, dh, d)
    return op.reshape(dh * q, dh * q)


def pseudo_unitary_defects(F):
    """``(||F*F - I||, ||FF* - I||)`` in the max-abs entry norm."""
    idm = TriangularPointMatrix.identity(F.dim_h, F.d_mult)
    a = (F.pseudo_conjugate() @ F - idm).max_abs()
    b = (F @ F.pseudo_conjugate() - idm).max_abs()
    return a, b
