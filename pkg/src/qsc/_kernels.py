"""Subset-enumeration kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Setting ``QSC_DISABLE_NUMBA=1``
in the environment (or running without numba installed) selects the numpy
implementations; both paths return identical results.
"""
import os

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("QSC_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def popcount_table(n_bits):
    """Population counts of ``0 .. 2**n_bits - 1``."""
    m = np.arange(1 << n_bits, dtype=np.int64)
    out = np.zeros(m.shape, dtype=np.int64)
    for b in range(n_bits):
        out += (m >> b) & 1
    return out


# ---------------------------------------------------------------------------
# numpy implementations

def _disjoint_pair_sum_np(sq_norms, xi, eta, dt):
    n_masks = sq_norms.shape[0]
    pc = popcount_table(int(n_masks).bit_length() - 1)
    total = 0.0
    masks = np.arange(n_masks, dtype=np.int64)
    for s in range(n_masks):
        r = masks[(masks & s) == 0]
        w = xi ** pc[s] * eta ** pc[r] * dt ** (pc[s] + pc[r])
        total += float(np.sum(w * sq_norms[s | r]))
    return total


def _product_pairs_np(s_tab, t_tab):
    # tables are (k00, k0p, km0, kmp) rows; S acts after T
    s_in = (s_tab[:, 0] | s_tab[:, 2])[:, None]
    t_out = (t_tab[:, 0] | t_tab[:, 1])[None, :]
    s_act = (s_tab[:, 1] | s_tab[:, 3])[:, None]
    t_act = (t_tab[:, 2] | t_tab[:, 3])[None, :]
    ok = (s_in == t_out) & ((s_act & t_act) == 0)
    i_s, i_t = np.nonzero(ok)
    s = s_tab[i_s]
    t = t_tab[i_t]
    p_in = t[:, 0] | t[:, 2]
    p_out = s[:, 0] | s[:, 1]
    p00 = p_in & p_out
    p0p = p_out & ~p_in
    pm0 = p_in & ~p_out
    pmp = s[:, 3] | t[:, 3] | (s[:, 2] & t[:, 1])
    return i_s.astype(np.int64), i_t.astype(np.int64), np.stack([p00, p0p, pm0, pmp], axis=1)


def _submask_enum_np(free_masks):
    idx = []
    subs = []
    for i, f in enumerate(free_masks.tolist()):
        s = f
        while True:
            idx.append(i)
            subs.append(s)
            if s == 0:
                break
            s = (s - 1) & f
    return np.asarray(idx, dtype=np.int64), np.asarray(subs, dtype=np.int64)


def _local_apply_np(v4, op4):
    dh, hi, q, m = v4.shape
    t = v4.transpose(0, 2, 1, 3).reshape(dh * q, hi * m)
    r = (op4.reshape(dh * q, dh * q) @ t).reshape(dh, q, hi, m)
    return r.transpose(0, 2, 1, 3)


def _scatter_apply_np(out, vec, o_cfg, i_cfg, scale, blocks):
    # out[:, o] += scale * blocks[k] @ vec[:, i] for every table k (d = 1)
    for k in range(o_cfg.shape[0]):
        out[:, o_cfg[k], :] += scale[k] * (blocks[k] @ vec[:, i_cfg[k], :])
    return out


# ---------------------------------------------------------------------------
# numba implementations

if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _popcount(x):
        c = 0
        while x:
            x &= x - 1
            c += 1
        return c

    @numba.njit(cache=True)
    def _disjoint_pair_sum_nb(sq_norms, xi, eta, dt):
        n_masks = sq_norms.shape[0]
        full = n_masks - 1
        total = 0.0
        for s in range(n_masks):
            ps = _popcount(s)
            comp = full & ~s
            r = comp
            while True:
                pr = _popcount(r)
                total += xi ** ps * eta ** pr * dt ** (ps + pr) * sq_norms[s | r]
                if r == 0:
                    break
                r = (r - 1) & comp
        return total

    @numba.njit(cache=True)
    def _product_pairs_nb(s_tab, t_tab):
        ns = s_tab.shape[0]
        nt = t_tab.shape[0]
        count = 0
        for i in range(ns):
            s_in = s_tab[i, 0] | s_tab[i, 2]
            s_act = s_tab[i, 1] | s_tab[i, 3]
            for j in range(nt):
                if s_in == (t_tab[j, 0] | t_tab[j, 1]) and (s_act & (t_tab[j, 2] | t_tab[j, 3])) == 0:
                    count += 1
        i_s = np.empty(count, dtype=np.int64)
        i_t = np.empty(count, dtype=np.int64)
        p = np.empty((count, 4), dtype=np.int64)
        k = 0
        for i in range(ns):
            s_in = s_tab[i, 0] | s_tab[i, 2]
            s_act = s_tab[i, 1] | s_tab[i, 3]
            for j in range(nt):
                if s_in == (t_tab[j, 0] | t_tab[j, 1]) and (s_act & (t_tab[j, 2] | t_tab[j, 3])) == 0:
                    p_in = t_tab[j, 0] | t_tab[j, 2]
                    p_out = s_tab[i, 0] | s_tab[i, 1]
                    i_s[k] = i
                    i_t[k] = j
                    p[k, 0] = p_in & p_out
                    p[k, 1] = p_out & ~p_in
                    p[k, 2] = p_in & ~p_out
                    p[k, 3] = s_tab[i, 3] | t_tab[j, 3] | (s_tab[i, 2] & t_tab[j, 1])
                    k += 1
        return i_s, i_t, p

    @numba.njit(cache=True)
    def _submask_enum_nb(free_masks):
        count = 0
        for f in free_masks:
            count += 1 << _popcount(f)
        idx = np.empty(count, dtype=np.int64)
        subs = np.empty(count, dtype=np.int64)
        k = 0
        for i in range(free_masks.shape[0]):
            f = free_masks[i]
            s = f
            while True:
                idx[k] = i
                subs[k] = s
                k += 1
                if s == 0:
                    break
                s = (s - 1) & f
        return idx, subs

    @numba.njit(cache=True)
    def _local_apply_nb(v4, op4):
        dh, hi, q, m = v4.shape
        out = np.zeros_like(v4)
        for i in range(hi):
            for a in range(dh):
                for s in range(q):
                    for b in range(dh):
                        for t in range(q):
                            w = op4[a, s, b, t]
                            if w == 0:
                                continue
                            for j in range(m):
                                out[a, i, s, j] += w * v4[b, i, t, j]
        return out

    @numba.njit(cache=True)
    def _scatter_apply_nb(out, vec, o_cfg, i_cfg, scale, blocks):
        dh = blocks.shape[1]
        nb_cols = vec.shape[2]
        for k in range(o_cfg.shape[0]):
            o = o_cfg[k]
            i = i_cfg[k]
            s = scale[k]
            for a in range(dh):
                for b in range(dh):
                    w = s * blocks[k, a, b]
                    if w == 0:
                        continue
                    for c in range(nb_cols):
                        out[a, o, c] += w * vec[b, i, c]
        return out


def disjoint_pair_sum(sq_norms, xi, eta, dt, use_numba=None):
    """Brute-force ``sum_{S, R disjoint} xi^|S| eta^|R| dt^(|S|+|R|) w(S|R)``.

    ``sq_norms`` is indexed by cell bitmask.
    """
    sq = np.ascontiguousarray(sq_norms, dtype=np.float64)
    if USE_NUMBA if use_numba is None else use_numba:
        return float(_disjoint_pair_sum_nb(sq, float(xi), float(eta), float(dt)))
    return _disjoint_pair_sum_np(sq, float(xi), float(eta), float(dt))


def product_pairs(s_tab, t_tab, use_numba=None):
    """Matching four-table pairs for a kernel product and the resulting tables."""
    s_tab = np.ascontiguousarray(s_tab, dtype=np.int64).reshape(-1, 4)
    t_tab = np.ascontiguousarray(t_tab, dtype=np.int64).reshape(-1, 4)
    if USE_NUMBA if use_numba is None else use_numba:
        return _product_pairs_nb(s_tab, t_tab)
    return _product_pairs_np(s_tab, t_tab)


def submask_enum(free_masks, use_numba=None):
    """Flattened enumeration of all submasks of each entry of ``free_masks``."""
    fm = np.ascontiguousarray(free_masks, dtype=np.int64)
    if USE_NUMBA if use_numba is None else use_numba:
        return _submask_enum_nb(fm)
    return _submask_enum_np(fm)


def local_apply(v4, op4, use_numba=None):
    """Apply a local operator ``op4[a, s, b, t]`` to ``v4[b, i, t, j]``.

    ``v4`` is a coordinate batch viewed as ``(dim_h, hi, q, lo * B)`` around
    one cell; returns an array of the same shape.
    """
    if USE_NUMBA if use_numba is None else use_numba:
        return _local_apply_nb(np.ascontiguousarray(v4, dtype=np.complex128),
                               np.ascontiguousarray(op4, dtype=np.complex128))
    return _local_apply_np(v4, op4)


def scatter_apply(out, vec, o_cfg, i_cfg, scale, blocks, use_numba=None):
    """Accumulate sparse single-config blocks into ``out`` (in place).

    ``out``, ``vec`` have shape (dim_h, n_configs, n_cols); ``blocks`` has
    shape (n_tables, dim_h, dim_h).
    """
    if USE_NUMBA if use_numba is None else use_numba:
        return _scatter_apply_nb(out, np.ascontiguousarray(vec), np.asarray(o_cfg, np.int64),
                                 np.asarray(i_cfg, np.int64), np.asarray(scale, np.float64),
                                 np.ascontiguousarray(blocks, np.complex128))
    return _scatter_apply_np(out, vec, o_cfg, i_cfg, scale, blocks)
