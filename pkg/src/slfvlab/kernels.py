"""Hot inner loops, each with a jitted and a vectorised numpy implementation.

Both implementations of a kernel return bit-identical results; the dispatch
names at the bottom of the module pick one according to ``_accel.USE_NUMBA``.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SALT = np.uint64(0x632BE59BD9B4E019)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 2.0 ** -53


# --------------------------------------------------------------------------
# squared periodic / euclidean distances from many points to one centre


def _sq_distances_np(pos, center, lengths, periodic):
    diff = np.abs(pos - center)
    if periodic:
        diff = np.minimum(diff, lengths - diff)
    sq = diff * diff
    out = sq[:, 0].copy()
    for a in range(1, sq.shape[1]):
        out += sq[:, a]
    return out


@njit
def _sq_distances_nb(pos, center, lengths, periodic):
    n, d = pos.shape
    out = np.empty(n, np.float64)
    for j in range(n):
        acc = 0.0
        for a in range(d):
            diff = abs(pos[j, a] - center[a])
            if periodic:
                w = lengths[a] - diff
                if w < diff:
                    diff = w
            acc += diff * diff
        out[j] = acc
    return out


# --------------------------------------------------------------------------
# uniform-grid point query over event balls


def _query_cell_np(x, t0, t1, start, stop, cell_items, ev_t, ev_z, ev_reach2, lengths, periodic):
    ids = cell_items[start:stop]
    if ids.size == 0:
        return ids.astype(np.int64)
    t = ev_t[ids]
    ids = ids[(t > t0) & (t <= t1)]
    if ids.size == 0:
        return ids.astype(np.int64)
    d2 = _sq_distances_np(ev_z[ids], x, lengths, periodic)
    return ids[d2 <= ev_reach2[ids]].astype(np.int64)


@njit
def _query_cell_nb(x, t0, t1, start, stop, cell_items, ev_t, ev_z, ev_reach2, lengths, periodic):
    out = np.empty(stop - start, np.int64)
    k = 0
    d = x.shape[0]
    for p in range(start, stop):
        i = cell_items[p]
        t = ev_t[i]
        if t <= t0 or t > t1:
            continue
        acc = 0.0
        for a in range(d):
            diff = abs(ev_z[i, a] - x[a])
            if periodic:
                w = lengths[a] - diff
                if w < diff:
                    diff = w
            acc += diff * diff
        if acc <= ev_reach2[i]:
            out[k] = i
            k += 1
    return out[:k]


# --------------------------------------------------------------------------
# counter-based uniforms: one independent U[0,1) per (key, a, b) triple


def _mix_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _hash_uniform_np(key, a, b):
    a = np.asarray(a, dtype=np.int64).astype(np.uint64)
    b = np.asarray(b, dtype=np.int64).astype(np.uint64)
    a, b = np.broadcast_arrays(a, b)
    h = _mix_np(np.uint64(key) + _GOLDEN * (a + _ONE))
    h = _mix_np(h ^ (_SALT * (b + _ONE)))
    return (h >> _S11).astype(np.float64) * _TWO_M53


@njit
def _mix_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit
def _hash_uniform_flat_nb(key, a, b):
    n = a.shape[0]
    out = np.empty(n, np.float64)
    k = np.uint64(key)
    for j in range(n):
        h = _mix_nb(k + np.uint64(0x9E3779B97F4A7C15) * (np.uint64(a[j]) + np.uint64(1)))
        h = _mix_nb(h ^ (np.uint64(0x632BE59BD9B4E019) * (np.uint64(b[j]) + np.uint64(1))))
        out[j] = np.float64(h >> np.uint64(11)) * 1.1102230246251565e-16
    return out


def _hash_uniform_nb(key, a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    a, b = np.broadcast_arrays(a, b)
    shape = a.shape
    out = _hash_uniform_flat_nb(np.uint64(key), a.astype(np.int64, copy=True).ravel(), b.astype(np.int64, copy=True).ravel())
    return out.reshape(shape)


# --------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    sq_distances = _sq_distances_nb
    query_cell = _query_cell_nb
    hash_uniform = _hash_uniform_nb
else:
    sq_distances = _sq_distances_np
    query_cell = _query_cell_np
    hash_uniform = _hash_uniform_np

IMPLEMENTATIONS = {
    "sq_distances": (_sq_distances_nb, _sq_distances_np),
    "query_cell": (_query_cell_nb, _query_cell_np),
    "hash_uniform": (_hash_uniform_nb, _hash_uniform_np),
}
