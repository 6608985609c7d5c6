"""Adaptive-precision orientation and in-sphere predicates.

Each predicate first evaluates in floating point and compares against a static
forward error bound (Shewchuk's A-bounds); only when the sign is uncertain does
it fall back to exact rational arithmetic.

Sign conventions:
  orient(a, b, c, d)      > 0  iff  det[b-a, c-a, d-a] > 0 (right-handed tet)
  insphere(a, b, c, d, e) > 0  iff  e lies strictly inside the circumsphere of a
                                    positively oriented tet (a, b, c, d)
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

_EPS = np.finfo(np.float64).eps / 2.0
O3D_ERRBOUND = (7.0 + 56.0 * _EPS) * _EPS
ISP_ERRBOUND = (16.0 + 224.0 * _EPS) * _EPS

exact_calls = 0


def _orient_exact(a, b, c, d):
    global exact_calls
    exact_calls += 1
    F = Fraction
    ax, ay, az = (F(x) - F(y) for x, y in zip(a, d))
    bx, by, bz = (F(x) - F(y) for x, y in zip(b, d))
    cx, cy, cz = (F(x) - F(y) for x, y in zip(c, d))
    det = (ax * (by * cz - bz * cy) + bx * (cy * az - cz * ay) + cx * (ay * bz - az * by))
    return -((det > 0) - (det < 0))


def orient(a, b, c, d) -> int:
    adx, ady, adz = a[0] - d[0], a[1] - d[1], a[2] - d[2]
    bdx, bdy, bdz = b[0] - d[0], b[1] - d[1], b[2] - d[2]
    cdx, cdy, cdz = c[0] - d[0], c[1] - d[1], c[2] - d[2]
    bdxcdy = bdx * cdy
    cdxbdy = cdx * bdy
    cdxady = cdx * ady
    adxcdy = adx * cdy
    adxbdy = adx * bdy
    bdxady = bdx * ady
    det = (adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady))
    perm = ((abs(bdxcdy) + abs(cdxbdy)) * abs(adz)
            + (abs(cdxady) + abs(adxcdy)) * abs(bdz)
            + (abs(adxbdy) + abs(bdxady)) * abs(cdz))
    bound = O3D_ERRBOUND * perm
    if det > bound:
        return -1
    if -det > bound:
        return 1
    return _orient_exact(a, b, c, d)


def _insphere_exact(a, b, c, d, e):
    global exact_calls
    exact_calls += 1
    F = Fraction
    rows = []
    for p in (a, b, c, d):
        x, y, z = (F(p[i]) - F(e[i]) for i in range(3))
        rows.append((x, y, z, x * x + y * y + z * z))
    det = _det4(rows)
    return -((det > 0) - (det < 0))


def _det3(m):
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


def _det4(m):
    total = 0
    for j in range(4):
        minor = [[m[i][k] for k in range(4) if k != j] for i in range(1, 4)]
        term = m[0][j] * _det3(minor)
        total += term if j % 2 == 0 else -term
    return total


def insphere(a, b, c, d, e) -> int:
    aex, aey, aez = a[0] - e[0], a[1] - e[1], a[2] - e[2]
    bex, bey, bez = b[0] - e[0], b[1] - e[1], b[2] - e[2]
    cex, cey, cez = c[0] - e[0], c[1] - e[1], c[2] - e[2]
    dex, dey, dez = d[0] - e[0], d[1] - e[1], d[2] - e[2]

    aexbey = aex * bey
    bexaey = bex * aey
    ab = aexbey - bexaey
    bexcey = bex * cey
    cexbey = cex * bey
    bc = bexcey - cexbey
    cexdey = cex * dey
    dexcey = dex * cey
    cd = cexdey - dexcey
    dexaey = dex * aey
    aexdey = aex * dey
    da = dexaey - aexdey
    aexcey = aex * cey
    cexaey = cex * aey
    ac = aexcey - cexaey
    bexdey = bex * dey
    dexbey = dex * bey
    bd = bexdey - dexbey

    abc = aez * bc - bez * ac + cez * ab
    bcd = bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da

    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez

    det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd)

    aez, bez, cez, dez = abs(aez), abs(bez), abs(cez), abs(dez)
    perm = (((abs(cexdey) + abs(dexcey)) * bez
             + (abs(dexbey) + abs(bexdey)) * cez
             + (abs(bexcey) + abs(cexbey)) * dez) * alift
            + ((abs(dexaey) + abs(aexdey)) * cez
               + (abs(aexcey) + abs(cexaey)) * dez
               + (abs(cexdey) + abs(dexcey)) * aez) * blift
            + ((abs(aexbey) + abs(bexaey)) * dez
               + (abs(bexdey) + abs(dexbey)) * aez
               + (abs(dexaey) + abs(aexdey)) * bez) * clift
            + ((abs(bexcey) + abs(cexbey)) * aez
               + (abs(cexaey) + abs(aexcey)) * bez
               + (abs(aexbey) + abs(bexaey)) * cez) * dlift)
    bound = ISP_ERRBOUND * perm
    if det > bound:
        return -1
    if -det > bound:
        return 1
    return _insphere_exact(a, b, c, d, e)


def orient_many(a, b, c, d) -> np.ndarray:
    """Vectorized orient over rows of (M, 3) arrays; exact fallback per uncertain row."""
    ad, bd, cd = a - d, b - d, c - d
    t1 = bd[:, 0] * cd[:, 1]
    t2 = cd[:, 0] * bd[:, 1]
    t3 = cd[:, 0] * ad[:, 1]
    t4 = ad[:, 0] * cd[:, 1]
    t5 = ad[:, 0] * bd[:, 1]
    t6 = bd[:, 0] * ad[:, 1]
    det = ad[:, 2] * (t1 - t2) + bd[:, 2] * (t3 - t4) + cd[:, 2] * (t5 - t6)
    perm = ((np.abs(t1) + np.abs(t2)) * np.abs(ad[:, 2])
            + (np.abs(t3) + np.abs(t4)) * np.abs(bd[:, 2])
            + (np.abs(t5) + np.abs(t6)) * np.abs(cd[:, 2]))
    bound = O3D_ERRBOUND * perm
    out = np.where(det > bound, -1, np.where(-det > bound, 1, 0)).astype(np.int64)
    for i in np.flatnonzero(np.abs(det) <= bound):
        out[i] = _orient_exact(a[i], b[i], c[i], d[i])
    return out


def insphere_many(a, b, c, d, e) -> np.ndarray:
    out = np.empty(a.shape[0], dtype=np.int64)
    rows = [p - e for p in (a, b, c, d)]
    lift = [np.einsum("ij,ij->i", r, r) for r in rows]
    m = np.stack([np.column_stack([r, l]) for r, l in zip(rows, lift)], axis=1)
    det = np.linalg.det(m)
    absm = np.abs(m)
    # permanent-style magnitude; the LU path is not Shewchuk's expansion, so pad the bound
    perm = np.zeros(a.shape[0])
    for p in itertools.permutations(range(4)):
        perm += absm[:, 0, p[0]] * absm[:, 1, p[1]] * absm[:, 2, p[2]] * absm[:, 3, p[3]]
    bound = 64.0 * ISP_ERRBOUND * perm
    out[:] = np.where(det > bound, -1, np.where(-det > bound, 1, 0))
    for i in np.flatnonzero(np.abs(det) <= bound):
        out[i] = _insphere_exact(a[i], b[i], c[i], d[i], e[i])
    return out
