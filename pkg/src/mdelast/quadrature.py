"""Symmetric triangle rules and Gauss rules on [0, 1].

Triangle rules are given as barycentric coordinates with weights that sum to
one, so integrating f over a physical triangle reads
``area * sum(w_q * f(x_q))``.
"""

from __future__ import annotations

import numpy as np

_TRI_RULES: dict[int, tuple[np.ndarray, np.ndarray]] = {}
_GAUSS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _perm3(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _perm6(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def tri_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and unit-sum weights exact to the given degree."""
    if degree <= 4:
        key = 4
    elif degree <= 9:
        key = 9
    else:
        raise ValueError(f"no triangle rule of degree {degree}")
    if key not in _TRI_RULES:
        if key == 4:
            pts = _perm3(0.445948490915965) + _perm3(0.091576213509771)
            wts = [0.223381589678011] * 3 + [0.109951743655322] * 3
            _TRI_RULES[key] = (np.array(pts), np.array(wts))
        else:
            # Duffy-collapsed 6x6 Gauss product rule: exact through degree 9
            # with machine-accurate weights
            gu, wu = np.polynomial.legendre.leggauss(6)
            gu = 0.5 * (gu + 1.0)
            wu = 0.5 * wu
            pts, wts = [], []
            for ui, wi in zip(gu, wu):
                for vj, wj in zip(gu, wu):
                    x = ui
                    y = vj * (1.0 - ui)
                    pts.append((1.0 - x - y, x, y))
                    wts.append(2.0 * wi * wj * (1.0 - ui))
            _TRI_RULES[key] = (np.array(pts), np.array(wts))
    return _TRI_RULES[key]


def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1] with unit-sum weights."""
    if n not in _GAUSS:
        x, w = np.polynomial.legendre.leggauss(n)
        _GAUSS[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS[n]


def tri_points(coords: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points and weights for stacked triangles.

    ``coords`` has shape (nt, 3, 2); returns points (nt, nq, 2) and weights
    (nt, nq) that already include the triangle areas.
    """
    bary, w = tri_rule(degree)
    pts = np.einsum("qk,tkx->tqx", bary, coords)
    v1 = coords[:, 1] - coords[:, 0]
    v2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * np.abs(v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
    return pts, area[:, None] * w[None, :]
