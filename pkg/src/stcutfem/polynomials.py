"""1D quadrature rules and nodal Lagrange bases on the unit interval."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1] (exact to degree 2n-1)."""
    if n < 1:
        raise ValueError("need at least one Gauss point")
    x, w = _leggauss(n)
    return x.copy(), w.copy()


def points_for_order(order: int) -> int:
    """Number of Gauss points integrating polynomials of degree ``order`` exactly."""
    return max(1, order // 2 + 1)


@lru_cache(maxsize=None)
def _lobatto(n: int) -> np.ndarray:
    if n == 1:
        return np.array([0.5])
    if n == 2:
        return np.array([0.0, 1.0])
    c = np.zeros(n)
    c[-1] = 1.0
    inner = np.sort(np.polynomial.legendre.legroots(np.polynomial.legendre.legder(c)))
    x = np.concatenate(([-1.0], inner, [1.0]))
    x = 0.5 * (x + 1.0)
    x[0], x[-1] = 0.0, 1.0
    return x


def gauss_lobatto(n: int) -> np.ndarray:
    """Gauss-Lobatto nodes on [0, 1], endpoints included for n >= 2.

    For n == 1 the midpoint is returned, which is what a piecewise
    constant in time uses.
    """
    if n < 1:
        raise ValueError("need at least one node")
    return _lobatto(n).copy()


class Lagrange1D:
    """Nodal Lagrange basis of a given degree on [0, 1] at Gauss-Lobatto nodes.

    Evaluation outside [0, 1] is allowed: it gives the canonical polynomial
    extension, which the ghost penalty relies on.
    """

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.degree = degree
        self.nodes = gauss_lobatto(degree + 1)
        vander = np.vander(self.nodes, degree + 1, increasing=True)
        # column j holds the monomial coefficients of basis function j
        self.coeffs = np.linalg.inv(vander)
        powers = np.arange(degree + 1)
        self._dcoeffs = (self.coeffs * powers[:, None])[1:]

    @property
    def size(self) -> int:
        return self.degree + 1

    def _snap(self, xi: np.ndarray, values: np.ndarray) -> np.ndarray:
        # exact Kronecker rows at the nodes so that traces are bitwise shared
        for j, node in enumerate(self.nodes):
            hit = xi == node
            if np.any(hit):
                values[hit] = 0.0
                values[hit, j] = 1.0
        return values

    def eval(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        vals = np.vander(xi, self.degree + 1, increasing=True) @ self.coeffs
        return self._snap(xi, vals)

    def deriv(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if self.degree == 0:
            return np.zeros((xi.size, 1))
        return np.vander(xi, self.degree, increasing=True) @ self._dcoeffs

    def monomial_coefficients(self, nodal_values: np.ndarray) -> np.ndarray:
        """Power-basis coefficients (increasing) of the interpolant of ``nodal_values``."""
        return self.coeffs @ np.asarray(nodal_values, dtype=float)


@lru_cache(maxsize=None)
def lagrange(degree: int) -> Lagrange1D:
    return Lagrange1D(degree)
