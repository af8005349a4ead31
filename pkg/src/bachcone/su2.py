"""Quaternionic model of the unit 3-sphere with its global Milnor frame.

The sphere is the group of unit quaternions.  The frame vector fields are
``X_i(q) = x_i * q`` (quaternion product with the imaginary units ``x_1,
x_2, x_3``), whose flows ``t -> exp(t x_i) * q`` stay on the sphere.  This
convention gives the cyclic structure constants

    [X_1, X_2] = -2 X_3,   [X_2, X_3] = -2 X_1,   [X_3, X_1] = -2 X_2.

Scalar test fields are polynomials in the four ambient coordinates
restricted to the sphere, so frame derivatives are exact (no finite
differencing anywhere on the link).  Integration uses a Hopf-coordinate
product rule that is exact on polynomials up to a declared degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

Exponents = Tuple[int, int, int, int]

#: Left-multiplication matrices of the imaginary units: (x_i * q) = M[i] @ q
#: for q = (w, x, y, z).
IMAG_UNIT_MATRICES = np.array(
    [
        [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
        [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
        [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
    ],
    dtype=float,
)

#: Sign of the permutation (i, j, k); zero when any two indices agree.
PERMUTATION_SIGN = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    PERMUTATION_SIGN[_i, _j, _k] = 1.0
    PERMUTATION_SIGN[_i, _k, _j] = -1.0

#: Structure constants C[i, j, k] in [X_i, X_j] = sum_k C[i, j, k] X_k.
STRUCTURE_CONSTANTS = -2.0 * PERMUTATION_SIGN

SPHERE_VOLUME = 2.0 * math.pi**2

UNIT_NORM_TOL = 1e-6


class DegreeExactnessError(ValueError):
    """Raised when an integrand exceeds the quadrature's exactness degree."""


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of quaternions given as (..., 4) arrays (w, x, y, z)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


@dataclass(frozen=True)
class UnitQuaternion:
    """A point of the unit 3-sphere, renormalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n == 0.0:
            raise ValueError("zero quaternion cannot be normalized")
        if abs(n - 1.0) > 0.5:
            raise ValueError(f"component norm {n:.3g} too far from 1 to renormalize")
        object.__setattr__(self, "w", self.w / n)
        object.__setattr__(self, "x", self.x / n)
        object.__setattr__(self, "y", self.y / n)
        object.__setattr__(self, "z", self.z / n)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q: np.ndarray) -> "UnitQuaternion":
        q = np.asarray(q, dtype=float)
        return cls(q[0], q[1], q[2], q[3])

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


@dataclass(frozen=True)
class MilnorFrame:
    """The three frame vectors at a point, plus the structure constants."""

    point: np.ndarray
    vectors: np.ndarray  # shape (3, 4); row i is X_i at the point
    structure_constants: np.ndarray = field(
        default_factory=lambda: STRUCTURE_CONSTANTS.copy()
    )


def frame_at(q, tol: float = UNIT_NORM_TOL) -> MilnorFrame:
    """Milnor frame vectors at a point of the sphere.

    Accepts a :class:`UnitQuaternion` or a raw 4-array, which is rejected if
    its norm deviates from 1 by more than ``tol``.
    """
    if isinstance(q, UnitQuaternion):
        qa = q.as_array()
    else:
        qa = np.asarray(q, dtype=float)
        if qa.shape != (4,):
            raise ValueError("expected a 4-component quaternion")
        if abs(np.linalg.norm(qa) - 1.0) > tol:
            raise ValueError(f"point has norm {np.linalg.norm(qa):.12g}, not unit")
    return MilnorFrame(point=qa, vectors=IMAG_UNIT_MATRICES @ qa)


def frame_vectors(points: np.ndarray) -> np.ndarray:
    """Frame vectors at many points: (N, 4) -> (3, N, 4)."""
    return np.einsum("iab,nb->ina", IMAG_UNIT_MATRICES, points)


class PolynomialScalar:
    """Polynomial in the ambient coordinates (w, x, y, z), viewed on the sphere.

    Closed under addition, multiplication, ambient partial derivatives and
    frame derivatives; degree bookkeeping is exact.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Dict[Exponents, float] | None = None):
        self.coeffs: Dict[Exponents, float] = {}
        if coeffs:
            for k, v in coeffs.items():
                if v != 0.0:
                    self.coeffs[tuple(int(e) for e in k)] = float(v)

    @classmethod
    def zero(cls) -> "PolynomialScalar":
        return cls()

    @classmethod
    def constant(cls, c: float) -> "PolynomialScalar":
        return cls({(0, 0, 0, 0): c})

    @classmethod
    def coordinate(cls, axis: int) -> "PolynomialScalar":
        e = [0, 0, 0, 0]
        e[axis] = 1
        return cls({tuple(e): 1.0})

    @classmethod
    def monomial(cls, exponents: Sequence[int], c: float = 1.0) -> "PolynomialScalar":
        return cls({tuple(int(e) for e in exponents): c})

    @property
    def degree(self) -> int:
        """Total ambient degree; 0 for the zero polynomial."""
        if not self.coeffs:
            return 0
        return max(sum(k) for k in self.coeffs)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(v) <= tol for v in self.coeffs.values())

    def max_abs_coeff(self) -> float:
        return max((abs(v) for v in self.coeffs.values()), default=0.0)

    def __add__(self, other: "PolynomialScalar") -> "PolynomialScalar":
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            s = out.get(k, 0.0) + v
            if s == 0.0:
                out.pop(k, None)
            else:
                out[k] = s
        res = PolynomialScalar()
        res.coeffs = out
        return res

    def __sub__(self, other: "PolynomialScalar") -> "PolynomialScalar":
        return self + (-1.0) * other

    def __neg__(self) -> "PolynomialScalar":
        return (-1.0) * self

    def __rmul__(self, c: float) -> "PolynomialScalar":
        if c == 0.0:
            return PolynomialScalar()
        res = PolynomialScalar()
        res.coeffs = {k: c * v for k, v in self.coeffs.items()}
        return res

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return float(other) * self
        out: Dict[Exponents, float] = {}
        for ka, va in self.coeffs.items():
            for kb, vb in other.coeffs.items():
                k = (ka[0] + kb[0], ka[1] + kb[1], ka[2] + kb[2], ka[3] + kb[3])
                s = out.get(k, 0.0) + va * vb
                if s == 0.0:
                    out.pop(k, None)
                else:
                    out[k] = s
        res = PolynomialScalar()
        res.coeffs = out
        return res

    def ambient_partial(self, axis: int) -> "PolynomialScalar":
        out: Dict[Exponents, float] = {}
        for k, v in self.coeffs.items():
            e = k[axis]
            if e == 0:
                continue
            kk = list(k)
            kk[axis] = e - 1
            kk = tuple(kk)
            out[kk] = out.get(kk, 0.0) + e * v
        res = PolynomialScalar()
        res.coeffs = {k: v for k, v in out.items() if v != 0.0}
        return res

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Values at (..., 4) points, vectorized over leading axes."""
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for k, v in self.coeffs.items():
            term = np.full(pts.shape[:-1], v)
            for axis, e in enumerate(k):
                if e:
                    term = term * pts[..., axis] ** e
            out += term
        return out

    def __repr__(self) -> str:
        if not self.coeffs:
            return "PolynomialScalar(0)"
        names = "wxyz"
        parts = []
        for k in sorted(self.coeffs):
            mono = "".join(f"{names[a]}^{e}" if e > 1 else names[a] for a, e in enumerate(k) if e)
            parts.append(f"{self.coeffs[k]:+g}{('*' + mono) if mono else ''}")
        return "PolynomialScalar(" + " ".join(parts) + ")"


def lie_derivative_scalar(f: PolynomialScalar, i: int) -> PolynomialScalar:
    """Frame derivative X_i f, exact on polynomials; the degree never grows.

    ``i`` is a 0-based frame index in {0, 1, 2}.
    """
    if i not in (0, 1, 2):
        raise ValueError(f"frame index must be 0, 1 or 2, got {i}")
    M = IMAG_UNIT_MATRICES[i]
    out = PolynomialScalar()
    for mu in range(4):
        df = f.ambient_partial(mu)
        if not df.coeffs:
            continue
        for nu in range(4):
            c = M[mu, nu]
            if c:
                out = out + c * (PolynomialScalar.coordinate(nu) * df)
    return out


def monomials_up_to(degree: int) -> list[Exponents]:
    """All ambient exponent tuples of total degree <= degree, sorted."""
    out = []
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                for d in range(degree + 1 - a - b - c):
                    out.append((a, b, c, d))
    return sorted(out)


def exact_monomial_integral(exponents: Exponents) -> float:
    """Closed-form integral of a coordinate monomial over the unit 3-sphere.

    Vanishes unless all exponents are even; otherwise given by the Dirichlet
    integral 2 * prod Gamma(a_i + 1/2) / Gamma(sum a_i + 2) with a_i half the
    exponents.
    """
    if any(e % 2 for e in exponents):
        return 0.0
    half = [e // 2 for e in exponents]
    num = 2.0
    for a in half:
        num *= math.gamma(a + 0.5)
    return num / math.gamma(sum(half) + 2)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on the sphere, exact on polynomials up to a degree."""

    points: np.ndarray  # (N, 4)
    weights: np.ndarray  # (N,)
    exactness_degree: int

    @classmethod
    def hopf(cls, degree: int = 16) -> "QuadratureRule":
        """Product rule in Hopf coordinates.

        Gauss-Legendre nodes in u = cos(2 theta) handle the latitude factor;
        uniform angular grids integrate the two circle factors exactly.  A
        monomial of total degree d contributes only when every exponent is
        even, in which case the latitude integrand is a polynomial of degree
        d/2 in u, so the rule is exact through the declared degree.
        """
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        n_ang = degree + 2
        n_gl = max(1, (degree + 5) // 4)
        u, gw = np.polynomial.legendre.leggauss(n_gl)
        cos_t = np.sqrt((1.0 + u) / 2.0)
        sin_t = np.sqrt((1.0 - u) / 2.0)
        phi1 = 2.0 * np.pi * np.arange(n_ang) / n_ang
        phi2 = 2.0 * np.pi * np.arange(n_ang) / n_ang

        ct, p1, p2 = np.meshgrid(cos_t, phi1, phi2, indexing="ij")
        st = np.meshgrid(sin_t, phi1, phi2, indexing="ij")[0]
        pts = np.stack(
            [ct * np.cos(p1), ct * np.sin(p1), st * np.cos(p2), st * np.sin(p2)],
            axis=-1,
        ).reshape(-1, 4)
        w3 = np.einsum(
            "i,j,k->ijk", gw, np.full(n_ang, 1.0 / n_ang), np.full(n_ang, 1.0 / n_ang)
        )
        wts = (w3 * np.pi**2).reshape(-1)
        return cls(points=pts, weights=wts, exactness_degree=degree)


def integrate(f: PolynomialScalar, rule: QuadratureRule) -> float:
    """Integral of ``f`` over the sphere; rejects degree overflow loudly."""
    if f.degree > rule.exactness_degree:
        raise DegreeExactnessError(
            f"integrand degree {f.degree} exceeds rule exactness "
            f"{rule.exactness_degree}"
        )
    return float(np.dot(rule.weights, f.evaluate(rule.points)))


def random_unit_points(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on the sphere as an (n, 4) array."""
    v = rng.standard_normal((n, 4))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
