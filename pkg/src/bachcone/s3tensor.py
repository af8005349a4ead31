"""Tensor fields on the round 3-sphere in the Milnor frame.

Fields carry polynomial coefficient functions in the orthonormal coframe
e_1, e_2, e_3 dual to the Milnor frame.  The connection acts on the coframe
by the rotation rule

    nabla_{X_i} e_j = -e_k sigma(i j k)

with sigma the permutation sign, so every operator here is a frame
derivative of the coefficients plus a constant rotation, hence exact on
polynomial data.

Conventions: the rough Laplacian is nonnegative, ``lap T = -sum_i
nabla_i nabla_i T``; the divergence is the positive contraction
``(div B)_k = sum_i (nabla_i B)_{ik}`` and ``div tau = sum_i X_i tau_i``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np

from .su2 import (
    PERMUTATION_SIGN,
    PolynomialScalar,
    QuadratureRule,
    lie_derivative_scalar,
    monomials_up_to,
)


class Bundle(enum.Enum):
    SCALAR = "scalar"
    ONE_FORM = "one_form"
    SYM2 = "sym2"


class BundleError(ValueError):
    """Raised when an operator is applied to an incompatible bundle."""


class DegreeError(ValueError):
    """Raised when the quadrature cannot integrate the requested products."""


N_COMPONENTS = {Bundle.SCALAR: 1, Bundle.ONE_FORM: 3, Bundle.SYM2: 6}

# Symmetric 2-tensor component order: 11, 22, 33, 12, 13, 23.
SYM_PAIRS = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
SYM_INDEX = {}
for _n, (_a, _b) in enumerate(SYM_PAIRS):
    SYM_INDEX[(_a, _b)] = _n
    SYM_INDEX[(_b, _a)] = _n
#: Multiplicity of each stored component in the full double-sum inner product.
SYM_WEIGHTS = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


class TensorFieldS3:
    """Bundle-tagged field with polynomial coefficients in the Milnor coframe."""

    __slots__ = ("bundle", "components")

    def __init__(self, bundle: Bundle, components: Sequence[PolynomialScalar]):
        if len(components) != N_COMPONENTS[bundle]:
            raise BundleError(
                f"{bundle} needs {N_COMPONENTS[bundle]} components, got {len(components)}"
            )
        self.bundle = bundle
        self.components = tuple(components)

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, bundle: Bundle) -> "TensorFieldS3":
        z = PolynomialScalar.zero()
        return cls(bundle, [z] * N_COMPONENTS[bundle])

    @classmethod
    def scalar(cls, f: PolynomialScalar) -> "TensorFieldS3":
        return cls(Bundle.SCALAR, [f])

    @classmethod
    def one_form(cls, comps: Sequence[PolynomialScalar]) -> "TensorFieldS3":
        return cls(Bundle.ONE_FORM, comps)

    @classmethod
    def sym2(cls, comps: Sequence[PolynomialScalar]) -> "TensorFieldS3":
        return cls(Bundle.SYM2, comps)

    @classmethod
    def coframe(cls, i: int) -> "TensorFieldS3":
        comps = [PolynomialScalar.zero() for _ in range(3)]
        comps[i] = PolynomialScalar.constant(1.0)
        return cls(Bundle.ONE_FORM, comps)

    # -- basic algebra -------------------------------------------------

    def comp(self, *idx: int) -> PolynomialScalar:
        if self.bundle is Bundle.SCALAR:
            return self.components[0]
        if self.bundle is Bundle.ONE_FORM:
            (k,) = idx
            return self.components[k]
        a, b = idx
        return self.components[SYM_INDEX[(a, b)]]

    def __add__(self, other: "TensorFieldS3") -> "TensorFieldS3":
        if self.bundle is not other.bundle:
            raise BundleError("cannot add fields in different bundles")
        return TensorFieldS3(
            self.bundle, [a + b for a, b in zip(self.components, other.components)]
        )

    def __sub__(self, other: "TensorFieldS3") -> "TensorFieldS3":
        return self + (-1.0) * other

    def __rmul__(self, c: float) -> "TensorFieldS3":
        return TensorFieldS3(self.bundle, [c * f for f in self.components])

    def scalar_mul(self, f: PolynomialScalar) -> "TensorFieldS3":
        return TensorFieldS3(self.bundle, [f * g for g in self.components])

    def max_abs_coeff(self) -> float:
        return max(f.max_abs_coeff() for f in self.components)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Component values at (..., 4) points; shape (ncomp, ...)."""
        return np.stack([f.evaluate(points) for f in self.components])

    def sup_at(self, points: np.ndarray) -> float:
        """Sup over points of the frame-coefficient l2 norm."""
        vals = self.evaluate(points)
        if self.bundle is Bundle.SYM2:
            sq = np.einsum("c...,c->...", vals**2, SYM_WEIGHTS)
        else:
            sq = np.sum(vals**2, axis=0)
        return float(np.sqrt(np.max(sq))) if sq.size else 0.0

    # -- link-operator protocol (shared with the formal mode algebra) ---

    def lap(self) -> "TensorFieldS3":
        return rough_laplacian(self)

    def d(self) -> "TensorFieldS3":
        return exterior_d(self)

    def div(self) -> "TensorFieldS3":
        return divergence(self)

    def tr(self) -> "TensorFieldS3":
        return trace(self)

    def nabla_sym(self) -> "TensorFieldS3":
        return nabla_sym(self)

    def times_metric(self) -> "TensorFieldS3":
        return scalar_times_metric(self)


def round_metric() -> TensorFieldS3:
    """The round metric: identity coefficients in the orthonormal coframe."""
    one = PolynomialScalar.constant(1.0)
    z = PolynomialScalar.zero()
    return TensorFieldS3.sym2([one, one, one, z, z, z])


def covariant_derivative(T: TensorFieldS3, i: int) -> TensorFieldS3:
    """nabla_{X_i} T: frame derivative of coefficients plus rotation terms."""
    if i not in (0, 1, 2):
        raise ValueError(f"frame index must be 0, 1 or 2, got {i}")
    if T.bundle is Bundle.SCALAR:
        return TensorFieldS3.scalar(lie_derivative_scalar(T.comp(), i))
    if T.bundle is Bundle.ONE_FORM:
        comps = []
        for k in range(3):
            out = lie_derivative_scalar(T.comp(k), i)
            for j in range(3):
                s = PERMUTATION_SIGN[i, j, k]
                if s:
                    out = out - s * T.comp(j)
            comps.append(out)
        return TensorFieldS3.one_form(comps)
    comps = []
    for a, b in SYM_PAIRS:
        out = lie_derivative_scalar(T.comp(a, b), i)
        for k in range(3):
            s = PERMUTATION_SIGN[i, k, a]
            if s:
                out = out - s * T.comp(k, b)
            s = PERMUTATION_SIGN[i, k, b]
            if s:
                out = out - s * T.comp(a, k)
        comps.append(out)
    return TensorFieldS3.sym2(comps)


def rough_laplacian(T: TensorFieldS3) -> TensorFieldS3:
    """Connection Laplacian, nonnegative convention."""
    out = TensorFieldS3.zero(T.bundle)
    for i in range(3):
        out = out - covariant_derivative(covariant_derivative(T, i), i)
    return out


def exterior_d(phi: TensorFieldS3) -> TensorFieldS3:
    if phi.bundle is not Bundle.SCALAR:
        raise BundleError("exterior_d expects a scalar")
    f = phi.comp()
    return TensorFieldS3.one_form([lie_derivative_scalar(f, i) for i in range(3)])


def divergence(T: TensorFieldS3) -> TensorFieldS3:
    """Positive divergence of a 1-form (scalar) or symmetric 2-tensor (1-form)."""
    if T.bundle is Bundle.ONE_FORM:
        out = PolynomialScalar.zero()
        for i in range(3):
            out = out + lie_derivative_scalar(T.comp(i), i)
        return TensorFieldS3.scalar(out)
    if T.bundle is Bundle.SYM2:
        comps = []
        for b in range(3):
            out = PolynomialScalar.zero()
            for a in range(3):
                out = out + covariant_derivative(T, a).comp(a, b)
            comps.append(out)
        return TensorFieldS3.one_form(comps)
    raise BundleError("divergence expects a 1-form or symmetric 2-tensor")


def trace(B: TensorFieldS3) -> TensorFieldS3:
    if B.bundle is not Bundle.SYM2:
        raise BundleError("trace expects a symmetric 2-tensor")
    return TensorFieldS3.scalar(B.comp(0, 0) + B.comp(1, 1) + B.comp(2, 2))


def nabla_sym(tau: TensorFieldS3) -> TensorFieldS3:
    """Symmetrized covariant derivative; equals the metric's Lie derivative."""
    if tau.bundle is not Bundle.ONE_FORM:
        raise BundleError("nabla_sym expects a 1-form")
    grads = [covariant_derivative(tau, a) for a in range(3)]
    return TensorFieldS3.sym2([grads[a].comp(b) + grads[b].comp(a) for a, b in SYM_PAIRS])


def lie_metric(tau: TensorFieldS3) -> TensorFieldS3:
    """Lie derivative of the round metric along the dual vector field."""
    return nabla_sym(tau)


def scalar_times_metric(phi: TensorFieldS3) -> TensorFieldS3:
    if phi.bundle is not Bundle.SCALAR:
        raise BundleError("scalar_times_metric expects a scalar")
    f = phi.comp()
    z = PolynomialScalar.zero()
    return TensorFieldS3.sym2([f, f, f, z, z, z])


def trace_free_part(B: TensorFieldS3) -> TensorFieldS3:
    return B - (1.0 / 3.0) * scalar_times_metric(trace(B))


def inner_product(S: TensorFieldS3, T: TensorFieldS3, rule: QuadratureRule) -> float:
    """Quadrature inner product of the frame coefficients.

    The frame is orthonormal, so this is the metric inner product; stored
    off-diagonal components count twice.
    """
    if S.bundle is not T.bundle:
        raise BundleError("inner product needs matching bundles")
    total = PolynomialScalar.zero()
    if S.bundle is Bundle.SYM2:
        for n, w in enumerate(SYM_WEIGHTS):
            total = total + w * (S.components[n] * T.components[n])
    else:
        for a, b in zip(S.components, T.components):
            total = total + a * b
    from .su2 import integrate

    return integrate(total, rule)


# ---------------------------------------------------------------------------
# Commutation identities on the round sphere
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityResidual:
    name: str
    residual: float
    field_scale: float
    n_fields: int


def _scalar_basis(cap: int) -> List[TensorFieldS3]:
    return [TensorFieldS3.scalar(PolynomialScalar.monomial(e)) for e in monomials_up_to(cap)]


def _one_form_basis(cap: int) -> List[TensorFieldS3]:
    out = []
    for e in monomials_up_to(cap):
        f = PolynomialScalar.monomial(e)
        z = PolynomialScalar.zero()
        for k in range(3):
            comps = [z, z, z]
            comps = list(comps)
            comps[k] = f
            out.append(TensorFieldS3.one_form(comps))
    return out


def _sym2_basis(cap: int) -> List[TensorFieldS3]:
    out = []
    z = PolynomialScalar.zero()
    for e in monomials_up_to(cap):
        f = PolynomialScalar.monomial(e)
        for n in range(6):
            comps = [z] * 6
            comps[n] = f
            out.append(TensorFieldS3.sym2(comps))
    return out


def _identity_cases(cap: int):
    """The eight first/second-order commutation identities, as (name, basis, lhs, rhs)."""
    g = round_metric()

    def d_of(phi):
        return exterior_d(phi)

    cases = [
        (
            "d_lap_scalar",
            _scalar_basis(cap),
            lambda p: exterior_d(rough_laplacian(p)),
            lambda p: rough_laplacian(exterior_d(p)) + 2.0 * exterior_d(p),
        ),
        (
            "div_lap_d_scalar",
            _scalar_basis(cap),
            lambda p: divergence(rough_laplacian(exterior_d(p))),
            lambda p: (-1.0) * rough_laplacian(rough_laplacian(p)) + 2.0 * rough_laplacian(p),
        ),
        (
            "div_lap_one_form",
            _one_form_basis(cap),
            lambda a: divergence(rough_laplacian(a)),
            lambda a: rough_laplacian(divergence(a)) - 2.0 * divergence(a),
        ),
        (
            "div_bilap_one_form",
            _one_form_basis(cap),
            lambda a: divergence(rough_laplacian(rough_laplacian(a))),
            lambda a: rough_laplacian(rough_laplacian(divergence(a)))
            - 4.0 * rough_laplacian(divergence(a))
            + 4.0 * divergence(a),
        ),
        (
            "div_lie_metric",
            _one_form_basis(cap),
            lambda a: divergence(lie_metric(a)),
            lambda a: (-1.0) * rough_laplacian(a) + exterior_d(divergence(a)) + 2.0 * a,
        ),
        (
            "lie_metric_lap",
            _one_form_basis(cap),
            lambda t: lie_metric(rough_laplacian(t)),
            lambda t: rough_laplacian(lie_metric(t))
            + 4.0 * lie_metric(t)
            - 4.0 * scalar_times_metric(divergence(t)),
        ),
        (
            "div_lap_sym2",
            _sym2_basis(cap),
            lambda b: divergence(rough_laplacian(b)),
            lambda b: rough_laplacian(divergence(b))
            - 4.0 * divergence(b)
            + 2.0 * exterior_d(trace(b)),
        ),
        (
            "div_bilap_sym2_tracefree",
            [trace_free_part(b) for b in _sym2_basis(cap)],
            lambda b: divergence(rough_laplacian(rough_laplacian(b))),
            lambda b: rough_laplacian(rough_laplacian(divergence(b)))
            - 8.0 * rough_laplacian(divergence(b))
            + 16.0 * divergence(b),
        ),
    ]
    return cases


def verify_appendix_identities(
    degree_cap: int = 4, points: np.ndarray | None = None
) -> List[IdentityResidual]:
    """Residuals of the eight commutation identities over a polynomial basis.

    For each identity the residual is the sup over sample points of the
    frame-coefficient norm of LHS - RHS, maximized over all basis fields of
    ambient degree <= degree_cap.
    """
    if degree_cap < 2:
        raise ValueError("degree cap must be at least 2")
    if points is None:
        points = QuadratureRule.hopf(8).points
    out = []
    for name, basis, lhs, rhs in _identity_cases(degree_cap):
        worst = 0.0
        scale = 0.0
        for fld in basis:
            res = lhs(fld) - rhs(fld)
            worst = max(worst, res.sup_at(points))
            scale = max(scale, lhs(fld).sup_at(points))
        out.append(IdentityResidual(name, worst, scale, len(basis)))
    return out


def fit_lie_metric_lap_constant(degree_cap: int = 2) -> float:
    """Least-squares fit of c in:  L_{lap tau} g = lap L_tau g + 4 L_tau g - c div(tau) g.

    Resolves the one coefficient of the identity suite that the source
    derivation leaves ambiguous; the fit is exact because the identity holds
    identically in c for divergence-free inputs.
    """
    rule = QuadratureRule.hopf(max(8, 2 * degree_cap + 2))
    num = 0.0
    den = 0.0
    for tau in _one_form_basis(degree_cap):
        base = (
            lie_metric(rough_laplacian(tau))
            - rough_laplacian(lie_metric(tau))
            - 4.0 * lie_metric(tau)
        )
        direction = (-1.0) * scalar_times_metric(divergence(tau))
        num += inner_product(base, direction, rule)
        den += inner_product(direction, direction, rule)
    return num / den if den else float("nan")


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------


class Constraint(enum.Enum):
    NONE = "none"
    DIV_FREE = "divergence-free"
    TT = "trace-free-divergence-free"


@dataclass(frozen=True)
class SpectrumReport:
    bundle: Bundle
    constraint: Constraint
    degree_cap: int
    pairs: Tuple[Tuple[float, int], ...]

    def eigenvalues(self) -> List[float]:
        return [ev for ev, _ in self.pairs]

    def to_dict(self) -> dict:
        return {
            "bundle": self.bundle.value,
            "constraint": self.constraint.value,
            "degree_cap": self.degree_cap,
            "pairs": [[ev, m] for ev, m in self.pairs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _basis_fields(bundle: Bundle, cap: int) -> List[TensorFieldS3]:
    if bundle is Bundle.SCALAR:
        return _scalar_basis(cap)
    if bundle is Bundle.ONE_FORM:
        return _one_form_basis(cap)
    return _sym2_basis(cap)


def _component_weights(bundle: Bundle) -> np.ndarray:
    if bundle is Bundle.SYM2:
        return SYM_WEIGHTS
    return np.ones(N_COMPONENTS[bundle])


def _coeff_matrix(fields: Sequence[TensorFieldS3], mono_index: dict) -> np.ndarray:
    """Stack fields as coefficient arrays of shape (nfields, ncomp, nmono)."""
    nb = len(fields)
    ncomp = N_COMPONENTS[fields[0].bundle]
    out = np.zeros((nb, ncomp, len(mono_index)))
    for n, fld in enumerate(fields):
        for c, poly in enumerate(fld.components):
            for expo, v in poly.coeffs.items():
                out[n, c, mono_index[expo]] = v
    return out


def _gram(coeffs: np.ndarray, weights: np.ndarray, mono_gram: np.ndarray) -> np.ndarray:
    return np.einsum("acm,c,mn,bcn->ab", coeffs, weights, mono_gram, coeffs)


@dataclass(frozen=True)
class SpectrumResult:
    report: SpectrumReport
    eigenvalues_raw: np.ndarray
    eigenfields: List[TensorFieldS3]


def spectrum(
    bundle: Bundle,
    constraint: Constraint,
    degree_cap: int,
    rule: QuadratureRule | None = None,
    rank_tol: float = 1e-9,
    cluster_tol: float = 1e-6,
    want_fields: bool = False,
) -> SpectrumReport | SpectrumResult:
    """Spectrum of the rough Laplacian on polynomial-coefficient fields.

    The space of fields with coefficients of ambient degree <= degree_cap is
    invariant under the operator, so the discretization error is pure
    rounding.  Constraint subspaces are cut out by singular-value
    thresholding of the constraint operator in an orthonormal basis.
    """
    if degree_cap < 1:
        raise ValueError("degree cap must be >= 1")
    if rule is None:
        rule = QuadratureRule.hopf(max(16, 2 * degree_cap))
    if rule.exactness_degree < 2 * degree_cap:
        raise DegreeError(
            f"rule exactness {rule.exactness_degree} cannot integrate products "
            f"of degree-{degree_cap} fields"
        )

    monos = monomials_up_to(degree_cap)
    mono_index = {e: n for n, e in enumerate(monos)}
    vals = np.stack(
        [PolynomialScalar.monomial(e).evaluate(rule.points) for e in monos]
    )
    mono_gram = (vals * rule.weights) @ vals.T

    fields = _basis_fields(bundle, degree_cap)
    C = _coeff_matrix(fields, mono_index)
    w = _component_weights(bundle)
    G = _gram(C, w, mono_gram)

    lam, U = np.linalg.eigh(G)
    keep = lam > rank_tol * lam[-1]
    B = U[:, keep] / np.sqrt(lam[keep])  # orthonormalizing map

    Lc = _coeff_matrix([rough_laplacian(f) for f in fields], mono_index)
    M0 = np.einsum("acm,c,mn,bcn->ab", C, w, mono_gram, Lc)
    M = B.T @ M0 @ B
    M = 0.5 * (M + M.T)

    K = np.eye(B.shape[1])
    if constraint is not Constraint.NONE:
        rows = []
        div_fields = [divergence(f) for f in fields]
        rows.append(
            (
                _coeff_matrix(div_fields, mono_index),
                _component_weights(div_fields[0].bundle),
            )
        )
        if constraint is Constraint.TT:
            tr_fields = [trace(f) for f in fields]
            rows.append(
                (
                    _coeff_matrix(tr_fields, mono_index),
                    _component_weights(Bundle.SCALAR),
                )
            )
        # Gram of the constraint images of the orthonormal basis
        Q = np.zeros((B.shape[1], B.shape[1]))
        for Cc, wc in rows:
            Q += B.T @ _gram(Cc, wc, mono_gram) @ B
        mu, V = np.linalg.eigh(0.5 * (Q + Q.T))
        scale = max(mu[-1], 1.0)
        null = mu < rank_tol * scale
        K = V[:, null]
        M = K.T @ M @ K
        M = 0.5 * (M + M.T)

    evals = np.linalg.eigvalsh(M)
    pairs = _cluster(evals, cluster_tol)
    report = SpectrumReport(bundle, constraint, degree_cap, tuple(pairs))
    if not want_fields:
        return report

    _, vecs = np.linalg.eigh(M)
    full = B @ (K @ vecs)
    eigenfields = []
    for col in full.T:
        acc = TensorFieldS3.zero(bundle)
        for coef, fld in zip(col, fields):
            if coef != 0.0:
                acc = acc + float(coef) * fld
        eigenfields.append(acc)
    return SpectrumResult(report, evals, eigenfields)


def _cluster(evals: np.ndarray, tol: float) -> List[Tuple[float, int]]:
    pairs: List[Tuple[float, int]] = []
    group: List[float] = []
    for ev in evals:
        if group and abs(ev - group[-1]) > tol:
            pairs.append((float(np.mean(group)), len(group)))
            group = []
        group.append(float(ev))
    if group:
        pairs.append((float(np.mean(group)), len(group)))
    return pairs


def function_eigenvalue(j: int) -> int:
    """Laplacian eigenvalue on functions for the degree-j harmonic shell."""
    return j * (j + 2)


def one_form_eigenvalue_reference(j: int) -> int:
    """The reference list (j+1)(j+3) this artifact reports its 1-form spectrum against."""
    return (j + 1) * (j + 3)
