"""Twisted differential calculus and conformal classification.

Core objects: for a closed one-form ``omega`` (the Lee form), the twisted
differential ``d_omega a = d a - omega ^ a`` squares to zero exactly when
``omega`` is closed; the conformal action rescales a form by ``e^f`` while
shifting the Lee form by ``df``; period lattices of Lee forms over loop
families are finitely generated subgroups of the reals; and maps between
structures are classified as strict / conformal / neither by comparing
pulled-back Lee forms up to exact terms.

Lattice bookkeeping uses no LLL-style machinery: pairwise commensurability
is detected through continued-fraction convergents (honouring a large
coefficient bound), and relations among three or more generators through
bounded exhaustive enumeration with a much smaller default bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from . import forms, numeric, symexpr as sx
from .forms import (
    ANGULAR,
    CoordinateDomain,
    DifferentialForm,
    SmoothMap,
    VectorField,
    ext_d,
    form_is_zero,
    pullback,
    wedge,
)
from .symexpr import Expr, ZeroCheck


class TwistedError(Exception):
    """Base class for twisted-calculus errors."""


class NotConformalError(TwistedError):
    """No Lee form reproduces d(phi) within tolerance.

    Attributes:
        residual: best residual achieved.
        point: worst sample point.
    """

    def __init__(self, message: str, residual: float, point=None):
        super().__init__(message)
        self.residual = residual
        self.point = point


class ExtractionRankError(TwistedError):
    """The wedge-with-phi map on one-forms is rank deficient at a sample."""


class LoopError(TwistedError):
    """A supplied loop is not closed in its target domain."""


# ---------------------------------------------------------------------------
# twisted differential and conformal action


def d_twisted(omega: DifferentialForm, a: DifferentialForm) -> DifferentialForm:
    """Twisted exterior derivative d a - omega ^ a."""
    if omega.degree != 1:
        raise forms.DegreeError("the twisting form must be a one-form")
    forms._check_domains(omega.domain, a.domain)
    return ext_d(a) - wedge(omega, a)


def conformal_rescale(
    f: "Expr | DifferentialForm", a: DifferentialForm, omega: DifferentialForm
) -> tuple[DifferentialForm, DifferentialForm]:
    """Apply the conformal action: ``a -> e^f a``, ``omega -> omega + df``.

    Returns the rescaled form and the shifted Lee form.  The defining
    property (certified in tests, not here): ``d_{omega+df}(e^f a) =
    e^f d_omega(a)``.
    """
    if isinstance(f, DifferentialForm):
        if f.degree != 0:
            raise forms.DegreeError("scaling exponent must be a function")
        f = f.coefficient(())
    scale = sx.exp(f)
    new_a = a.scaled(scale)
    df = ext_d(forms.function_form(a.domain, f))
    return new_a, omega + df


def twisted_pullback(F: SmoothMap, f: "Expr | float", beta: DifferentialForm) -> DifferentialForm:
    """Conformally corrected pullback ``e^{-f} F* beta``.

    With ``f`` the scaling function satisfying ``F* omega' - omega = df``,
    this operation intertwines the twisted differentials of target and
    source (see the certificate helper below).
    """
    return pullback(F, beta).scaled(sx.exp(sx.neg(sx.as_expr(f))))


def twisted_naturality_residual(
    F: SmoothMap,
    f: "Expr | float",
    beta: DifferentialForm,
    omega_source: DifferentialForm,
    omega_target: DifferentialForm,
    samples: int = 200,
    tol: float = 1e-9,
    seed: int = 0,
) -> ZeroCheck:
    """Residual of ``d_omega(e^{-f} F* beta) = e^{-f} F* (d_omega' beta)``."""
    lhs = d_twisted(omega_source, twisted_pullback(F, f, beta))
    rhs = twisted_pullback(F, f, d_twisted(omega_target, beta))
    return form_is_zero(lhs - rhs, samples, tol, seed)


# ---------------------------------------------------------------------------
# Lee form extraction


@dataclass(frozen=True)
class LatticeData:
    """Finitely generated subgroup of the reals spanned by loop periods."""

    periods: tuple[float, ...]
    rank: int
    basis: tuple[float, ...]
    integral: bool
    relation_bound: int

    def contains(self, value: float, tol: float = 1e-8, bound: int = 200) -> bool:
        """Whether ``value`` lies in the span within ``tol`` (bounded search)."""
        return _in_span(value, self.basis, tol, bound)


@dataclass(frozen=True)
class LeeData:
    """Outcome of Lee form extraction.

    ``omega`` is symbolic when an ansatz basis was supplied, otherwise None
    and ``sample_values`` holds the pointwise least-squares solutions (one
    row per sample, columns in coordinate order).
    """

    omega: DifferentialForm | None
    fit_residual: float
    closedness_residual: float | None
    lattice: LatticeData | None = None
    sample_values: np.ndarray | None = None


def _triple_matrix(phi_vals: dict[tuple[int, int], float], dim: int) -> tuple[np.ndarray, list]:
    """Matrix of ``nu -> nu ^ phi`` on one-forms at a point (rows = triples)."""
    triples = list(itertools.combinations(range(dim), 3))
    A = np.zeros((len(triples), dim))
    for row, (a, b, c) in enumerate(triples):
        A[row, a] += phi_vals.get((b, c), 0.0)
        A[row, b] -= phi_vals.get((a, c), 0.0)
        A[row, c] += phi_vals.get((a, b), 0.0)
    return A, triples


def extract_lee(
    phi: DifferentialForm,
    samples: int = 100,
    seed: int = 0,
    ansatz: Sequence[DifferentialForm] | None = None,
    tol: float = 1e-8,
    rank_threshold: float = 1e-10,
) -> LeeData:
    """Recover the Lee form of a nondegenerate two-form from d(phi) = omega ^ phi.

    Pointwise route (no ansatz): least squares for ``omega`` at each sample;
    requires the wedge map to have full rank there.  Ansatz route: fit
    constant coefficients over ``span(ansatz)`` by stacked least squares,
    then certify the identity symbolically on fresh samples; the closedness
    residual of the fitted form is reported as well.

    Raises :class:`NotConformalError` when no candidate fits within ``tol``
    and :class:`ExtractionRankError` on wedge-rank deficiency.
    """
    if phi.degree != 2:
        raise forms.DegreeError("Lee extraction expects a two-form")
    dim = phi.domain.dim
    if dim < 4:
        raise forms.DegreeError("Lee extraction needs at least four dimensions")
    env = phi.domain.sample_points(samples, seed)
    dphi = ext_d(phi)
    phi_vals = forms.evaluate_form(phi, env)
    dphi_vals = forms.evaluate_form(dphi, env)
    triples = list(itertools.combinations(range(dim), 3))
    n_tri = len(triples)

    def point_system(i: int) -> tuple[np.ndarray, np.ndarray]:
        pv = {idx: float(np.atleast_1d(v)[i % np.atleast_1d(v).size]) for idx, v in phi_vals.items()}
        A, _ = _triple_matrix(pv, dim)
        b = np.zeros(n_tri)
        for row, T in enumerate(triples):
            v = dphi_vals.get(T)
            if v is not None:
                b[row] = float(np.atleast_1d(v)[i % np.atleast_1d(v).size])
        return A, b

    if ansatz is None:
        values = np.zeros((samples, dim))
        worst = 0.0
        worst_point: dict[str, float] = {}
        for i in range(samples):
            A, b = point_system(i)
            if numeric.numerical_rank(A, rank_threshold) < dim:
                raise ExtractionRankError(
                    f"wedge map with the two-form is rank deficient at sample {i}"
                )
            nu, *_ = np.linalg.lstsq(A, b, rcond=None)
            r = float(np.max(np.abs(A @ nu - b))) if n_tri else 0.0
            values[i] = nu
            if r > worst:
                worst = r
                worst_point = {k: float(np.atleast_1d(v)[i]) for k, v in env.items()}
        if worst > tol:
            raise NotConformalError(
                f"no pointwise Lee form fits d(phi) (residual {worst:.3g} > {tol:g})",
                worst, worst_point,
            )
        return LeeData(None, worst, None, sample_values=values)

    # ansatz route: constant coefficients on a user-supplied basis
    basis = list(ansatz)
    cols = []
    for beta in basis:
        wb = wedge(beta, phi)
        wb_vals = forms.evaluate_form(wb, env)
        col = np.zeros(samples * n_tri)
        for row, T in enumerate(triples):
            v = wb_vals.get(T)
            if v is not None:
                col[row::n_tri] = np.broadcast_to(np.atleast_1d(v), (samples,))
        cols.append(col)
    rhs = np.zeros(samples * n_tri)
    for row, T in enumerate(triples):
        v = dphi_vals.get(T)
        if v is not None:
            rhs[row::n_tri] = np.broadcast_to(np.atleast_1d(v), (samples,))
    A = np.column_stack(cols) if cols else np.zeros((samples * n_tri, 0))
    coeffs, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    omega = forms.zero_form(phi.domain, 1)
    for c, beta in zip(coeffs, basis):
        omega = omega + beta.scaled(sx.Const(float(c)))
    check = form_is_zero(ext_d(phi) - wedge(omega, phi), samples, tol, seed + 1)
    if not check.passed:
        raise NotConformalError(
            f"ansatz fit does not reproduce d(phi) (residual {check.max_residual:.3g})",
            check.max_residual, check.worst_point,
        )
    closed = form_is_zero(ext_d(omega), samples, tol, seed + 2)
    return LeeData(omega, check.max_residual, closed.max_residual)


# ---------------------------------------------------------------------------
# periods and lattices


def loop_closure_residual(loop: SmoothMap) -> float:
    """Max endpoint gap of a loop parametrised on [0, 1] (angular-aware)."""
    if loop.source.dim != 1:
        raise LoopError("loops must have a one-dimensional source")
    src = loop.source.coords[0]
    if src.kind == ANGULAR:
        lo, hi = 0.0, 1.0
    else:
        lo, hi = src.lower, src.upper
    start = forms.evaluate_map(loop, {src.name: np.array([lo])})
    end = forms.evaluate_map(loop, {src.name: np.array([hi])})
    worst = 0.0
    for coord in loop.target.coords:
        a, b = float(start[coord.name][0]), float(end[coord.name][0])
        gap = abs(a - b)
        if coord.kind == ANGULAR:
            gap = min(gap % 1.0, 1.0 - gap % 1.0)
        worst = max(worst, gap)
    return worst


def period(
    omega: DifferentialForm,
    loop: SmoothMap,
    quad_tol: float = 1e-11,
    closure_tol: float = 1e-9,
) -> float:
    """Integral of a one-form over a loop via adaptive quadrature."""
    if omega.degree != 1:
        raise forms.DegreeError("periods are defined for one-forms")
    gap = loop_closure_residual(loop)
    if gap > closure_tol:
        raise LoopError(f"loop endpoints differ by {gap:.3g} (> {closure_tol:g})")
    pulled = pullback(loop, omega)
    src = loop.source.coords[0]
    lo, hi = (0.0, 1.0) if src.kind == ANGULAR else (src.lower, src.upper)
    coeff = pulled.coefficient((0,))
    if sx.is_structural_zero(coeff):
        return 0.0

    def integrand(t: float) -> float:
        return float(sx.evaluate(coeff, {src.name: t}))

    value, err = quad(integrand, lo, hi, epsabs=quad_tol, epsrel=quad_tol, limit=200)
    return float(value)


def _cf_relation(x: float, y: float, max_coeff: int, tol: float) -> tuple[int, int] | None:
    """Integers (a, b) with a x + b y ~ 0, found via convergents of x/y.

    Acceptance uses a fixed absolute tolerance (scaled only by the period
    magnitudes, never by the coefficient size); with the default bound of
    a million this keeps genuinely irrational ratios — whose best rational
    approximations p/q only close in like 1/q^2 — from being misread as
    rational within the bound.
    """
    if abs(y) < 1e-300:
        return None
    r = x / y
    h_prev, h = 1, int(math.floor(r))
    k_prev, k = 0, 1
    frac = r - math.floor(r)
    scale = max(abs(x), abs(y), 1.0)
    for _ in range(64):
        if abs(k * x - h * y) < tol * scale:
            if abs(h) <= max_coeff and abs(k) <= max_coeff:
                return k, -h
            return None
        if frac < 1e-18:
            break
        q = int(math.floor(1.0 / frac))
        frac = 1.0 / frac - q
        h_prev, h = h, q * h + h_prev
        k_prev, k = k, q * k + k_prev
        if k > max_coeff:
            break
    return None


def _float_gcd(values: Sequence[float], tol: float) -> float:
    """Tolerant Euclidean gcd of commensurable reals."""
    g = 0.0
    for v in values:
        a, b = abs(g), abs(v)
        while b > tol:
            a, b = b, a % b
            if b > tol and b < a * 1e-14:
                break
        g = a if a > tol else b
    return g


def _in_span(value: float, basis: Sequence[float], tol: float, bound: int) -> bool:
    """Bounded test for membership of ``value`` in the integer span of basis.

    For two or more generators the coefficient grid is capped at about
    five million combinations; the effective bound shrinks accordingly.
    """
    if abs(value) <= tol:
        return True
    basis = [b for b in basis if abs(b) > tol]
    if not basis:
        return False
    if len(basis) == 1:
        k = round(value / basis[0])
        return abs(k) <= bound and abs(value - k * basis[0]) <= tol
    r = len(basis)
    eff = min(bound, max(1, int(5e6 ** (1.0 / r) / 2)))
    grids = np.meshgrid(*[np.arange(-eff, eff + 1)] * r, indexing="ij", sparse=True)
    combo = sum(g * b for g, b in zip(grids, basis))
    return bool(np.any(np.abs(combo - value) <= tol))


def lattice_from_periods(
    periods: Sequence[float],
    tol: float = 1e-8,
    max_coeff: int = 10**6,
    relation_bound: int = 40,
) -> LatticeData:
    """Generate the subgroup of the reals spanned by the given periods.

    Pairwise commensurability is decided with continued-fraction
    convergents honouring ``max_coeff``; residual relations among three or
    more pairwise-incommensurable generators are searched exhaustively with
    coefficients bounded by ``relation_bound`` (an intentionally small
    default — raise it per call when needed; no LLL reduction is used).
    """
    ps = [float(p) for p in periods]
    nonzero = [p for p in ps if abs(p) > tol]
    groups: list[list[float]] = []
    for p in nonzero:
        placed = False
        for g in groups:
            if _cf_relation(p, g[0], max_coeff, tol):
                g.append(p)
                placed = True
                break
        if not placed:
            groups.append([p])
    gens = sorted((abs(_float_gcd(g, tol)) for g in groups), reverse=True)
    # cross-group relations (e.g. 1, sqrt2, 1+sqrt2) by bounded enumeration
    if 2 <= len(gens) <= 4:
        changed = True
        while changed and len(gens) >= 2:
            changed = False
            for i, g in enumerate(gens):
                others = gens[:i] + gens[i + 1 :]
                if _in_span(g, others, tol, relation_bound):
                    gens = others
                    changed = True
                    break
    basis = tuple(sorted(gens))
    integral = all(abs(p - round(p)) <= tol for p in ps)
    return LatticeData(tuple(ps), len(basis), basis, integral, relation_bound)


def period_lattice(
    omega: DifferentialForm,
    loops: Sequence[SmoothMap],
    tol: float = 1e-8,
    max_coeff: int = 10**6,
    relation_bound: int = 40,
    quad_tol: float = 1e-11,
) -> LatticeData:
    """Period lattice of a closed one-form over a family of loops."""
    ps = [period(omega, loop, quad_tol=quad_tol) for loop in loops]
    return lattice_from_periods(ps, tol, max_coeff, relation_bound)


def lattices_equal(a: LatticeData, b: LatticeData, tol: float = 1e-8, bound: int = 200) -> bool:
    """Mutual inclusion of two lattices (bounded coefficient search)."""
    if a.rank != b.rank:
        return False
    return all(_in_span(g, b.basis, tol, bound) for g in a.basis) and all(
        _in_span(g, a.basis, tol, bound) for g in b.basis
    )


# ---------------------------------------------------------------------------
# morphism classification


@dataclass(frozen=True)
class MorphismReport:
    """Conformal classification of a map between twisted structures.

    ``strict``: pulled-back Lee form equals the source Lee form pointwise.
    ``conformal``: the difference is exact (closed with vanishing periods).
    ``full``: the two period lattices agree as subgroups of the reals.
    ``rank_decrease``: target lattice rank minus source lattice rank.
    """

    strict: bool
    strict_residual: float
    conformal: bool
    conformal_closed_residual: float
    conformal_period_residual: float
    full: bool
    rank_source: int
    rank_target: int
    rank_decrease: int
    source_lattice: LatticeData
    target_lattice: LatticeData


def classify_morphism(
    F: SmoothMap,
    lee_source: DifferentialForm,
    lee_target: DifferentialForm,
    source_loops: Sequence[SmoothMap],
    target_loops: Sequence[SmoothMap],
    samples: int = 200,
    tol: float = 1e-8,
    seed: int = 0,
    relation_bound: int = 40,
) -> MorphismReport:
    """Classify ``F`` against source/target Lee forms.

    The strict residual compares ``F* omega'`` with ``omega`` at samples;
    the conformal test checks the difference is exact (symbolically closed,
    periods over the source loops below tolerance); fullness compares the
    period lattices of both Lee forms over the supplied loop families.
    """
    delta = pullback(F, lee_target) - lee_source
    strict_check = form_is_zero(delta, samples, tol, seed)
    closed_check = form_is_zero(ext_d(delta), samples, tol, seed + 1)
    period_residual = 0.0
    for loop in source_loops:
        period_residual = max(period_residual, abs(period(delta, loop)))
    conformal = closed_check.passed and period_residual <= tol
    src_lat = period_lattice(lee_source, source_loops, tol=tol, relation_bound=relation_bound)
    tgt_lat = period_lattice(lee_target, target_loops, tol=tol, relation_bound=relation_bound)
    return MorphismReport(
        strict=strict_check.passed,
        strict_residual=strict_check.max_residual,
        conformal=conformal,
        conformal_closed_residual=closed_check.max_residual,
        conformal_period_residual=period_residual,
        full=lattices_equal(src_lat, tgt_lat, tol),
        rank_source=src_lat.rank,
        rank_target=tgt_lat.rank,
        rank_decrease=tgt_lat.rank - src_lat.rank,
        source_lattice=src_lat,
        target_lattice=tgt_lat,
    )


# ---------------------------------------------------------------------------
# scaling potential recovery


def scaling_potential(
    delta: DifferentialForm,
    basepoint: dict[str, float],
    points: Sequence[dict[str, float]],
    quad_tol: float = 1e-11,
) -> np.ndarray:
    """Integrate an exact one-form from a basepoint along straight segments.

    Returns potential values f with df = delta and f(basepoint) = 0,
    working in unwrapped coordinates (the segment stays inside the chart
    in all intended uses).  The potential is unique up to the additive
    constant fixed by the basepoint.
    """
    if delta.degree != 1:
        raise forms.DegreeError("potential recovery expects a one-form")
    names = delta.domain.names
    x0 = np.array([float(basepoint[n]) for n in names])
    out = np.zeros(len(points))
    for i, pt in enumerate(points):
        x1 = np.array([float(pt[n]) for n in names])
        direction = x1 - x0

        def integrand(t: float) -> float:
            env = {n: float(v) for n, v in zip(names, x0 + t * direction)}
            total = 0.0
            for (j,), c in delta.coeffs.items():
                total += float(sx.evaluate(c, env)) * direction[j]
            return total

        val, _ = quad(integrand, 0.0, 1.0, epsabs=quad_tol, epsrel=quad_tol, limit=200)
        out[i] = val
    return out
