"""Strong reducibility of twisted structures and the universal reduction chain.

A *reducible datum* is a coisotropic-style package: an ambient chart carrying
a first-kind twisted structure, a submanifold given by a parametrization, a
quotient map onto a reduced chart, and the reduced structure itself.  The
verifier certifies, at seeded samples, that

* both structure fields are tangent to the submanifold,
* the intersection of the kernels of the restricted Lee form, restricted
  potential and its exterior derivative has constant rank (the candidate
  foliation distribution),
* the quotient's differential kernel coincides with that distribution, and
* the quotient pulls the reduced potential / Lee form / two-form back to the
  restrictions of the ambient ones.

The rank of the kernel of the restricted two-form is computed alongside and
*reported* against the distribution rank; agreement is recorded, never
assumed, since the two need not coincide in general.

On top of the verifier, :func:`run_reduction_chain` builds the four-stage
enlargement of a compatible chart — cotangent-torus extension, jet-space
extension, a shear normalization, and transplantation into the universal
cotangent model over a torus times Euclidean space — certifying each stage as
a reducible datum whose reduction recovers the previous stage, and checking
that composing the first two reductions agrees with a single direct
reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import forms, models, numeric, twisted
from . import symexpr as sx
from .forms import (
    ANGULAR,
    LINEAR,
    Coordinate,
    CoordinateDomain,
    DifferentialForm,
    SmoothMap,
    VectorField,
    basis_vector,
    ext_d,
    forms_equal,
    function_form,
    identity_map,
    interior,
    pullback,
    zero_form,
)
from .models import StructureChart
from .twisted import d_twisted


class ReductionError(Exception):
    """A reducibility certification or chain construction failed."""


class NonConstantRankError(ReductionError):
    """The candidate foliation distribution has varying rank across samples.

    Attributes:
        witnesses: two (point, rank) pairs exhibiting different ranks.
    """

    def __init__(self, message: str, witnesses):
        super().__init__(message)
        self.witnesses = tuple(witnesses)


class DecompositionError(ReductionError):
    """A declared Lee-form decomposition failed certification."""


# ---------------------------------------------------------------------------
# reducible data and the strong-reducibility verifier


@dataclass(frozen=True)
class ReducibleData:
    """Submanifold-plus-quotient package inside an ambient twisted chart.

    Attributes:
        name: label used in reports.
        ambient: chart carrying the ambient structure (fields included).
        submanifold: parametrization of the submanifold into the ambient
            domain.
        quotient: map from the submanifold's parameter domain onto the
            reduced domain; either a symbolic map or a numeric point map
            (for flow-defined quotients).
        reduced: chart carrying the expected reduced structure.
    """

    name: str
    ambient: StructureChart
    submanifold: SmoothMap
    quotient: "SmoothMap | numeric.PointMap"
    reduced: StructureChart

    def __post_init__(self):
        if self.submanifold.target != self.ambient.domain:
            raise ReductionError(
                f"submanifold of {self.name!r} maps into {self.submanifold.target.name!r}, "
                f"not the ambient domain {self.ambient.domain.name!r}"
            )
        if self.quotient.source != self.submanifold.source:
            raise ReductionError(
                f"quotient of {self.name!r} is not defined on the submanifold domain"
            )
        if self.quotient.target != self.reduced.domain:
            raise ReductionError(
                f"quotient of {self.name!r} maps into {self.quotient.target.name!r}, "
                f"not the reduced domain {self.reduced.domain.name!r}"
            )
        if self.ambient.alpha is None or self.ambient.b_field is None or self.ambient.anti_lee is None:
            raise ReductionError(f"ambient chart of {self.name!r} lacks potential or structure fields")
        if self.reduced.alpha is None:
            raise ReductionError(f"reduced chart of {self.name!r} lacks a potential")


@dataclass(frozen=True)
class StrongReducibilityReport:
    """Sampled certification of one reducible datum.

    ``distribution_rank`` is the (constant) dimension of the candidate
    foliation distribution; ``two_form_kernel_rank`` is the minimum kernel
    dimension of the restricted two-form, and ``kernel_ranks_agree`` records
    whether the two coincided at every sample — an observation, not an
    assumption.  ``pullback_residuals`` holds (label, max residual) pairs for
    the potential, the Lee form and the two-form.
    """

    name: str
    b_tangency: float
    e_tangency: float
    distribution_rank: int
    two_form_kernel_rank: int
    kernel_ranks_agree: bool
    quotient_kernel_gap: float
    pullback_residuals: tuple[tuple[str, float], ...]
    samples_used: int
    samples_skipped: int
    tol: float
    pullback_tol: float
    gap_tol: float
    passed: bool

    def worst_pullback(self) -> float:
        return max((r for _, r in self.pullback_residuals), default=0.0)


def _batched(e: sx.Expr, env, n: int) -> np.ndarray:
    vals = np.atleast_1d(np.asarray(sx.evaluate(e, env), dtype=float))
    return np.broadcast_to(vals, (n,)) if vals.size == 1 else vals


def _batched_jacobian(F: SmoothMap, env, n: int) -> np.ndarray:
    """Jacobian of a symbolic map at n sample points, shape (tgt, src, n)."""
    return np.array([[_batched(e, env, n) for e in row] for row in F.jacobian()])


def _batched_covector(a: DifferentialForm, env, n: int) -> np.ndarray:
    """Coefficient vectors of a one-form at n samples, shape (dim, n)."""
    out = np.zeros((a.domain.dim, n))
    for (i,), c in a.coeffs.items():
        out[i] = _batched(c, env, n)
    return out


def _form_value_tensor(a: DifferentialForm, env, n: int) -> np.ndarray:
    """Dense antisymmetric value tensor of a two-form, shape (dim, dim, n)."""
    d = a.domain.dim
    out = np.zeros((d, d, n))
    for (i, j), c in a.coeffs.items():
        vals = _batched(c, env, n)
        out[i, j] += vals
        out[j, i] -= vals
    return out


def _pulled_one_form(cov: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Pull coefficient vectors (tgt, n) through Jacobians (tgt, src, n)."""
    return np.einsum("an,ain->in", cov, J)


def _pulled_two_form(tensor: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Pull dense two-form values (tgt, tgt, n) through Jacobians."""
    return np.einsum("ain,abn,bjn->ijn", J, tensor, J)


def _point_at(domain: CoordinateDomain, env, i: int) -> np.ndarray:
    return np.array([float(np.atleast_1d(env[n])[i % np.atleast_1d(env[n]).size]) for n in domain.names])


def _witness(domain: CoordinateDomain, env, i: int) -> dict[str, float]:
    return dict(zip(domain.names, _point_at(domain, env, i)))


def verify_strong_reducibility(
    data: ReducibleData,
    samples: int = 200,
    seed: int = 0,
    margin: float = 0.3,
    tol: float = 1e-8,
    pullback_tol: float | None = None,
    gap_tol: float = 1e-6,
    rank_threshold: float = 1e-8,
    min_survival: float = 0.5,
) -> StrongReducibilityReport:
    """Certify a reducible datum at seeded samples.

    Flow-defined quotients may lose samples to chart escapes; escaped samples
    are skipped, and fewer than ``min_survival * samples`` survivors raise
    :class:`ReductionError`.  A rank jump in the candidate distribution
    raises :class:`NonConstantRankError` with two witness points.
    """
    amb = data.ambient
    C = data.submanifold
    cdom = C.source
    pb_tol = tol if pullback_tol is None else pullback_tol
    d = cdom.dim

    lee_c = pullback(C, amb.lee)
    alpha_c = pullback(C, amb.alpha)
    dalpha_c = ext_d(alpha_c)
    phi_c = pullback(C, amb.phi)

    env = cdom.sample_points(samples, seed, margin)
    image_env = forms.evaluate_map(C, env)

    # tangency of the structure fields along the submanifold
    JC = _batched_jacobian(C, env, samples)
    b_vals = np.array([_batched(c, image_env, samples) for c in amb.b_field.components])
    e_vals = np.array([_batched(c, image_env, samples) for c in amb.anti_lee.components])
    b_tan = e_tan = 0.0
    for i in range(samples):
        Ji = JC[:, :, i]
        for vec, which in ((b_vals[:, i], "b"), (e_vals[:, i], "e")):
            sol, *_ = np.linalg.lstsq(Ji, vec, rcond=None)
            res = float(np.max(np.abs(Ji @ sol - vec))) / max(1.0, float(np.max(np.abs(vec))))
            if which == "b":
                b_tan = max(b_tan, res)
            else:
                e_tan = max(e_tan, res)

    # candidate foliation distribution: common kernel of the restricted Lee
    # form, potential, and potential derivative
    lee_rows = _batched_covector(lee_c, env, samples)
    alpha_rows = _batched_covector(alpha_c, env, samples)
    dalpha_tensor = _form_value_tensor(dalpha_c, env, samples)
    phi_tensor = _form_value_tensor(phi_c, env, samples)

    kernels: list[np.ndarray] = []
    dist_ranks: list[int] = []
    phi_ranks: list[int] = []
    for i in range(samples):
        A = np.vstack([lee_rows[:, i][None, :], alpha_rows[:, i][None, :], dalpha_tensor[:, :, i]])
        K = numeric.kernel_basis(A, rank_threshold)
        kernels.append(K)
        dist_ranks.append(K.shape[1])
        phi_ranks.append(d - numeric.numerical_rank(phi_tensor[:, :, i], rank_threshold))
    lo, hi = int(np.argmin(dist_ranks)), int(np.argmax(dist_ranks))
    if dist_ranks[lo] != dist_ranks[hi]:
        raise NonConstantRankError(
            f"distribution rank of {data.name!r} jumps from {dist_ranks[lo]} to {dist_ranks[hi]}",
            ((_witness(cdom, env, lo), dist_ranks[lo]), (_witness(cdom, env, hi), dist_ranks[hi])),
        )
    distribution_rank = dist_ranks[0]
    two_form_kernel_rank = min(phi_ranks)
    ranks_agree = all(r == distribution_rank for r in phi_ranks)

    reduced_forms = (
        ("alpha", data.reduced.alpha, alpha_c),
        ("lee", data.reduced.lee, lee_c),
        ("phi", data.reduced.phi, phi_c),
    )

    gap = 0.0
    residuals = {label: 0.0 for label, _, _ in reduced_forms}
    if isinstance(data.quotient, SmoothMap):
        q = data.quotient
        Jq = _batched_jacobian(q, env, samples)
        q_env = forms.evaluate_map(q, env)
        for i in range(samples):
            gap = max(gap, numeric.subspace_gap(kernels[i], numeric.kernel_basis(Jq[:, :, i], rank_threshold)))
        for label, reduced_form, restricted in reduced_forms:
            if reduced_form.degree == 1:
                got = _pulled_one_form(_batched_covector(reduced_form, q_env, samples), Jq)
                want = _batched_covector(restricted, env, samples)
            else:
                got = _pulled_two_form(_form_value_tensor(reduced_form, q_env, samples), Jq)
                want = _form_value_tensor(restricted, env, samples)
            residuals[label] = float(np.max(np.abs(got - want))) if got.size else 0.0
        used, skipped = samples, 0
    else:
        used = skipped = 0
        rdom = data.reduced.domain
        for i in range(samples):
            y = _point_at(cdom, env, i)
            try:
                value, J = data.quotient(y)
            except numeric.FlowEscapeError:
                skipped += 1
                continue
            used += 1
            gap = max(gap, numeric.subspace_gap(kernels[i], numeric.kernel_basis(J, rank_threshold)))
            value_env = numeric.point_env(rdom, numeric.wrap_point(rdom, value))
            point_env = {n: np.atleast_1d(env[n])[i % np.atleast_1d(env[n]).size] for n in cdom.names}
            for label, reduced_form, restricted in reduced_forms:
                if reduced_form.degree == 1:
                    got = _pulled_one_form(_batched_covector(reduced_form, value_env, 1), J[:, :, None])[:, 0]
                    want = _batched_covector(restricted, point_env, 1)[:, 0]
                else:
                    got = _pulled_two_form(_form_value_tensor(reduced_form, value_env, 1), J[:, :, None])[:, :, 0]
                    want = _form_value_tensor(restricted, point_env, 1)[:, :, 0]
                residuals[label] = max(residuals[label], float(np.max(np.abs(got - want))))
        if used < min_survival * samples:
            raise ReductionError(
                f"only {used}/{samples} quotient samples of {data.name!r} stayed inside the chart"
            )

    pullback_residuals = tuple((label, residuals[label]) for label, _, _ in reduced_forms)
    passed = (
        b_tan <= tol
        and e_tan <= tol
        and gap <= gap_tol
        and all(r <= pb_tol for _, r in pullback_residuals)
    )
    return StrongReducibilityReport(
        data.name, b_tan, e_tan, distribution_rank, two_form_kernel_rank, ranks_agree,
        gap, pullback_residuals, used, skipped, tol, pb_tol, gap_tol, passed,
    )


# ---------------------------------------------------------------------------
# declared Lee-form decompositions


@dataclass(frozen=True)
class DecompositionPiece:
    """One integral-class summand of a Lee form: weight, one-form, and a
    circle-valued potential whose differential is the one-form."""

    weight: float
    omega: DifferentialForm
    tau: sx.Expr


@dataclass(frozen=True)
class LeeDecomposition:
    """Declared splitting lee = d(f0) + sum_j weight_j * piece_j.

    ``loops`` are closed curves used to certify that each piece has integer
    periods.  The declaration is user-supplied and machine-certified.
    """

    f0: sx.Expr
    pieces: tuple[DecompositionPiece, ...]
    loops: tuple[SmoothMap, ...] = ()


@dataclass(frozen=True)
class DecompositionReport:
    sum_residual: float
    piece_residuals: tuple[float, ...]
    period_offsets: tuple[float, ...]
    passed: bool


def certify_decomposition(
    chart: StructureChart,
    decomp: LeeDecomposition,
    samples: int = 200,
    tol: float = 1e-9,
    seed: int = 0,
    period_tol: float = 1e-7,
) -> DecompositionReport:
    """Certify a declared Lee-form decomposition on a chart.

    Checks that each piece is the differential of its circle-valued
    potential, that the weighted pieces plus d(f0) reassemble the chart's Lee
    form, and that every piece has integer periods over the declared loops.
    Raises :class:`DecompositionError` on any failure.
    """
    dom = chart.domain
    piece_residuals = []
    for j, piece in enumerate(decomp.pieces):
        if piece.omega.domain != dom:
            raise DecompositionError(f"piece {j} lives on {piece.omega.domain.name!r}, not {dom.name!r}")
        check = forms_equal(ext_d(function_form(dom, piece.tau)), piece.omega, samples, tol, seed + j)
        piece_residuals.append(check.max_residual)
        if not check.passed:
            raise DecompositionError(
                f"piece {j}: potential differential misses the declared one-form "
                f"(residual {check.max_residual:.3e})"
            )
    total = ext_d(function_form(dom, decomp.f0))
    for piece in decomp.pieces:
        total = total + piece.omega.scaled(sx.Const(piece.weight))
    sum_check = forms_equal(total, chart.lee, samples, tol, seed)
    if not sum_check.passed:
        raise DecompositionError(
            f"declared pieces do not reassemble the Lee form (residual {sum_check.max_residual:.3e})"
        )
    offsets = []
    for loop in decomp.loops:
        for j, piece in enumerate(decomp.pieces):
            p = twisted.period(piece.omega, loop)
            off = abs(p - round(p))
            offsets.append(off)
            if off > period_tol:
                raise DecompositionError(
                    f"piece {j} has non-integer period {p:.6f} over loop {loop.source.name!r}"
                )
    return DecompositionReport(sum_check.max_residual, tuple(piece_residuals), tuple(offsets), True)


# ---------------------------------------------------------------------------
# shared chain helpers


def _lift_form(a: DifferentialForm, new_dom: CoordinateDomain) -> DifferentialForm:
    """Reinterpret a form on a larger domain containing the same coordinate names."""
    old_names = a.domain.names
    remap = {i: new_dom.index(n) for i, n in enumerate(old_names)}
    coeffs = {tuple(remap[i] for i in idx): c for idx, c in a.coeffs.items()}
    return DifferentialForm(new_dom, a.degree, coeffs)


def _require_fresh(dom: CoordinateDomain, names: Sequence[str], stage: str) -> None:
    clashes = sorted(set(names) & set(dom.names))
    if clashes:
        raise ReductionError(
            f"{stage}: coordinate names {clashes} already exist on {dom.name!r}; rename the chart"
        )


def _single_chart_structure(name: str, chart: StructureChart, **metadata) -> models.LcsStructure:
    return models.LcsStructure(name, models.FIRST_KIND, (chart,), metadata=dict(metadata))


@dataclass(frozen=True)
class StepResult:
    """Outcome of one chain stage.

    ``data``/``report`` describe how the stage reduces back to the previous
    one (absent for the shear stage, which is an isomorphism rather than a
    reduction).  ``extras`` holds named auxiliary residuals.
    """

    name: str
    chart: StructureChart
    structure: models.LcsStructure
    data: ReducibleData | None
    report: StrongReducibilityReport | None
    first_kind: models.FirstKindReport
    extras: tuple[tuple[str, float], ...]
    passed: bool


# ---------------------------------------------------------------------------
# stage 1: cotangent-torus extension


def build_step1(
    chart: StructureChart,
    decomp: LeeDecomposition,
    samples: int = 200,
    tol: float = 1e-9,
    seed: int = 0,
    verify_samples: int = 120,
    verify_tol: float = 1e-8,
) -> StepResult:
    """Extend a chart by one torus/radius pair per decomposition piece.

    With no pieces the stage is trivial: the chart itself, reduced along the
    identity.  Otherwise new angular coordinates ``w<j>`` and radii ``r<j>``
    are adjoined; the extended potential gains ``r_j`` times the defect of
    ``d w_j`` against the piece, the Lee form becomes exact-part plus the new
    angle differentials, and both structure fields acquire angle components
    fed by the pairing of the old fields with the pieces.  The submanifold
    pins each angle to the piece's potential; reducing it along the forgetful
    projection recovers the original chart.
    """
    dec_report = certify_decomposition(chart, decomp, samples, tol, seed)
    k = len(decomp.pieces)
    dom = chart.domain

    if k == 0:
        m1_chart = chart
        sub = identity_map(dom)
        quotient = identity_map(dom)
    else:
        w_names = [f"w{j+1}" for j in range(k)]
        r_names = [f"r{j+1}" for j in range(k)]
        _require_fresh(dom, w_names + r_names, "cotangent-torus extension")
        coords = tuple(dom.coords) + tuple(Coordinate(n, ANGULAR) for n in w_names) + tuple(
            Coordinate(n, LINEAR, -1.0, 1.0) for n in r_names
        )
        m1_dom = CoordinateDomain(f"{dom.name}_ext{k}", coords)

        alpha1 = _lift_form(chart.alpha, m1_dom)
        lee1 = ext_d(function_form(m1_dom, decomp.f0))
        b_extra: list[sx.Expr] = []
        e_extra: list[sx.Expr] = []
        for j, piece in enumerate(decomp.pieces):
            mu_j = sx.Const(piece.weight)
            defect = m1_dom.one_form(w_names[j]) - _lift_form(piece.omega, m1_dom)
            alpha1 = alpha1 + defect.scaled(sx.mul(mu_j, sx.var(r_names[j])))
            lee1 = lee1 + m1_dom.one_form(w_names[j]).scaled(mu_j)
            b_extra.append(interior(chart.b_field, piece.omega).coefficient(()))
            e_extra.append(interior(chart.anti_lee, piece.omega).coefficient(()))
        phi1 = d_twisted(lee1, alpha1)
        zero = [sx.ZERO] * k
        b1 = VectorField(m1_dom, tuple(chart.b_field.components) + tuple(b_extra) + tuple(zero))
        e1 = VectorField(m1_dom, tuple(chart.anti_lee.components) + tuple(e_extra) + tuple(zero))
        m1_chart = StructureChart(
            m1_dom, phi1, lee1, alpha1, b1, e1, name=f"{chart.name}_ext{k}"
        )

        c_dom = CoordinateDomain(
            f"{dom.name}_section{k}",
            tuple(dom.coords) + tuple(Coordinate(n, LINEAR, -1.0, 1.0) for n in r_names),
        )
        comps = [sx.var(n) for n in dom.names]
        comps += [piece.tau for piece in decomp.pieces]
        comps += [sx.var(n) for n in r_names]
        sub = SmoothMap(c_dom, m1_dom, tuple(comps))
        quotient = SmoothMap(c_dom, dom, tuple(sx.var(n) for n in dom.names))

    data = ReducibleData(f"{chart.name}:stage1", m1_chart, sub, quotient, chart)
    report = verify_strong_reducibility(
        data, verify_samples, seed, tol=verify_tol, pullback_tol=verify_tol
    )
    structure = _single_chart_structure(m1_chart.name, m1_chart, stage=1, pieces=k)
    first_kind = models.validate_first_kind(structure, samples=min(samples, 120), tol=verify_tol, seed=seed)
    extras = (
        ("decomposition_sum", dec_report.sum_residual),
        ("decomposition_pieces", max(dec_report.piece_residuals, default=0.0)),
    )
    return StepResult(
        "cotangent_torus_extension", m1_chart, structure, data, report, first_kind, extras,
        report.passed and first_kind.passed,
    )


# ---------------------------------------------------------------------------
# stage 2: jet-space extension with flow quotient


class FlowQuotient(numeric.PointMap):
    """Quotient of the jet-stage graph: flow the base point by the first
    field for the first slab coordinate, then by the second field for the
    second, with Jacobians assembled from the variational flows."""

    def __init__(self, source: CoordinateDomain, base_chart: StructureChart, rtol: float = 1e-10, atol: float = 1e-12):
        self.source = source
        self.target = base_chart.domain
        self._b = base_chart.b_field
        self._e = base_chart.anti_lee
        self._b_func = numeric.field_function(self._b)
        self._e_func = numeric.field_function(self._e)
        self._rtol = rtol
        self._atol = atol

    def __call__(self, y: np.ndarray):
        y = np.asarray(y, dtype=float)
        s, u, x = y[0], y[1], y[2:]
        first = numeric.flow(self._b, x, s, with_jacobian=True, rtol=self._rtol, atol=self._atol)
        second = numeric.flow(self._e, first.point, u, with_jacobian=True, rtol=self._rtol, atol=self._atol)
        value = second.point
        d = x.size
        J = np.zeros((d, d + 2))
        J[:, 0] = second.jacobian @ self._b_func(first.point)
        J[:, 1] = self._e_func(value)
        J[:, 2:] = second.jacobian @ first.jacobian
        return value, J


def _fiber_bound(alpha: DifferentialForm, samples: int, seed: int, factor: float = 1.5) -> float:
    env = alpha.domain.sample_points(samples, seed)
    worst = 0.0
    for vals in forms.evaluate_form(alpha, env).values():
        worst = max(worst, float(np.max(np.abs(np.atleast_1d(vals)))))
    return max(1.0, factor * worst)


def build_step2(
    m1_chart: StructureChart,
    samples: int = 150,
    tol: float = 1e-8,
    flow_tol: float = 1e-6,
    seed: int = 0,
    window: float = 0.25,
    margin: float = 0.5,
    flow_samples: int = 40,
) -> StepResult:
    """Extend a first-kind chart to the slab-times-jet space above it.

    New coordinates: a slab pair ``s, u`` and one momentum ``p_<name>`` per
    base coordinate.  The potential is ``du`` minus the tautological form,
    the Lee form ``ds`` plus the lifted one, and the structure fields are the
    slab translations.  The graph submanifold carries ``(s, u)`` with the
    momenta pinned to minus the base potential; its quotient composes the
    time-``s`` flow of the base first field with the time-``u`` flow of the
    base second field, so the certification is numeric with escape-aware
    sampling inside the ``(-window, window)`` slab.
    """
    m1_dom = m1_chart.domain
    p_names = [f"p_{n}" for n in m1_dom.names]
    _require_fresh(m1_dom, ["s", "u"] + p_names, "jet-space extension")
    p_bound = _fiber_bound(m1_chart.alpha, max(samples, 100), seed)

    coords = (Coordinate("s"), Coordinate("u"))
    coords += tuple(m1_dom.coords)
    coords += tuple(Coordinate(n, LINEAR, -p_bound, p_bound) for n in p_names)
    m2_dom = CoordinateDomain(f"{m1_dom.name}_jet", coords)

    taut = zero_form(m2_dom, 1)
    for base, pname in zip(m1_dom.names, p_names):
        taut = taut + m2_dom.one_form(base).scaled(sx.var(pname))
    alpha2 = m2_dom.one_form("u") - taut
    lee2 = m2_dom.one_form("s") + _lift_form(m1_chart.lee, m2_dom)
    phi2 = d_twisted(lee2, alpha2)
    b2 = basis_vector(m2_dom, "s")
    e2 = -basis_vector(m2_dom, "u")
    m2_chart = StructureChart(m2_dom, phi2, lee2, alpha2, b2, e2, name=f"{m1_chart.name}_jet")

    c_coords = (Coordinate("s", LINEAR, -window, window), Coordinate("u", LINEAR, -window, window))
    c_coords += tuple(m1_dom.coords)
    c_dom = CoordinateDomain(f"{m1_dom.name}_graph", c_coords)
    comps = [sx.var("s"), sx.neg(sx.var("u"))]
    comps += [sx.var(n) for n in m1_dom.names]
    comps += [sx.neg(m1_chart.alpha.coefficient((i,))) for i in range(m1_dom.dim)]
    sub = SmoothMap(c_dom, m2_dom, tuple(comps))
    quotient = FlowQuotient(c_dom, m1_chart)

    data = ReducibleData(f"{m1_chart.name}:stage2", m2_chart, sub, quotient, m1_chart)
    report = verify_strong_reducibility(
        data, flow_samples, seed, margin=margin, tol=tol, pullback_tol=flow_tol, gap_tol=max(1e-6, flow_tol)
    )
    structure = _single_chart_structure(m2_chart.name, m2_chart, stage=2)
    first_kind = models.validate_first_kind(structure, samples=min(samples, 120), tol=tol, seed=seed)
    extras = (("momentum_bound", p_bound),)
    return StepResult(
        "jet_space_extension", m2_chart, structure, data, report, first_kind, extras,
        report.passed and first_kind.passed,
    )


# ---------------------------------------------------------------------------
# stage 3: shear normalization


def build_step3(
    m2_chart: StructureChart,
    decomp: LeeDecomposition,
    samples: int = 200,
    tol: float = 1e-9,
    seed: int = 0,
) -> StepResult:
    """Normalize the Lee form by the shear absorbing its exact part.

    The shear subtracts ``f0`` from the slab coordinate ``s``; it is
    unipotent (Jacobian determinant one), fixes the potential, and turns the
    Lee form into ``ds`` plus the weighted angle differentials.  No
    reduction happens here — the certification is that the shear pulls the
    stage-two forms back to the normalized ones.
    """
    m2_dom = m2_chart.domain
    f0 = decomp.f0
    shear = SmoothMap(
        m2_dom,
        m2_dom,
        tuple(
            sx.add(sx.var(n), sx.neg(f0)) if n == "s" else sx.var(n) for n in m2_dom.names
        ),
    )

    lee3 = m2_dom.one_form("s")
    for j, piece in enumerate(decomp.pieces):
        lee3 = lee3 + m2_dom.one_form(f"w{j+1}").scaled(sx.Const(piece.weight))
    alpha3 = m2_chart.alpha
    phi3 = d_twisted(lee3, alpha3)

    alpha_check = forms_equal(pullback(shear, m2_chart.alpha), alpha3, samples, tol, seed)
    lee_check = forms_equal(pullback(shear, m2_chart.lee), lee3, samples, tol, seed + 1)
    phi_check = forms_equal(pullback(shear, m2_chart.phi), phi3, samples, tol, seed + 2)
    for label, check in (("alpha", alpha_check), ("lee", lee_check), ("phi", phi_check)):
        if not check.passed:
            raise ReductionError(
                f"shear fails to normalize {label} (residual {check.max_residual:.3e})"
            )

    env = m2_dom.sample_points(min(samples, 60), seed)
    J = _batched_jacobian(shear, env, min(samples, 60))
    det_offset = float(np.max(np.abs(np.linalg.det(np.moveaxis(J, 2, 0)) - 1.0)))
    if det_offset > tol * 10:
        raise ReductionError(f"shear is not unipotent (determinant offset {det_offset:.3e})")

    m3_chart = StructureChart(
        m2_dom, phi3, lee3, alpha3, m2_chart.b_field, m2_chart.anti_lee,
        name=f"{m2_chart.name}_norm",
    )
    structure = _single_chart_structure(m3_chart.name, m3_chart, stage=3)
    first_kind = models.validate_first_kind(structure, samples=min(samples, 120), tol=max(tol, 1e-9), seed=seed)
    extras = (
        ("shear_alpha", alpha_check.max_residual),
        ("shear_lee", lee_check.max_residual),
        ("shear_phi", phi_check.max_residual),
        ("shear_determinant", det_offset),
    )
    return StepResult(
        "shear_normalization", m3_chart, structure, None, None, first_kind, extras,
        first_kind.passed,
    )


# ---------------------------------------------------------------------------
# stage 4: transplant into the universal cotangent model


def universal_base_domain(k: int, N: int) -> CoordinateDomain:
    """Base of the universal model: k angles and N Euclidean coordinates."""
    coords = tuple(Coordinate(f"th{j+1}", ANGULAR) for j in range(k))
    coords += tuple(Coordinate(f"t{i+1}") for i in range(N))
    return CoordinateDomain(f"torus{k}_euclid{N}", coords)


def build_step4(
    m3_chart: StructureChart,
    m1_chart: StructureChart,
    transplant: SmoothMap,
    mu: Sequence[float],
    samples: int = 150,
    tol: float = 1e-8,
    seed: int = 0,
    verify_samples: int = 60,
) -> StepResult:
    """Realize the normalized stage inside the universal cotangent model.

    ``transplant`` embeds the stage-one space into the universal base (the
    angles must map to the stage-one angles so the Lee forms match); the
    submanifold is its conormal-style lift with free momenta, and the
    quotient sends momenta to their pairing with the transplant's
    differential.  Reducing recovers the normalized stage-three chart.
    """
    mu = tuple(float(m) for m in mu)
    k = len(mu)
    m1_dom = m1_chart.domain
    if transplant.source != m1_dom:
        raise ReductionError("transplant must be defined on the stage-one domain")
    base_names = transplant.target.names
    expected = tuple(f"th{j+1}" for j in range(k))
    if base_names[: len(expected)] != expected:
        raise ReductionError(
            f"transplant target must start with angles {expected}, got {base_names[:len(expected)]}"
        )
    t_names = base_names[len(expected):]
    N = len(t_names)
    if tuple(f"t{i+1}" for i in range(N)) != t_names:
        raise ReductionError("transplant target must list Euclidean coordinates t1..tN after the angles")
    dim_m = m1_dom.dim - 2 * k
    if N < 2 * dim_m + k:
        raise ReductionError(
            f"universal base needs at least {2 * dim_m + k} Euclidean coordinates, got {N}"
        )
    rank = numeric.map_min_rank(transplant, samples=min(verify_samples, 40), seed=seed)
    if rank != m1_dom.dim:
        raise ReductionError(
            f"transplant rank {rank} < stage-one dimension {m1_dom.dim}; not an embedding"
        )

    universal = models.model_reduction_universal(k, N, mu)
    u_chart = universal.charts[0]
    u_dom = u_chart.domain

    q_names = [f"q_th{j+1}" for j in range(k)] + [f"q_t{i+1}" for i in range(N)]
    _require_fresh(m1_dom, ["s", "u"] + q_names, "universal transplant")
    c_coords = (Coordinate("s"), Coordinate("u"))
    c_coords += tuple(m1_dom.coords)
    c_coords += tuple(Coordinate(n, LINEAR, -1.0, 1.0) for n in q_names)
    c_dom = CoordinateDomain(f"{m1_dom.name}_conormal", c_coords)

    comps = [sx.var("s"), sx.var("u")]
    comps += [transplant.component(n) for n in base_names]
    comps += [sx.var(n) for n in q_names]
    sub = SmoothMap(c_dom, u_dom, tuple(comps))

    m3_dom = m3_chart.domain
    q_comps = []
    for name in m3_dom.names:
        if name.startswith("p_"):
            base = name[2:]
            terms = [
                sx.mul(sx.var(qn), sx.diff(transplant.component(bn), base))
                for qn, bn in zip(q_names, base_names)
            ]
            q_comps.append(sx.add(*terms) if terms else sx.ZERO)
        else:
            q_comps.append(sx.var(name))
    quotient = SmoothMap(c_dom, m3_dom, tuple(q_comps))

    data = ReducibleData(f"{m3_chart.name}:stage4", u_chart, sub, quotient, m3_chart)
    report = verify_strong_reducibility(
        data, verify_samples, seed, tol=tol, pullback_tol=tol
    )
    first_kind = models.validate_first_kind(universal, samples=min(samples, 100), tol=1e-9, seed=seed)
    extras = (("transplant_rank", float(rank)),)
    return StepResult(
        "universal_transplant", u_chart, universal, data, report, first_kind, extras,
        report.passed and first_kind.passed,
    )


# ---------------------------------------------------------------------------
# two-stage versus one-stage agreement


class _BackwardGraph(numeric.PointMap):
    """Parametrize the pulled-back stage-two graph over the stage-one
    section: flow the section point backward by the second field then the
    first, producing the stage-two graph point over the same slab values."""

    def __init__(self, source: CoordinateDomain, section: SmoothMap, base_chart: StructureChart,
                 graph_dom: CoordinateDomain, rtol: float = 1e-10, atol: float = 1e-12):
        self.source = source
        self.target = graph_dom
        self._section = numeric.SymbolicPointMap(section)
        self._b = base_chart.b_field
        self._e = base_chart.anti_lee
        self._b_func = numeric.field_function(self._b)
        self._e_func = numeric.field_function(self._e)
        self._rtol = rtol
        self._atol = atol

    def __call__(self, y: np.ndarray):
        y = np.asarray(y, dtype=float)
        s, u, params = y[0], y[1], y[2:]
        z0, J0 = self._section(params)
        back_e = numeric.flow(self._e, z0, -u, with_jacobian=True, rtol=self._rtol, atol=self._atol)
        back_b = numeric.flow(self._b, back_e.point, -s, with_jacobian=True, rtol=self._rtol, atol=self._atol)
        x = back_b.point
        d = x.size
        J = np.zeros((d + 2, y.size))
        J[0, 0] = 1.0
        J[1, 1] = 1.0
        J[2:, 0] = -self._b_func(x)
        J[2:, 1] = back_b.jacobian @ (-self._e_func(back_e.point))
        J[2:, 2:] = back_b.jacobian @ back_e.jacobian @ J0
        return np.concatenate(([s, u], x)), J


def concatenation_residual(
    step1: StepResult,
    step2: StepResult,
    base_chart: StructureChart,
    samples: int = 20,
    seed: int = 0,
    margin: float = 0.5,
    min_survival: float = 0.5,
) -> float:
    """Compare two-stage reduction with the direct one-stage reduction.

    Pull the stage-two graph back over the stage-one section: the combined
    submanifold carries slab coordinates and the section parameters, its
    direct quotient is the plain projection onto the original chart, and the
    residual is the worst mismatch between the original forms pulled through
    that projection and the stage-two forms pulled through the combined
    embedding.
    """
    if step2.data is None or step1.data is None:
        raise ReductionError("concatenation needs the reduction data of both stages")
    section = step1.data.submanifold
    graph_dom = step2.data.submanifold.source
    m1_chart = step1.chart
    m2_chart = step2.data.ambient

    s_coord = graph_dom.coordinate("s")
    coords = (s_coord, graph_dom.coordinate("u")) + tuple(section.source.coords)
    c_dom = CoordinateDomain(f"{section.source.name}_combined", coords)
    to_graph = _BackwardGraph(c_dom, section, m1_chart, graph_dom)
    into_m2 = numeric.ComposedPointMap(numeric.SymbolicPointMap(step2.data.submanifold), to_graph)

    base_dom = base_chart.domain
    projection = SmoothMap(c_dom, base_dom, tuple(sx.var(n) for n in base_dom.names))
    expected = (
        ("alpha", base_chart.alpha, m2_chart.alpha),
        ("lee", base_chart.lee, m2_chart.lee),
        ("phi", base_chart.phi, m2_chart.phi),
    )

    env = c_dom.sample_points(samples, seed, margin)
    Jp = _batched_jacobian(projection, env, samples)
    p_env = forms.evaluate_map(projection, env)
    worst = 0.0
    used = 0
    for i in range(samples):
        y = _point_at(c_dom, env, i)
        try:
            value, J = into_m2(y)
        except numeric.FlowEscapeError:
            continue
        used += 1
        value_env = numeric.point_env(m2_chart.domain, numeric.wrap_point(m2_chart.domain, value))
        pe = {n: np.atleast_1d(p_env[n])[i % np.atleast_1d(p_env[n]).size] for n in base_dom.names}
        for _, base_form, m2_form in expected:
            if base_form.degree == 1:
                got = _pulled_one_form(_batched_covector(m2_form, value_env, 1), J[:, :, None])[:, 0]
                want = _pulled_one_form(_batched_covector(base_form, pe, 1), Jp[:, :, i][:, :, None])[:, 0]
            else:
                got = _pulled_two_form(_form_value_tensor(m2_form, value_env, 1), J[:, :, None])[:, :, 0]
                want = _pulled_two_form(_form_value_tensor(base_form, pe, 1), Jp[:, :, i][:, :, None])[:, :, 0]
            worst = max(worst, float(np.max(np.abs(got - want))))
    if used < min_survival * samples:
        raise ReductionError(f"only {used}/{samples} combined samples stayed inside the chart")
    return worst


# ---------------------------------------------------------------------------
# the full chain


@dataclass(frozen=True)
class ChainResult:
    """Certified four-stage chain starting from one chart."""

    steps: tuple[StepResult, ...]
    concatenation: float
    concatenation_tol: float
    passed: bool

    def step(self, name: str) -> StepResult:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)


def run_reduction_chain(
    chart: StructureChart,
    decomp: LeeDecomposition,
    transplant_factory: Callable[[StructureChart, StructureChart], SmoothMap],
    samples: int = 150,
    tol: float = 1e-8,
    flow_tol: float = 1e-6,
    seed: int = 0,
    window: float = 0.25,
    margin: float = 0.5,
    flow_samples: int = 40,
    verify_samples: int = 100,
    concat_samples: int = 16,
    concat_tol: float = 1e-6,
) -> ChainResult:
    """Run and certify all four stages starting from a first-kind chart.

    ``transplant_factory(m1_chart, chart)`` must return the embedding of the
    stage-one space into the universal base.  Each stage is certified as a
    reducible datum recovering the previous one; the result also carries the
    two-stage/one-stage agreement residual.
    """
    step1 = build_step1(
        chart, decomp, samples=samples, seed=seed,
        verify_samples=verify_samples, verify_tol=tol,
    )
    step2 = build_step2(
        step1.chart, samples=samples, tol=tol, flow_tol=flow_tol, seed=seed,
        window=window, margin=margin, flow_samples=flow_samples,
    )
    step3 = build_step3(step2.chart, decomp, samples=samples, seed=seed)
    transplant = transplant_factory(step1.chart, chart)
    mu = tuple(piece.weight for piece in decomp.pieces)
    step4 = build_step4(
        step3.chart, step1.chart, transplant, mu,
        samples=samples, tol=tol, seed=seed, verify_samples=min(verify_samples, 60),
    )
    concat = concatenation_residual(
        step1, step2, chart, samples=concat_samples, seed=seed, margin=margin,
    )
    steps = (step1, step2, step3, step4)
    passed = all(s.passed for s in steps) and concat <= concat_tol
    return ChainResult(steps, concat, concat_tol, passed)


# ---------------------------------------------------------------------------
# ready-made chain inputs


def plane_exact_chart() -> StructureChart:
    """Two-dimensional exact chart: potential db, Lee form da, fields the
    coordinate translations.  Every flow is affine, so the chain over it is
    escape-free and tight."""
    dom = forms.linear_domain("plane_slab", ["a", "b"])
    alpha = dom.one_form("b")
    lee = dom.one_form("a")
    phi = d_twisted(lee, alpha)
    return StructureChart(
        dom, phi, lee, alpha,
        basis_vector(dom, "a"), -basis_vector(dom, "b"),
        name="plane_slab",
    )


def plane_chain_input() -> tuple[StructureChart, LeeDecomposition, Callable[[StructureChart, StructureChart], SmoothMap]]:
    """Chain input for the exact plane chart (no torus pieces)."""
    chart = plane_exact_chart()
    decomp = LeeDecomposition(chart.domain.var("a"), ())

    def factory(m1_chart: StructureChart, _chart: StructureChart) -> SmoothMap:
        base = universal_base_domain(0, 4)
        comps = (sx.var("a"), sx.var("b"), sx.ZERO, sx.ZERO)
        return SmoothMap(m1_chart.domain, base, comps)

    return chart, decomp, factory


def sphere_circle_chain_input(
    structure: models.LcsStructure,
    chart_index: int = 0,
    f0: sx.Expr | None = None,
) -> tuple[StructureChart, LeeDecomposition, Callable[[StructureChart, StructureChart], SmoothMap]]:
    """Chain input for one chart of a sphere-times-circle model.

    The Lee form splits as ``d(f0)`` plus a single unit-weight piece with
    circle-valued potential ``theta - f0``; the transplant sends the sphere
    part through its ambient parametrization, the circle through its
    standard planar embedding, and keeps the extension radius.
    """
    chart = structure.charts[chart_index]
    if chart.parametrization is None:
        raise ReductionError("sphere-times-circle charts need their ambient parametrization")
    dom = chart.domain
    f0 = sx.ZERO if f0 is None else f0
    piece = chart.lee - ext_d(function_form(dom, f0))
    tau = sx.add(dom.var("theta"), sx.neg(f0))
    loops = models.structure_lee_loops(
        models.LcsStructure(structure.name, structure.kind, (chart,))
    )
    decomp = LeeDecomposition(f0, (DecompositionPiece(1.0, piece, tau),), tuple(loops))

    sphere_names = [n for n in chart.parametrization.target.names if n != "theta"]
    dim_m = dom.dim
    N = 2 * dim_m + 1

    def factory(m1_chart: StructureChart, base_chart: StructureChart) -> SmoothMap:
        base = universal_base_domain(1, N)
        two_pi_theta = sx.mul(sx.Const(2.0 * np.pi), sx.var("theta"))
        comps = [sx.var("w1")]
        comps += [base_chart.parametrization.component(n) for n in sphere_names]
        comps += [sx.cos(two_pi_theta), sx.sin(two_pi_theta)]
        comps += [sx.ZERO] * (2 * dim_m - len(sphere_names) - 2)
        comps += [sx.var("r1")]
        return SmoothMap(m1_chart.domain, base, tuple(comps))

    return chart, decomp, factory
