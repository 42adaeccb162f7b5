"""Catalog of locally conformal symplectic structures of the first kind.

A structure of the first kind carries a potential one-form ``alpha`` with
``phi = d alpha - lee ^ alpha``, a vector field ``B`` with ``lee(B) = 1``,
``i_B phi = -alpha``, ``L_B phi = 0``, and the anti-Lee field ``E`` with
``i_E phi = -lee`` and ``lee(E) = 0`` commuting with ``B``.

Two model families are provided:

* ``model_sphere_circle(N, q)`` — the product of an odd sphere (radius 1,
  inside R^(2N), covered by 4N graph charts) with a circle, carrying the
  scaled standard contact form on the sphere and Lee form d(theta);
* ``model_reduction_universal(k, N, mu)`` — the universal first-kind
  structures on R x (1-jets of functions on T^k x R^N), one global chart,
  with Lee form ds + sum mu_j d(theta_j).

``model_liouville(n)`` supplies the exact symplectic building block (the
tautological one-form on R^(2n) with zero Lee form).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import forms, symexpr as sx
from .forms import (
    ANGULAR,
    Coordinate,
    CoordinateDomain,
    DifferentialForm,
    SmoothMap,
    VectorField,
    basis_vector,
    ext_d,
    form_is_zero,
    interior,
    lie_bracket,
    lie_derivative,
    pullback,
    wedge,
)
from .symexpr import Expr, ZeroCheck
from .twisted import d_twisted

FIRST_KIND = "first-kind"
EXACT = "exact"

# ball-box half width: the inscribed cube of the open unit ball, with slack
_BOX_SAFETY = 0.95


class ModelError(Exception):
    """Malformed model data (missing fields, bad parameters)."""


@dataclass(frozen=True)
class StructureChart:
    """One chart of a structure: domain, forms, distinguished fields."""

    domain: CoordinateDomain
    phi: DifferentialForm
    lee: DifferentialForm
    alpha: DifferentialForm | None = None
    b_field: VectorField | None = None
    anti_lee: VectorField | None = None
    parametrization: SmoothMap | None = None  # into an ambient domain, if any
    name: str = ""


@dataclass
class LcsStructure:
    """A structure presented by charts, plus catalog metadata."""

    name: str
    kind: str
    charts: tuple[StructureChart, ...]
    ambient: CoordinateDomain | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.charts[0].domain.dim


# ---------------------------------------------------------------------------
# ambient ingredients


def interleaved_names(N: int) -> list[str]:
    out = []
    for j in range(1, N + 1):
        out.extend([f"x{j}", f"y{j}"])
    return out


def liouville_domain(n: int) -> CoordinateDomain:
    return forms.linear_domain(f"r{2*n}", interleaved_names(n))


def liouville_form(n: int) -> DifferentialForm:
    """Tautological one-form sum y_j dx_j on R^(2n)."""
    dom = liouville_domain(n)
    return DifferentialForm(dom, 1, {(2 * j,): sx.var(f"y{j+1}") for j in range(n)})


def model_liouville(n: int) -> LcsStructure:
    """Exact symplectic structure (d of the tautological form, zero Lee form)."""
    if n < 1:
        raise ModelError("model_liouville needs n >= 1")
    lam = liouville_form(n)
    dom = lam.domain
    chart = StructureChart(
        domain=dom,
        phi=ext_d(lam),
        lee=forms.zero_form(dom, 1),
        alpha=lam,
        b_field=None,
        anti_lee=VectorField(dom, (sx.ZERO,) * dom.dim),
        name="global",
    )
    return LcsStructure(f"liouville_{n}", EXACT, (chart,), metadata={"n": n})


def contact_sphere_form(N: int, domain: CoordinateDomain | None = None) -> DifferentialForm:
    """The standard contact generator (1/2) sum (y_j dx_j - x_j dy_j) on R^(2N)."""
    dom = domain if domain is not None else forms.linear_domain(f"r{2*N}", interleaved_names(N))
    coeffs: dict[tuple[int, ...], Expr] = {}
    for j in range(N):
        xi, yi = dom.index(f"x{j+1}"), dom.index(f"y{j+1}")
        coeffs[(xi,)] = sx.mul(sx.Const(0.5), sx.var(f"y{j+1}"))
        coeffs[(yi,)] = sx.mul(sx.Const(-0.5), sx.var(f"x{j+1}"))
    return DifferentialForm(dom, 1, coeffs)


def reeb_components(N: int) -> dict[str, Expr]:
    """Ambient components of the contact Reeb field 2 sum (y_j d/dx_j - x_j d/dy_j)."""
    comps: dict[str, Expr] = {}
    for j in range(1, N + 1):
        comps[f"x{j}"] = sx.mul(sx.Const(2.0), sx.var(f"y{j}"))
        comps[f"y{j}"] = sx.mul(sx.Const(-2.0), sx.var(f"x{j}"))
    return comps


# ---------------------------------------------------------------------------
# odd sphere x circle


def sphere_circle_ambient(N: int) -> CoordinateDomain:
    coords = [Coordinate(n, "linear", -1.0, 1.0) for n in interleaved_names(N)]
    coords.append(Coordinate("theta", ANGULAR))
    return CoordinateDomain(f"sphere{2*N-1}_circle_ambient", tuple(coords))


def sphere_graph_charts(
    N: int, ambient: CoordinateDomain, with_circle: bool = True
) -> list[tuple[str, SmoothMap]]:
    """Graph charts of the unit sphere in R^(2N) (both signs per coordinate).

    Each chart drops one ambient coordinate and represents it as
    +-sqrt(1 - sum of the others squared); the chart domain is the
    inscribed-cube box of half width 0.95/sqrt(2N-1) (every box point lies
    strictly inside the unit ball), optionally times the circle factor.
    """
    names = interleaved_names(N)
    half = _BOX_SAFETY / np.sqrt(max(1, 2 * N - 1))
    charts: list[tuple[str, SmoothMap]] = []
    for drop in names:
        for sign, tag in ((1.0, "plus"), (-1.0, "minus")):
            kept = [n for n in names if n != drop]
            coords = [Coordinate(n, "linear", -half, half) for n in kept]
            if with_circle:
                coords.append(Coordinate("theta", ANGULAR))
            dom = CoordinateDomain(f"chart_{drop}_{tag}", tuple(coords))
            radicand = sx.add(sx.ONE, *(sx.neg(sx.pow_(sx.var(n), 2)) for n in kept))
            dropped_expr = sx.mul(sx.Const(sign), sx.sqrt(radicand))
            comps = []
            for n in ambient.names:
                if n == drop:
                    comps.append(dropped_expr)
                elif n == "theta":
                    comps.append(sx.var("theta"))
                else:
                    comps.append(sx.var(n))
            charts.append((f"{drop}_{tag}", SmoothMap(dom, ambient, tuple(comps))))
    return charts


def model_sphere_circle(N: int, q: float = 1.0) -> LcsStructure:
    """First-kind structure on (odd sphere) x circle.

    The potential is ``q`` times the restricted contact form, the Lee form
    is d(theta), ``phi = d alpha - lee ^ alpha``, ``B = d/d(theta)`` and
    the anti-Lee field is ``-1/q`` times the contact Reeb field.
    """
    if N < 2:
        raise ModelError("model_sphere_circle needs N >= 2 (sphere dimension >= 3)")
    if q == 0.0:
        raise ModelError("the contact scale q must be nonzero")
    ambient = sphere_circle_ambient(N)
    # the contact generator on the product ambient, so pullbacks line up by name
    eta_amb = DifferentialForm(
        ambient,
        1,
        {
            (ambient.index(name),): coeff
            for (name, coeff) in _eta_named_coeffs(N)
        },
    )
    reeb = reeb_components(N)
    charts = []
    for label, P in sphere_graph_charts(N, ambient, with_circle=True):
        dom = P.source
        alpha = pullback(P, eta_amb).scaled(sx.Const(q))
        lee = dom.one_form("theta")
        phi = d_twisted(lee, alpha)
        b_field = basis_vector(dom, "theta")
        # ambient Reeb components composed through the chart (the dropped
        # coordinate becomes +-sqrt(1 - ...))
        onto_chart = dict(zip(ambient.names, P.components))
        comps = []
        for n in dom.names:
            if n == "theta":
                comps.append(sx.ZERO)
            else:
                comps.append(sx.mul(sx.Const(-1.0 / q), sx.substitute(reeb[n], onto_chart)))
        anti_lee = VectorField(dom, tuple(comps))
        charts.append(
            StructureChart(
                domain=dom, phi=phi, lee=lee, alpha=alpha,
                b_field=b_field, anti_lee=anti_lee, parametrization=P, name=label,
            )
        )
    return LcsStructure(
        f"sphere{2*N-1}_circle_q{q:g}", FIRST_KIND, tuple(charts),
        ambient=ambient, metadata={"N": N, "q": q},
    )


def _eta_named_coeffs(N: int) -> list[tuple[str, Expr]]:
    out = []
    for j in range(1, N + 1):
        out.append((f"x{j}", sx.mul(sx.Const(0.5), sx.var(f"y{j}"))))
        out.append((f"y{j}", sx.mul(sx.Const(-0.5), sx.var(f"x{j}"))))
    return out


def sphere_overlap_report(
    structure: LcsStructure, samples: int = 60, tol: float = 1e-9, seed: int = 0,
    min_clearance: float = 0.15,
) -> "OverlapReport":
    """Chart-to-chart consistency of the sphere-circle atlas.

    For every ordered chart pair with different dropped coordinates, samples
    of the first chart whose image lies well inside the second chart's
    hemisphere are mapped across, and all structure forms are compared.
    """
    if structure.ambient is None:
        raise ModelError("overlap checks need an atlas-based structure")
    charts = structure.charts
    worst = 0.0
    pairs = 0
    used = 0
    for ci, cj in itertools.permutations(charts, 2):
        drop_i, drop_j = _dropped_name(ci), _dropped_name(cj)
        if drop_i == drop_j:
            continue  # same graph direction: transition is the identity
        sign_j = 1.0 if cj.name.endswith("plus") else -1.0
        # transition: express chart-j coordinates in chart-i coordinates
        comps = []
        for n in cj.domain.names:
            comps.append(ci.parametrization.component(n))
        T = SmoothMap(ci.domain, cj.domain, tuple(comps))
        env = ci.domain.sample_points(samples, seed + pairs)
        val_dj = np.asarray(sx.evaluate(ci.parametrization.component(drop_j), env))
        keep = sign_j * val_dj > min_clearance
        if not np.any(keep):
            pairs += 1
            continue
        env_kept = {k: v[keep] for k, v in env.items()}
        used += int(np.sum(keep))
        for a_i, a_j in ((ci.alpha, cj.alpha), (ci.phi, cj.phi), (ci.lee, cj.lee)):
            delta = a_i - pullback(T, a_j)
            for c in delta.coeffs.values():
                vals = np.atleast_1d(np.asarray(sx.evaluate(c, env_kept), dtype=float))
                if vals.size:
                    worst = max(worst, float(np.max(np.abs(vals))))
        pairs += 1
    return OverlapReport(worst <= tol, worst, pairs, used, tol)


def _dropped_name(chart: StructureChart) -> str:
    return chart.name.rsplit("_", 1)[0]


@dataclass(frozen=True)
class OverlapReport:
    passed: bool
    max_residual: float
    pairs_checked: int
    samples_used: int
    tol: float


# ---------------------------------------------------------------------------
# universal reduction models


def universal_domain(k: int, N: int) -> CoordinateDomain:
    coords = [Coordinate("s"), Coordinate("u")]
    coords += [Coordinate(f"th{j+1}", ANGULAR) for j in range(k)]
    coords += [Coordinate(f"t{i+1}") for i in range(N)]
    coords += [Coordinate(f"pth{j+1}") for j in range(k)]
    coords += [Coordinate(f"pt{i+1}") for i in range(N)]
    return CoordinateDomain(f"universal_k{k}_n{N}", tuple(coords))


def model_reduction_universal(k: int, N: int, mu: Sequence[float]) -> LcsStructure:
    """Universal first-kind structure on R x (1-jets over T^k x R^N).

    Coordinates (s, u, th_j, t_i, pth_j, pt_i); the potential is
    du - sum pth_j d th_j - sum pt_i d t_i, the Lee form ds + sum mu_j d th_j,
    phi their twisted differential, B = d/ds and anti-Lee field -d/du.
    """
    if k < 0 or N < 0 or k + N == 0:
        raise ModelError("model_reduction_universal needs k + N >= 1")
    mu = tuple(float(m) for m in mu)
    if len(mu) != k:
        raise ModelError(f"mu has {len(mu)} entries, expected k = {k}")
    dom = universal_domain(k, N)
    lam_coeffs: dict[tuple[int, ...], Expr] = {}
    for j in range(k):
        lam_coeffs[(dom.index(f"th{j+1}"),)] = sx.var(f"pth{j+1}")
    for i in range(N):
        lam_coeffs[(dom.index(f"t{i+1}"),)] = sx.var(f"pt{i+1}")
    lam = DifferentialForm(dom, 1, lam_coeffs)
    alpha = dom.one_form("u") - lam
    lee = dom.one_form("s")
    for j in range(k):
        lee = lee + dom.one_form(f"th{j+1}").scaled(sx.Const(mu[j]))
    phi = d_twisted(lee, alpha)
    chart = StructureChart(
        domain=dom, phi=phi, lee=lee, alpha=alpha,
        b_field=basis_vector(dom, "s"), anti_lee=-basis_vector(dom, "u"),
        name="global",
    )
    return LcsStructure(
        f"universal_k{k}_n{N}", FIRST_KIND, (chart,),
        metadata={"k": k, "N": N, "mu": mu},
    )


# ---------------------------------------------------------------------------
# first-kind validation


IDENTITY_LABELS = (
    "d(phi) - lee ^ phi",
    "d_lee(alpha) - phi",
    "i_B(phi) + alpha",
    "i_E(phi) + lee",
    "lee(B) - 1",
    "lee(E)",
    "L_B(phi)",
    "[B, E]",
    "d(lee)",
)


@dataclass(frozen=True)
class FirstKindReport:
    """Residuals of the defining identities, per chart."""

    structure: str
    checks: tuple[tuple[str, str, ZeroCheck], ...]  # (chart, identity, result)
    min_rank: int
    nondegenerate: bool
    passed: bool

    def worst(self) -> float:
        return max((c.max_residual for _, _, c in self.checks), default=0.0)


def validate_first_kind(
    structure: LcsStructure,
    samples: int = 200,
    tol: float = 1e-9,
    seed: int = 0,
) -> FirstKindReport:
    """Certify the defining identities of a first-kind structure chartwise."""
    checks: list[tuple[str, str, ZeroCheck]] = []
    min_rank = None
    for chart in structure.charts:
        if chart.b_field is None or chart.anti_lee is None:
            raise ModelError(
                f"chart {chart.name!r} of {structure.name!r} lacks B or the anti-Lee field"
            )
        if chart.alpha is None:
            raise ModelError(f"chart {chart.name!r} of {structure.name!r} lacks a potential")
        dom = chart.domain
        B, E = chart.b_field, chart.anti_lee
        items = {
            "d(phi) - lee ^ phi": ext_d(chart.phi) - wedge(chart.lee, chart.phi),
            "d_lee(alpha) - phi": d_twisted(chart.lee, chart.alpha) - chart.phi,
            "i_B(phi) + alpha": interior(B, chart.phi) + chart.alpha,
            "i_E(phi) + lee": interior(E, chart.phi) + chart.lee,
            "lee(B) - 1": forms.function_form(dom, _pair(chart.lee, B) - sx.ONE),
            "lee(E)": forms.function_form(dom, _pair(chart.lee, E)),
            "L_B(phi)": lie_derivative(B, chart.phi),
            "d(lee)": ext_d(chart.lee),
        }
        for label, delta in items.items():
            checks.append((chart.name, label, form_is_zero(delta, samples, tol, seed)))
        bracket = lie_bracket(B, E)
        checks.append((chart.name, "[B, E]", forms.field_is_zero(bracket, samples, tol, seed)))
        rank, _full = forms.nondegeneracy_rank(chart.phi, samples=min(samples, 60), seed=seed)
        min_rank = rank if min_rank is None else min(min_rank, rank)
    nondeg = min_rank == structure.dim
    passed = nondeg and all(c.passed for _, _, c in checks)
    return FirstKindReport(structure.name, tuple(checks), int(min_rank or 0), nondeg, passed)


def _pair(one_form: DifferentialForm, X: VectorField) -> Expr:
    """Pointwise pairing of a one-form with a vector field."""
    terms = [sx.mul(c, X.components[i]) for (i,), c in one_form.coeffs.items()]
    return sx.add(*terms) if terms else sx.ZERO


# ---------------------------------------------------------------------------
# integer torus action on the universal models


@dataclass(frozen=True)
class TorusActionReport:
    matrix: tuple[tuple[int, ...], ...]
    mu_out: tuple[float, ...]
    alpha_residual: float
    lee_residual: float
    phi_residual: float
    passed: bool


def sl_action(
    A: Sequence[Sequence[int]],
    structure: LcsStructure,
    samples: int = 200,
    tol: float = 1e-9,
    seed: int = 0,
) -> tuple[LcsStructure, TorusActionReport]:
    """Act by an integer unimodular matrix on a universal model.

    Torus angles transform by ``A``, their momenta by the inverse
    transpose, and the Lee coefficients ``mu`` by the inverse transpose as
    well; the potential, Lee form, and two-form are certified to pull back
    on the nose, so the action preserves the first-kind presentation.
    """
    meta = structure.metadata
    if "mu" not in meta:
        raise ModelError("sl_action expects a universal reduction model")
    k, N, mu = meta["k"], meta["N"], np.asarray(meta["mu"], dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape != (k, k):
        raise ModelError(f"matrix shape {A.shape} does not match k = {k}")
    if not np.allclose(A, np.round(A)):
        raise ModelError("matrix must be integer")
    A = np.round(A)
    det = round(float(np.linalg.det(A)))
    if abs(det) != 1:
        raise ModelError(f"matrix must be unimodular, got determinant {det}")
    Ainv = np.round(np.linalg.inv(A)).astype(int)
    if not np.array_equal(A.astype(int) @ Ainv, np.eye(k, dtype=int)):
        raise ModelError("integer inverse check failed")
    AinvT = Ainv.T
    mu_out = tuple(float(v) for v in AinvT @ mu)
    target = model_reduction_universal(k, N, mu_out)
    src, tgt = structure.charts[0], target.charts[0]

    comps = []
    for n in tgt.domain.names:
        if n.startswith("th"):
            i = int(n[2:]) - 1
            comps.append(sx.add(*(sx.mul(sx.Const(float(A[i, j])), sx.var(f"th{j+1}")) for j in range(k))))
        elif n.startswith("pth"):
            i = int(n[3:]) - 1
            comps.append(sx.add(*(sx.mul(sx.Const(float(AinvT[i, j])), sx.var(f"pth{j+1}")) for j in range(k))))
        else:
            comps.append(sx.var(n))
    F = SmoothMap(src.domain, tgt.domain, tuple(comps))

    res_alpha = form_is_zero(pullback(F, tgt.alpha) - src.alpha, samples, tol, seed)
    res_lee = form_is_zero(pullback(F, tgt.lee) - src.lee, samples, tol, seed)
    res_phi = form_is_zero(pullback(F, tgt.phi) - src.phi, samples, tol, seed)
    report = TorusActionReport(
        tuple(tuple(int(v) for v in row) for row in A.astype(int)),
        mu_out,
        res_alpha.max_residual,
        res_lee.max_residual,
        res_phi.max_residual,
        res_alpha.passed and res_lee.passed and res_phi.passed,
    )
    return target, report


# ---------------------------------------------------------------------------
# loops for period bookkeeping


def structure_lee_loops(structure: LcsStructure) -> list[SmoothMap]:
    """Canonical loops generating the angular directions of a chart domain.

    For each angular coordinate of the first chart, the loop varies that
    coordinate over a full turn with the other coordinates pinned at the
    centre of the box.
    """
    chart = structure.charts[0]
    dom = chart.domain
    unit = forms.linear_domain(f"loop_{dom.name}", ["t"], 0.0, 1.0)
    loops = []
    for c in dom.coords:
        if c.kind != ANGULAR:
            continue
        comps = []
        for other in dom.coords:
            if other.name == c.name:
                comps.append(sx.var("t"))
            elif other.kind == ANGULAR:
                comps.append(sx.ZERO)
            else:
                comps.append(sx.Const(0.5 * (other.lower + other.upper)))
        loops.append(SmoothMap(unit, dom, tuple(comps)))
    return loops
