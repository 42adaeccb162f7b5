"""Numerical companions to the symbolic layer.

Provides ODE flows of symbolic vector fields (with variational Jacobians,
so that derivative data stays integrator-accurate instead of relying on
finite differences), point maps that exist only numerically (flow
compositions), pointwise pullbacks through such maps, and small linear
algebra helpers (numerical rank, kernels, subspace distances).

Flows integrate in unwrapped coordinates; angular coordinates are treated
as ordinary reals during integration (fields on such domains are periodic
by construction), and only :func:`wrap_point` reduces them modulo 1.
Linear coordinates are watched with terminal events: leaving the declared
chart box raises :class:`FlowEscapeError`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import forms, symexpr as sx
from .forms import ANGULAR, LINEAR, CoordinateDomain, DifferentialForm, SmoothMap, VectorField


class FlowEscapeError(Exception):
    """A trajectory left its chart box before the requested time.

    Attributes:
        point: state at escape (unwrapped coordinates).
        time: flow time at which the escape was detected.
    """

    def __init__(self, message: str, point: np.ndarray, time: float):
        super().__init__(message)
        self.point = np.asarray(point)
        self.time = float(time)


# ---------------------------------------------------------------------------
# compiling symbolic objects to vector callables


def compile_exprs(exprs: Sequence[sx.Expr], names: Sequence[str]) -> Callable[[np.ndarray], np.ndarray]:
    """Turn expressions into a function of a coordinate vector (name order)."""
    exprs = tuple(exprs)
    names = tuple(names)

    def func(x: np.ndarray) -> np.ndarray:
        env = {n: float(v) for n, v in zip(names, x)}
        return np.array([sx.evaluate(e, env) for e in exprs], dtype=float)

    return func


def field_function(X: VectorField) -> Callable[[np.ndarray], np.ndarray]:
    return compile_exprs(X.components, X.domain.names)


def field_jacobian_function(X: VectorField) -> Callable[[np.ndarray], np.ndarray]:
    names = X.domain.names
    jac_exprs = [[sx.diff(c, n) for n in names] for c in X.components]
    flat = [e for row in jac_exprs for e in row]
    func = compile_exprs(flat, names)
    d = X.domain.dim

    def jac(x: np.ndarray) -> np.ndarray:
        return func(x).reshape(d, d)

    return jac


def map_function(F: SmoothMap) -> Callable[[np.ndarray], np.ndarray]:
    return compile_exprs(F.components, F.source.names)


def map_jacobian_function(F: SmoothMap) -> Callable[[np.ndarray], np.ndarray]:
    rows = F.jacobian()
    flat = [e for row in rows for e in row]
    func = compile_exprs(flat, F.source.names)
    shape = (F.target.dim, F.source.dim)

    def jac(x: np.ndarray) -> np.ndarray:
        return func(x).reshape(shape)

    return jac


def wrap_point(domain: CoordinateDomain, x: np.ndarray) -> np.ndarray:
    """Reduce angular coordinates modulo 1, leave linear ones alone."""
    out = np.array(x, dtype=float)
    for i, c in enumerate(domain.coords):
        if c.kind == ANGULAR:
            out[i] = out[i] % 1.0
    return out


def point_env(domain: CoordinateDomain, x: np.ndarray) -> dict[str, float]:
    return {n: float(v) for n, v in zip(domain.names, x)}


# ---------------------------------------------------------------------------
# flows


@dataclass
class FlowResult:
    point: np.ndarray
    jacobian: np.ndarray | None


def flow(
    X: VectorField,
    x0: np.ndarray,
    time: float,
    with_jacobian: bool = False,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    box_slack: float = 0.0,
    check_escape: bool = True,
) -> FlowResult:
    """Integrate the flow of ``X`` for ``time`` starting at ``x0``.

    With ``with_jacobian`` the variational equation dJ/dt = DX(x) J is
    integrated alongside, so the returned Jacobian of the time-T flow map
    has integrator accuracy.  Leaving the chart box (linear coordinates
    only, with ``box_slack``) raises :class:`FlowEscapeError`.
    """
    d = X.domain.dim
    x0 = np.asarray(x0, dtype=float)
    f = field_function(X)
    Df = field_jacobian_function(X) if with_jacobian else None

    if with_jacobian:
        def rhs(t, state):
            x = state[:d]
            J = state[d:].reshape(d, d)
            return np.concatenate([f(x), (Df(x) @ J).ravel()])

        y0 = np.concatenate([x0, np.eye(d).ravel()])
    else:
        def rhs(t, state):
            return f(state)

        y0 = x0

    events = _escape_events(X.domain, d, box_slack) if check_escape else None
    if time == 0.0:
        return FlowResult(x0.copy(), np.eye(d) if with_jacobian else None)
    sol = solve_ivp(
        rhs, (0.0, time), y0, method="RK45", rtol=rtol, atol=atol,
        events=events, dense_output=False,
    )
    if events and any(len(t) for t in sol.t_events):
        t_esc = min(float(t[0]) for t in sol.t_events if len(t))
        state = sol.y[:d, -1]
        raise FlowEscapeError(
            f"flow of field on {X.domain.name!r} left the chart box at t={t_esc:.3g}",
            state, t_esc,
        )
    if not sol.success:
        raise FlowEscapeError(
            f"integration failed on {X.domain.name!r}: {sol.message}", sol.y[:d, -1], time
        )
    end = sol.y[:, -1]
    if with_jacobian:
        return FlowResult(end[:d], end[d:].reshape(d, d))
    return FlowResult(end, None)


def _escape_events(domain: CoordinateDomain, d: int, slack: float):
    events = []
    for i, c in enumerate(domain.coords):
        if c.kind != LINEAR:
            continue
        lo, hi = c.lower - slack, c.upper + slack

        def low_event(t, y, i=i, lo=lo):
            return y[i] - lo

        def high_event(t, y, i=i, hi=hi):
            return hi - y[i]

        low_event.terminal = True
        high_event.terminal = True
        events.extend([low_event, high_event])
    return events or None


# ---------------------------------------------------------------------------
# point maps (value + Jacobian at a point)


class PointMap:
    """A map known pointwise, with Jacobian: ``call(x) -> (value, J)``."""

    source: CoordinateDomain
    target: CoordinateDomain

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:  # pragma: no cover
        raise NotImplementedError


class SymbolicPointMap(PointMap):
    """Adapter putting a :class:`SmoothMap` behind the pointwise interface."""

    def __init__(self, F: SmoothMap):
        self.source = F.source
        self.target = F.target
        self.map = F
        self._value = map_function(F)
        self._jac = map_jacobian_function(F)

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return self._value(x), self._jac(x)


class ComposedPointMap(PointMap):
    def __init__(self, outer: PointMap, inner: PointMap):
        if outer.source != inner.target:
            raise forms.DomainMismatchError("composition domains do not line up")
        self.source = inner.source
        self.target = outer.target
        self.outer = outer
        self.inner = inner

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mid, J1 = self.inner(x)
        out, J2 = self.outer(mid)
        return out, J2 @ J1


def numeric_pullback(
    a: DifferentialForm, point_map: PointMap, x: np.ndarray
) -> dict[tuple[int, ...], float]:
    """Coefficients of (F* a) at ``x`` for a pointwise-defined F.

    Returns a dict over increasing multi-indices of the source domain.
    """
    if a.domain != point_map.target:
        raise forms.DomainMismatchError("form does not live on the map's target")
    value, J = point_map(x)
    env = point_env(a.domain, value)
    coeff_vals = {idx: float(sx.evaluate(c, env)) for idx, c in a.coeffs.items()}
    k = a.degree
    src_dim = point_map.source.dim
    out: dict[tuple[int, ...], float] = {}
    if k == 0:
        return {(): sum(coeff_vals.values())} if coeff_vals else {(): 0.0}
    for I in itertools.combinations(range(src_dim), k):
        total = 0.0
        cols = J[:, I]
        for Jidx, c in coeff_vals.items():
            total += c * float(np.linalg.det(cols[Jidx, :]))
        out[I] = total
    return out


def symbolic_form_values_at(
    a: DifferentialForm, x: np.ndarray
) -> dict[tuple[int, ...], float]:
    env = point_env(a.domain, x)
    return {idx: float(sx.evaluate(c, env)) for idx, c in a.coeffs.items()}


def pullback_residual_at(
    symbolic: DifferentialForm, a: DifferentialForm, point_map: PointMap, x: np.ndarray
) -> float:
    """Max coefficient gap between a symbolic form and a numeric pullback."""
    got = numeric_pullback(a, point_map, x)
    want = symbolic_form_values_at(symbolic, x)
    keys = set(got) | set(want)
    return max(abs(got.get(k, 0.0) - want.get(k, 0.0)) for k in keys) if keys else 0.0


# ---------------------------------------------------------------------------
# linear algebra helpers


def map_min_rank(F: SmoothMap, samples: int = 40, seed: int = 0, margin: float = 0.0) -> int:
    """Minimum numerical rank of a map's Jacobian over sampled points."""
    env = F.source.sample_points(samples, seed, margin)
    rows = []
    for row in F.jacobian():
        rows.append(
            [
                np.broadcast_to(
                    np.atleast_1d(np.asarray(sx.evaluate(e, env), dtype=float)), (samples,)
                )
                for e in row
            ]
        )
    J = np.array(rows)  # (target_dim, source_dim, samples)
    worst = min(F.source.dim, F.target.dim)
    for i in range(samples):
        worst = min(worst, numerical_rank(J[:, :, i]))
    return worst


def numerical_rank(M: np.ndarray, rel_threshold: float = 1e-10) -> int:
    """Rank by singular values above ``rel_threshold`` times the largest."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_threshold * s[0]))


def kernel_basis(M: np.ndarray, rel_threshold: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical null space of M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    u, s, vt = np.linalg.svd(M)
    top = s[0] if s.size and s[0] > 0 else 1.0
    rank = int(np.sum(s > rel_threshold * top))
    return vt[rank:].T


def subspace_gap(A: np.ndarray, B: np.ndarray) -> float:
    """Distance between column spans: sine of the largest principal angle.

    Returns 2.0 if the spans have different dimensions (incomparable).
    """
    qa, _ = np.linalg.qr(np.atleast_2d(A))
    qb, _ = np.linalg.qr(np.atleast_2d(B))
    if qa.shape[1] != qb.shape[1]:
        return 2.0
    if qa.shape[1] == 0:
        return 0.0
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    cos_min = float(np.clip(s.min(), -1.0, 1.0))
    return float(np.sqrt(max(0.0, 1.0 - cos_min**2)))
