"""Catalog structures: construction, defining identities, atlas consistency.

The validator results are cross-checked here against raw-array oracles
(finite-difference Jacobians, matrix contractions) so the symbolic calculus
and the oracles must agree independently.
"""

import dataclasses

import numpy as np
import pytest

import lcskit.forms as forms
import lcskit.models as models
import lcskit.symexpr as sx
import lcskit.twisted as twisted
from oracle_utils import eval_form_on_vectors, fd_jacobian


# ---------------------------------------------------------------------------
# construction and error cases


def test_liouville_structure_is_exact_symplectic():
    S = models.model_liouville(2)
    assert S.dim == 4
    assert S.kind == models.EXACT
    chart = S.charts[0]
    assert forms.form_is_zero(forms.ext_d(chart.phi)).passed
    assert forms.forms_equal(forms.ext_d(chart.alpha), chart.phi).passed
    _, full = forms.nondegeneracy_rank(chart.phi)
    assert full
    assert chart.lee.is_structurally_zero


def test_liouville_rejects_nonpositive_n():
    with pytest.raises(models.ModelError):
        models.model_liouville(0)


@pytest.mark.parametrize("k,N", [(0, 1), (1, 1), (2, 3), (1, 9)])
def test_universal_dimension(k, N):
    S = models.model_reduction_universal(k, N, (1.0,) * k)
    assert S.dim == 2 * (k + N + 1)
    assert len(S.charts) == 1


def test_universal_rejects_mu_length_mismatch():
    with pytest.raises(models.ModelError):
        models.model_reduction_universal(2, 1, (1.0,))


def test_universal_rejects_empty():
    with pytest.raises(models.ModelError):
        models.model_reduction_universal(0, 0, ())


def test_sphere_circle_rejects_small_and_degenerate():
    with pytest.raises(models.ModelError):
        models.model_sphere_circle(1)
    with pytest.raises(models.ModelError):
        models.model_sphere_circle(2, q=0.0)


def test_sphere_atlas_counts_and_on_sphere():
    amb = models.sphere_circle_ambient(2)
    charts = models.sphere_graph_charts(2, amb)
    assert len(charts) == 8  # one per dropped coordinate and sign
    for _name, P in charts:
        env = P.source.sample_points(40, seed=1)
        vals = forms.evaluate_map(P, env)
        r2 = sum(vals[n] ** 2 for n in amb.names if n != "theta")
        assert np.max(np.abs(r2 - 1.0)) < 1e-12


# ---------------------------------------------------------------------------
# first-kind identities


def test_universal_first_kind_report():
    S = models.model_reduction_universal(1, 1, (1.0,))
    rep = models.validate_first_kind(S, samples=120, tol=1e-11, seed=3)
    assert rep.passed
    assert rep.nondegenerate and rep.min_rank == 6
    assert {lbl for _, lbl, _ in rep.checks} == set(models.IDENTITY_LABELS)
    assert rep.worst() <= 1e-11


def test_universal_first_kind_irrational_mu():
    S = models.model_reduction_universal(2, 1, (1.0, np.sqrt(2.0)))
    rep = models.validate_first_kind(S, samples=80, tol=1e-10, seed=0)
    assert rep.passed and rep.min_rank == 8


def test_sphere_circle_first_kind():
    S = models.model_sphere_circle(2, q=1.0)
    assert len(S.charts) == 8
    rep = models.validate_first_kind(S, samples=80, tol=1e-9, seed=0)
    assert rep.passed
    assert rep.min_rank == 4


def test_sphere_circle_scaled_first_kind():
    rep = models.validate_first_kind(
        models.model_sphere_circle(2, q=2.5), samples=60, tol=1e-9, seed=5
    )
    assert rep.passed


def test_validate_requires_distinguished_fields():
    with pytest.raises(models.ModelError):
        models.validate_first_kind(models.model_liouville(1))  # no B field
    S = models.model_reduction_universal(1, 0, (1.0,))
    stripped = dataclasses.replace(S.charts[0], alpha=None)
    with pytest.raises(models.ModelError):
        models.validate_first_kind(
            models.LcsStructure(S.name, S.kind, (stripped,), metadata=S.metadata)
        )


# ---------------------------------------------------------------------------
# oracle cross-checks


def test_sphere_potential_matches_ambient_oracle():
    # The chart potential must equal the scaled ambient contact form applied
    # to vectors pushed forward by a finite-difference Jacobian of the chart
    # parametrization -- a route that never touches the symbolic pullback.
    q = 1.5
    S = models.model_sphere_circle(2, q=q)
    chart = S.charts[2]
    dom, P = chart.domain, chart.parametrization
    names = dom.names
    amb_names = P.target.names
    env = dom.sample_points(5, seed=11)
    rng = np.random.default_rng(7)

    def map_func(v):
        e = {n: v[j] for j, n in enumerate(names)}
        return np.array([float(sx.evaluate(c, e)) for c in P.components])

    for i in range(5):
        x = np.array([float(env[n][i]) for n in names])
        J = fd_jacobian(map_func, x, 1e-6)
        img = map_func(x)
        coeff = {}
        for j in (1, 2):
            coeff[(amb_names.index(f"x{j}"),)] = 0.5 * q * img[amb_names.index(f"y{j}")]
            coeff[(amb_names.index(f"y{j}"),)] = -0.5 * q * img[amb_names.index(f"x{j}")]
        point = {n: float(env[n][i]) for n in names}
        alpha_vec = np.array(
            [
                float(sx.evaluate(chart.alpha.coefficient((k,)), point))
                for k in range(dom.dim)
            ]
        )
        for _ in range(3):
            v = rng.normal(size=dom.dim)
            oracle = eval_form_on_vectors(coeff, [J @ v])
            assert abs(float(alpha_vec @ v) - oracle) < 1e-6


def test_anti_lee_contraction_matrix_route():
    # i_E phi = -lee, checked by raw matrix contraction rather than the
    # symbolic interior product.
    S = models.model_sphere_circle(2, q=2.0)
    chart = S.charts[5]
    dom = chart.domain
    env = dom.sample_points(30, seed=4)
    M = forms.form_matrix(chart.phi, env)
    E = np.stack(
        [
            np.broadcast_to(np.asarray(sx.evaluate(c, env), dtype=float), (30,))
            for c in chart.anti_lee.components
        ],
        axis=-1,
    )
    contraction = np.einsum("ni,nij->nj", E, M)
    lee_vec = np.zeros(dom.dim)
    lee_vec[dom.index("theta")] = 1.0
    assert np.max(np.abs(contraction + lee_vec)) < 1e-9


def test_universal_lee_recovered_pointwise():
    # Independent recovery: solve d(phi) = omega ^ phi pointwise and compare
    # with the declared Lee coefficients.
    S = models.model_reduction_universal(1, 1, (0.75,))
    chart = S.charts[0]
    data = twisted.extract_lee(chart.phi, samples=25, seed=2)
    dom = chart.domain
    expect = np.zeros(dom.dim)
    expect[dom.index("s")] = 1.0
    expect[dom.index("th1")] = 0.75
    assert np.max(np.abs(data.sample_values - expect)) < 1e-8


def test_sphere_lee_recovered_pointwise():
    S = models.model_sphere_circle(2)
    chart = S.charts[0]
    data = twisted.extract_lee(chart.phi, samples=20, seed=6)
    dom = chart.domain
    expect = np.zeros(dom.dim)
    expect[dom.index("theta")] = 1.0
    assert np.max(np.abs(data.sample_values - expect)) < 1e-7


# ---------------------------------------------------------------------------
# loops, periods, atlas overlaps


def test_universal_loop_periods_and_lattice():
    mu = (1.0, np.sqrt(2.0))
    S = models.model_reduction_universal(2, 1, mu)
    loops = models.structure_lee_loops(S)
    assert len(loops) == 2
    per = [twisted.period(S.charts[0].lee, lp) for lp in loops]
    assert np.allclose(per, mu, atol=1e-9)
    lat = twisted.period_lattice(S.charts[0].lee, loops)
    assert lat.rank == 2 and not lat.integral


def test_sphere_loop_period_is_one():
    S = models.model_sphere_circle(2)
    loops = models.structure_lee_loops(S)
    assert len(loops) == 1
    assert abs(twisted.period(S.charts[0].lee, loops[0]) - 1.0) < 1e-12
    lat = twisted.period_lattice(S.charts[0].lee, loops)
    assert lat.rank == 1 and lat.integral


def test_sphere_overlap_consistency():
    S = models.model_sphere_circle(2, q=1.0)
    rep = models.sphere_overlap_report(S, samples=40, tol=1e-9, seed=0)
    assert rep.passed
    assert rep.pairs_checked > 0 and rep.samples_used > 0
    assert rep.max_residual <= 1e-9


def test_overlap_requires_atlas():
    with pytest.raises(models.ModelError):
        models.sphere_overlap_report(models.model_liouville(1))


# ---------------------------------------------------------------------------
# integer torus action


def test_sl_action_shear():
    S = models.model_reduction_universal(2, 0, (1.0, np.sqrt(2.0)))
    T, rep = models.sl_action([[1, 1], [0, 1]], S, samples=60, tol=1e-9)
    assert rep.passed
    assert np.allclose(rep.mu_out, [1.0, np.sqrt(2.0) - 1.0], atol=1e-12)
    assert T.metadata["mu"] == rep.mu_out
    assert max(rep.alpha_residual, rep.lee_residual, rep.phi_residual) <= 1e-9


def test_sl_action_identity_fixes_everything():
    S = models.model_reduction_universal(1, 1, (0.5,))
    T, rep = models.sl_action([[1]], S)
    assert rep.passed and rep.mu_out == (0.5,)
    assert T.metadata["mu"] == (0.5,)


def test_sl_action_composes_like_inverse_transpose():
    mu = (0.3, 0.7)
    S = models.model_reduction_universal(2, 0, mu)
    A = [[2, 1], [1, 1]]
    T1, rep1 = models.sl_action(A, S)
    Ainv = [[1, -1], [-1, 2]]
    _T2, rep2 = models.sl_action(Ainv, T1)
    assert rep1.passed and rep2.passed
    assert np.allclose(rep2.mu_out, mu, atol=1e-12)


def test_sl_action_rejections():
    S = models.model_reduction_universal(1, 0, (1.0,))
    with pytest.raises(models.ModelError):
        models.sl_action([[2]], S)  # determinant 2
    with pytest.raises(models.ModelError):
        models.sl_action([[0.5]], S)  # not integer
    with pytest.raises(models.ModelError):
        models.sl_action([[1, 0], [0, 1]], S)  # wrong shape for k=1
    with pytest.raises(models.ModelError):
        models.sl_action([[1]], models.model_liouville(1))  # not a universal model
