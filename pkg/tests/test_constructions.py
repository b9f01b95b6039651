import math

import numpy as np
import pytest
import scipy.linalg as sla

from gfl import constructions as C
from gfl.densela import heat_kernel, operator_norm, pinv_psd, sqrt_pinv, subspace_projector, sym_eig
from gfl.graph import build_incidence, sample_demands
from gfl.transformer import efficient_forward, forward, forward_eig

from conftest import ihat, lap, small_graphs


def run_series(g, Psi, weights):
    Bt = build_incidence(g).T
    return forward(C.series_input(Bt, Psi), weights)


def test_gd_single_step_exact(path2):
    psi = np.array([[1.0], [-1.0]]) / np.sqrt(2)
    out = run_series(path2, psi, C.electric_gd_weights(1, 1, 0.5, 1))[-1].block("phi").T
    np.testing.assert_allclose(out, pinv_psd(lap(path2)) @ psi, atol=1e-15)


def test_gd_zero_step_stays_zero(k3):
    states = run_series(k3, ihat(3), C.electric_gd_weights(3, 3, 0.0, 5))
    for s in states:
        np.testing.assert_array_equal(s.block("phi"), 0)


def test_gd_k3_bound(k3):
    out = run_series(k3, ihat(3), C.electric_gd_weights(3, 3, 1 / 3, 20))[-1].block("phi").T
    err = operator_norm(out - ihat(3) / 3)
    assert err <= math.exp(-(1 / 3) * 20 * 3 / 2) / math.sqrt(3)


def test_gd_rejects_large_step():
    with pytest.raises(C.ConstraintError):
        C.electric_gd_weights(3, 3, 1.0, 2, lambda_max_hint=3.0)


def test_sqrt_coefficients():
    a = C.sqrt_coefficients(0.25, 5)
    assert a[0] == pytest.approx(0.5)
    assert a[1] == pytest.approx(0.25)
    expected = [math.sqrt(0.25) * math.comb(2 * l, l) / 4**l for l in range(5)]
    np.testing.assert_allclose(a, expected, rtol=1e-15)


def test_sqrt_series_path2_one_layer(path2):
    out = run_series(path2, ihat(2), C.sqrt_series_weights(1, 2, 2.0, 1))[-1].block("phi").T
    np.testing.assert_allclose(out, ihat(2) / math.sqrt(2), atol=1e-15)


def test_sqrt_series_converges():
    g = small_graphs(1, 8)[0]
    L = lap(g)
    lam = sym_eig(L).eigenvalues
    out = run_series(g, ihat(8), C.sqrt_series_weights(g.d, 8, lam[-1], 200))[-1].block("phi").T
    target = sqrt_pinv(L)
    bound = math.exp(-200 * lam[1] / lam[-1]) / (lam[1] * math.sqrt(200 / lam[-1]))
    assert np.linalg.norm(out - target, axis=0).max() <= bound


def test_heat_coefficients():
    a = C.heat_coefficients(0.7, 6)
    np.testing.assert_allclose(a, [(-0.7) ** l / math.factorial(l) for l in range(6)])
    assert a[2] == pytest.approx(0.7**2 / 2)


def test_heat_series_zero_temperature(k3):
    out = run_series(k3, ihat(3), C.heat_series_weights(3, 3, 0.0, 4))
    np.testing.assert_allclose(out[1].block("phi").T, ihat(3), atol=1e-15)
    np.testing.assert_allclose(out[-1].block("phi").T, ihat(3), atol=1e-15)


def test_heat_series_path2_bound(path2):
    out = run_series(path2, ihat(2), C.heat_series_weights(1, 2, 0.5, 16))[-1].block("phi").T
    err = operator_norm(out - sla.expm(-0.5 * lap(path2)) @ ihat(2))
    assert err <= 2.0**-7


def test_heat_series_matches_expm():
    g = small_graphs(2, 6)[1]
    L = lap(g)
    Psi = sample_demands(6, 3, False, 0).psi
    out = run_series(g, Psi, C.heat_series_weights(g.d, 3, 0.3, 60))[-1].block("phi").T
    np.testing.assert_allclose(out, sla.expm(-0.3 * L) @ Psi, atol=1e-10)


def test_electric_fast_path2_hand_value(path2):
    Z0, weights = C.electric_fast_build(lap(path2), 0.25, 1)
    out = forward(Z0, weights)[-1]
    np.testing.assert_allclose(out.block("phi"), 0.375 * ihat(2), atol=1e-15)
    err = operator_norm(out.block("phi") - 0.5 * ihat(2))
    assert err == pytest.approx(0.125)
    assert err <= 0.5 * math.exp(-0.25 * 2 * 2)


def test_electric_fast_gamma_squares():
    g = small_graphs(1, 6)[0]
    L = lap(g)
    delta = 1 / sym_eig(L).lambda_max
    Z0, weights = C.electric_fast_build(L, delta, 3)
    states = forward(Z0, weights)
    G0 = ihat(6) - delta * L
    for l, s in enumerate(states):
        np.testing.assert_allclose(s.block("gamma"), np.linalg.matrix_power(G0, 2**l), atol=1e-12)
        np.testing.assert_allclose(s.block("lam"), np.eye(6), atol=0)


def test_electric_fast_k3(k3):
    Z0, weights = C.electric_fast_build(lap(k3), 1 / 3, 4)
    err = operator_norm(forward(Z0, weights)[-1].block("phi") - ihat(3) / 3)
    assert err <= (1 / 3) * math.exp(-(1 / 3) * 16 * 3)


def test_heat_fast_path2(path2):
    L = lap(path2)
    Z0, weights = C.heat_fast_build(L, 0.5, 2)
    out = forward(Z0, weights)[-1].block("phi")
    err = operator_norm(out - heat_kernel(L, 0.5))
    # on the lambda = 2 direction the network computes (1 - 1/9)^9
    assert err == pytest.approx(abs((8 / 9) ** 9 - math.exp(-1)), rel=1e-12)
    assert err <= 3.0**-1 * 0.5**2 * 2**2


def test_heat_fast_degenerate_cases(k3):
    L = lap(k3)
    for depth in range(4):
        Z0, weights = C.heat_fast_build(L, 0.0, depth)
        np.testing.assert_allclose(forward(Z0, weights)[-1].block("phi"), np.eye(3), atol=1e-15)
    Z0, weights = C.heat_fast_build(L, 0.2, 0)
    assert weights == []
    np.testing.assert_allclose(Z0.block("phi"), np.eye(3) - 0.2 * L)


def test_heat_fast_precondition(k3):
    with pytest.raises(C.ConstraintError):
        C.heat_fast_build(lap(k3), 2.0, 1)


def ortho_run(Phi, i, k):
    Bt = np.zeros((1, Phi.shape[0]))
    return forward_eig(C.subspace_input(Bt, Phi), [C.ortho_layer_weights(i, k, 1)])[-1].block("phi").T


def test_ortho_last_column_only_normalised():
    _, H = C._selectors(3, 3)
    assert not H.any()
    Phi = np.random.default_rng(0).standard_normal((5, 3))
    out = ortho_run(Phi, 3, 3)
    np.testing.assert_allclose(out[:, :2], Phi[:, :2] / np.linalg.norm(Phi[:, :2], axis=0), atol=1e-15)
    np.testing.assert_allclose(out[:, 2], Phi[:, 2] / np.linalg.norm(Phi[:, 2]), atol=1e-15)


def test_ortho_hand_step():
    Phi = np.array([[1.0, 1 / math.sqrt(2)], [0.0, 1 / math.sqrt(2)]])
    out = ortho_run(Phi, 1, 2)
    np.testing.assert_allclose(out[:, 0], np.array([1.0, -1.0]) / math.sqrt(2), atol=1e-15)
    np.testing.assert_allclose(out[:, 1], Phi[:, 1], atol=1e-15)


def test_ortho_orthonormal_input_unchanged():
    Q = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 3)))[0]
    for i in (1, 2, 3):
        np.testing.assert_allclose(ortho_run(Q, i, 3), Q, atol=1e-12)


def subspace_run(g, Phi0, k, units, mode="top", mu=None):
    Bt = build_incidence(g).T
    w = C.subspace_weights(Bt.shape[0], k, units * (k + 1), mode, mu)
    return forward_eig(C.subspace_input(Bt, Phi0), w)


def test_subspace_path2_top(path2):
    out = subspace_run(path2, np.array([[0.9], [0.1]]), 1, 1)[-1].block("phi").T
    np.testing.assert_allclose(np.abs(out[:, 0]), [1 / math.sqrt(2)] * 2, atol=1e-15)
    assert out[0, 0] == pytest.approx(-out[1, 0])


def test_subspace_k3_top(k3):
    Phi0 = np.random.default_rng(2).standard_normal((3, 2))
    out = subspace_run(k3, Phi0, 2, 1)[-1].block("phi").T
    assert np.abs(subspace_projector(out) - ihat(3)).max() <= 1e-8


def test_subspace_path2_bottom(path2):
    out = subspace_run(path2, np.array([[0.9], [0.1]]), 1, 30, "bottom", 2.0)[-1].block("phi").T
    np.testing.assert_allclose(np.abs(out[:, 0]), [1 / math.sqrt(2)] * 2, atol=1e-12)
    assert out[0, 0] == pytest.approx(out[1, 0])


def test_subspace_layer_count_checked():
    with pytest.raises(C.ConstraintError):
        C.subspace_weights(3, 2, 4)
    with pytest.raises(C.ConstraintError):
        C.subspace_weights(3, 2, 6, "bottom", None)


def test_efficient_config_electric_blocks():
    delta = 0.1
    w = C.efficient_config("electric_gd", 2, 1, delta=delta)[0]
    assert (w.alphaV, w.alphaQ, w.alphaK, w.alphaR) == (0.0, 1.0, 1.0, 0.0)
    I, Z = np.eye(2), np.zeros((2, 2))
    np.testing.assert_array_equal(w.WVphi, np.block([[Z, Z], [Z, -delta * I]]))
    np.testing.assert_array_equal(w.WRphi, np.block([[Z, Z], [delta * I, Z]]))


def test_efficient_config_heat_coefficients():
    cfg = C.efficient_config("heat_series", 1, 5, s=0.4)
    for l, w in enumerate(cfg):
        assert w.WRphi[1, 0] == pytest.approx((-0.4) ** l / math.factorial(l))


def test_efficient_config_rejects_fast_kinds():
    with pytest.raises(ValueError):
        C.efficient_config("electric_fast", 1, 2, delta=0.1)


@pytest.mark.parametrize("kind", ["electric_gd", "sqrt_series", "heat_series", "subspace_top_k"])
def test_edge_block_constant(kind):
    g = small_graphs(1, 6)[0]
    Bt = build_incidence(g).T
    lam_max = sym_eig(lap(g)).lambda_max
    k = 2
    if kind == "electric_gd":
        w, Z0 = C.electric_gd_weights(g.d, k, 1 / lam_max, 10), C.series_input(Bt, ihat(6)[:, :k])
    elif kind == "sqrt_series":
        w, Z0 = C.sqrt_series_weights(g.d, k, lam_max, 10), C.series_input(Bt, ihat(6)[:, :k])
    elif kind == "heat_series":
        w, Z0 = C.heat_series_weights(g.d, k, 0.1, 10), C.series_input(Bt, ihat(6)[:, :k])
    else:
        w, Z0 = C.subspace_weights(g.d, k, 9), C.subspace_input(Bt, np.eye(6)[:, :k])
    run = forward_eig if kind.startswith("subspace") else forward
    for s in run(Z0, w):
        assert np.abs(s.block("B") - Bt).max() <= 1e-12


def test_taskspec_json_roundtrip():
    t = C.TaskSpec("heat_series", 12, s=0.5, k=3)
    assert C.TaskSpec.from_json(t.to_json()) == t


def test_taskspec_validation():
    with pytest.raises(ValueError):
        C.TaskSpec("nope", 3)
    with pytest.raises(ValueError):
        C.TaskSpec("electric_gd", -1, delta=0.1)
    with pytest.raises(C.ConstraintError):
        C.TaskSpec("sqrt_series", 3).check()
    with pytest.raises(C.ConstraintError):
        C.TaskSpec("heat_series", 3, s=-1.0).check()
    with pytest.raises(C.ConstraintError):
        C.TaskSpec("subspace_bottom_k", 4, k=1, mu=1.0).check(lambda_max=2.0)
    C.TaskSpec("subspace_bottom_k", 4, k=1, mu=2.0).check(lambda_max=2.0)


def test_efficient_subspace_trajectory_matches_full():
    g = small_graphs(2, 6)[1]
    Bt = build_incidence(g).T
    Phi0 = np.linalg.qr(np.random.default_rng(3).standard_normal((6, 2)))[0]
    full = subspace_run(g, Phi0, 2, 2)
    traj = efficient_forward(*C.efficient_input(Bt, Phi0, "subspace_top_k"),
                             C.efficient_config("subspace_top_k", 2, 6), normalize_rows_of=slice(2, 4))
    for s, P in zip(full, traj.Phi):
        np.testing.assert_allclose(s.block("phi"), P[2:], atol=1e-10)
