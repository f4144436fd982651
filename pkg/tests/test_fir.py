import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from slskit.fir import (FirMatrix, SystemResponse, compose_of_from_sf_est, dare_solve, el1_norm,
                        fir_apply, fir_mul, fir_transpose, h2_norm_sq, inverse_stability,
                        l1_induced_norm, lqr_h2_cost, of_residual, sf_residual, sf_residual_fir,
                        times_zI_minus, write_impulse_csv, zI_minus)

finite = st.floats(-3, 3, allow_nan=False)


def fir_matrices(rows=None, cols=None, max_T=3):
    return st.tuples(st.integers(0, max_T), st.just(rows) if rows else st.integers(1, 3),
                     st.just(cols) if cols else st.integers(1, 3)).flatmap(
        lambda s: arrays(float, (s[0] + 1, s[1], s[2]), elements=finite).map(FirMatrix))


def fir_response(A, B2, T):
    """Truncated open-loop response ``R[k] = A^(k-1)`` with ``M = 0``."""
    n = A.shape[0]
    R = np.zeros((T + 1, n, n))
    for k in range(1, T + 1):
        R[k] = np.linalg.matrix_power(A, k - 1)
    return FirMatrix(R), FirMatrix.zeros(B2.shape[1], n, T)


# --- arithmetic -----------------------------------------------------------

def test_constructors():
    assert FirMatrix.identity(2).T == 0
    D = FirMatrix.delay(2, 3)
    assert D.T == 3 and D.is_strictly_proper() and np.array_equal(D[3], np.eye(2))
    assert FirMatrix.from_list([np.zeros((1, 2)), np.ones((1, 2))]).shape == (1, 2)
    with pytest.raises(ValueError):
        FirMatrix(np.zeros((2, 2)))


def test_coefficients_are_read_only():
    G = FirMatrix.identity(2)
    with pytest.raises(ValueError):
        G.coeffs[0, 0, 0] = 5.0


@given(fir_matrices(2, 2), fir_matrices(2, 2), fir_matrices(2, 2))
def test_mul_associative(G, H, K):
    assert fir_mul(fir_mul(G, H), K).equals(fir_mul(G, fir_mul(H, K)), tol=1e-9)


@given(fir_matrices(2, 3), fir_matrices(3, 2))
def test_mul_transpose(G, H):
    lhs = fir_transpose(fir_mul(G, H))
    assert lhs.equals(fir_mul(fir_transpose(H), fir_transpose(G)), tol=1e-12)


@given(fir_matrices(2, 2), fir_matrices(2, 2))
def test_add_pads_to_common_horizon(G, H):
    S = G + H
    assert S.T == max(G.T, H.T)
    assert (S - H).equals(G, tol=1e-12)


@given(fir_matrices(2, 3), st.integers(1, 6))
def test_apply_matches_product(G, N):
    # Feeding an impulse through G returns its coefficients.
    u = np.zeros((N, 3))
    u[0, 1] = 1.0
    y = fir_apply(G, u)
    for k in range(N):
        expect = G.coeffs[k][:, 1] if k <= G.T else np.zeros(2)
        assert np.allclose(y[k], expect)


def test_delay_and_advance_are_inverse():
    G = FirMatrix(np.arange(12, dtype=float).reshape(3, 2, 2))
    assert G.delayed(1).advance().equals(G)
    with pytest.raises(ValueError):
        G.advance()


def test_padded_and_truncated():
    G = FirMatrix.delay(1, 1)
    assert G.padded(4).T == 4 and G.padded(4).trimmed().T == 1
    assert G.truncated(0).max_abs() == 0.0
    with pytest.raises(ValueError):
        G.padded(0)


@given(fir_matrices())
def test_json_round_trip(G):
    assert FirMatrix.from_json(G.to_json()).equals(G)


# --- norms ----------------------------------------------------------------

def test_norm_examples():
    G = FirMatrix.constant([[3.0, 4.0]])
    assert h2_norm_sq(G) == 25.0
    assert el1_norm(FirMatrix.constant([[3.0, -4.0]])) == 7.0
    G2 = FirMatrix(np.array([[[1.0, -1.0], [0.0, 0.5]], [[2.0, 0.0], [0.0, -0.5]]]))
    assert l1_induced_norm(G2) == 4.0


@given(fir_matrices())
def test_norm_inequalities(G):
    h2 = np.sqrt(h2_norm_sq(G))
    assert h2 <= el1_norm(G) + 1e-12
    assert l1_induced_norm(G) <= el1_norm(G) + 1e-12
    assert el1_norm(G) <= np.sqrt(G.coeffs.size) * h2 + 1e-9


# --- achievability --------------------------------------------------------

@given(arrays(float, (3, 3), elements=st.floats(-0.9, 0.9)), st.integers(1, 5))
def test_open_loop_residual_is_truncation_tail(A, T):
    B2 = np.eye(3)[:, :1]
    R, M = fir_response(A, B2, T)
    tail = sf_residual_fir(A, B2, R, M)
    # Everything cancels except -A^T at lag T.
    assert np.allclose(tail.coeffs[:T], 0.0)
    assert np.allclose(tail.coeffs[T], -np.linalg.matrix_power(A, T))


def test_deadbeat_pair_is_exact():
    # x+ = x + u with u = -x reaches zero in one step: R = z^-1 I, M = -z^-1 I.
    A, B2 = np.eye(2), np.eye(2)
    assert sf_residual(A, B2, FirMatrix.delay(2, 1), -FirMatrix.delay(2, 1)) == 0.0


def test_sf_residual_checks():
    A, B2 = np.eye(2), np.eye(2)
    with pytest.raises(ValueError):
        sf_residual(A, B2, FirMatrix.identity(2), FirMatrix.delay(2))
    with pytest.raises(ValueError):
        sf_residual(A, B2, FirMatrix.delay(3), FirMatrix.delay(2))


@given(arrays(float, (2, 2), elements=st.floats(-1, 1)), fir_matrices(2, 2, max_T=2))
def test_shift_identities(A, G):
    G = G.delayed(1)
    lhs = zI_minus(A, G)
    rhs = G.advance().padded(G.T) - FirMatrix(np.einsum("ij,kjl->kil", A, G.coeffs))
    assert lhs.equals(rhs, tol=1e-12)
    assert fir_transpose(times_zI_minus(G, A)).equals(zI_minus(A.T, fir_transpose(G)), tol=1e-12)


def test_compose_of_from_deadbeat_pairs():
    # Deadbeat state feedback and deadbeat estimation on x+ = x + u, y = x.
    A, B2, C2 = np.eye(2), np.eye(2), np.eye(2)
    z1 = FirMatrix.delay(2, 1)
    resp = compose_of_from_sf_est(z1, -z1, z1, -z1, A)
    left, right = of_residual(A, B2, C2, resp)
    assert left == right == 0.0
    back = SystemResponse.from_phi(resp.phi(), 2, 2)
    assert back.L.equals(resp.L)
    assert SystemResponse.from_json(resp.to_json()).phi().equals(resp.phi())


def test_of_residual_needs_full_response():
    with pytest.raises(ValueError):
        of_residual(np.eye(1), np.eye(1), np.eye(1),
                    SystemResponse(FirMatrix.delay(1), FirMatrix.delay(1)))


# --- stability ------------------------------------------------------------

def test_inverse_stability_examples():
    v = inverse_stability(FirMatrix.delay(1, 1) * -2.0)
    assert not v.stable and np.isclose(v.spectral_radius, 2.0)
    v = inverse_stability(FirMatrix.delay(1, 1) * 0.5)
    assert v.stable and np.isclose(v.spectral_radius, 0.5)
    assert inverse_stability(FirMatrix.zeros(2, 2, 3)).spectral_radius == 0.0
    assert inverse_stability(FirMatrix.delay(1, 1) * 0.9995).inconclusive


@given(arrays(float, (3, 2, 2), elements=st.floats(-0.8, 0.8)))
def test_inverse_stability_matches_simulation(c):
    c[0] = 0.0
    D = FirMatrix(c)
    v = inverse_stability(D)
    # Impulse response of (I + D)^-1 via the recursion y[t] = -sum D[k] y[t-k].
    y = [np.eye(2)]
    for t in range(1, 400):
        acc = np.zeros((2, 2))
        for k in range(1, 3):
            if t - k >= 0:
                acc -= c[k] @ y[t - k]
        y.append(acc)
    growth = np.abs(y[-1]).max()
    if v.spectral_radius < 0.95:
        assert growth < 1e-3
    elif v.spectral_radius > 1.05:
        assert growth > 1e3


# --- Riccati --------------------------------------------------------------

def test_dare_scalar_closed_form():
    sol = dare_solve(0.5, 1.0, 1.0, 1.0)
    assert np.isclose(sol.P[0, 0], (0.25 + np.sqrt(4.0625)) / 2, rtol=1e-10)


@given(st.integers(0, 2**31 - 1))
def test_dare_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n, m = 4, 2
    A = rng.normal(size=(n, n))
    A *= 1.1 / np.max(np.abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(n, m))
    Q, Rw = np.eye(n), np.eye(m)
    ref = sla.solve_discrete_are(A, B, Q, Rw)
    assert np.allclose(dare_solve(A, B, Q, Rw).P, ref, rtol=1e-7, atol=1e-8)
    assert np.isclose(lqr_h2_cost(A, np.eye(n), B, Q, Rw), np.trace(ref), rtol=1e-7)


def test_dare_rejects_bad_damping():
    with pytest.raises(ValueError):
        dare_solve(0.5, 1.0, 1.0, 1.0, damping=0.0)


def test_write_impulse_csv(tmp_path):
    p = tmp_path / "g.csv"
    write_impulse_csv(FirMatrix.delay(1, 1), p)
    assert p.read_text().splitlines() == ["k,g_0_0", "0,0", "1,1"]
