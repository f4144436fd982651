import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import of_l1_oracle, of_oracle
from slskit import plant as P
from slskit.of_synth import (AdmmConfig, OfProblem, RegularizerWeights, actuator_norm,
                             admm_solve, check_response, full_locality, h2_cost,
                             h2_joint_reg_solve, l1_cost, l1_tradeoff, llqg_solve,
                             mixed_h2_l1_solve, of_locality, project_row_l1_ball,
                             project_weighted_l1_ball, prox_group_soft_threshold, reweight_l1,
                             sensor_col_norms, sensor_norm, sensor_regularization,
                             write_trace_csv)
from slskit.sparsity import distance_matrix


@pytest.fixture(scope="module")
def tiny():
    return P.build_chain(2, coupling=0.4, diag=1.1)


@pytest.fixture(scope="module")
def tiny_base(tiny):
    S = full_locality(tiny, 3)
    resp, st_ = llqg_solve(tiny, S)
    return S, resp, st_


@pytest.fixture(scope="module")
def chain3_local(chain3):
    S = of_locality(chain3, 2, 6)
    resp, st_ = llqg_solve(chain3, S)
    return S, resp, st_


# --- proximal building blocks ---------------------------------------------

def test_group_soft_threshold_examples():
    assert np.allclose(prox_group_soft_threshold([3.0, 4.0], 2.5), [1.5, 2.0])
    assert np.allclose(prox_group_soft_threshold([3.0, 4.0], 5.0), [0.0, 0.0])
    assert np.allclose(prox_group_soft_threshold([0.0, 0.0], 1.0), [0.0, 0.0])
    with pytest.raises(ValueError):
        prox_group_soft_threshold([1.0], -1.0)


def test_l1_ball_examples():
    assert np.allclose(project_row_l1_ball([3.0, 0.0], 1.0), [1.0, 0.0])
    assert np.allclose(project_row_l1_ball([0.5, -0.25], 1.0), [0.5, -0.25])
    assert np.allclose(project_row_l1_ball([1.0, -1.0], 1.0), [0.5, -0.5])
    # Zero weight leaves an entry free.
    assert np.allclose(project_weighted_l1_ball([5.0, 2.0], 1.0, [0.0, 1.0]), [5.0, 1.0])
    with pytest.raises(ValueError):
        project_row_l1_ball([1.0], 0.0)


vectors = st.integers(1, 8).flatmap(lambda n: st.tuples(
    arrays(float, n, elements=st.floats(-5, 5)), arrays(float, n, elements=st.floats(0.1, 3))))


@given(vectors, st.floats(0.05, 10))
def test_weighted_projection_matches_bisection(pw, gamma):
    p, w = pw
    x = project_weighted_l1_ball(p, gamma, w)
    assert w @ np.abs(x) <= gamma * (1 + 1e-9) + 1e-12
    # Independent threshold by bisection on sum w |soft(p, theta w)| = gamma.
    if w @ np.abs(p) > gamma:
        lo, hi = 0.0, float(np.max(np.abs(p) / w))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            val = w @ np.maximum(np.abs(p) - mid * w, 0)
            lo, hi = (mid, hi) if val > gamma else (lo, mid)
        ref = np.sign(p) * np.maximum(np.abs(p) - hi * w, 0)
        assert np.allclose(x, ref, atol=1e-8)
    else:
        assert np.array_equal(x, p)


@given(arrays(float, 4, elements=st.floats(-5, 5)), st.floats(0, 6))
def test_group_prox_is_nonexpansive_and_shrinks(p, kappa):
    x = prox_group_soft_threshold(p, kappa)
    assert np.linalg.norm(x) <= np.linalg.norm(p) + 1e-12
    assert np.linalg.norm(x - p) <= kappa + 1e-12


# --- locality -------------------------------------------------------------

def test_of_locality_structure(chain3):
    nx = chain3.n_x
    S = of_locality(chain3, 1, 4)
    D = distance_matrix(chain3.A)
    assert S[0].bits[:, :nx].sum() == 0 and S[0].bits[:nx, nx:].sum() == 0
    assert np.array_equal(S[1].bits[:nx, :nx], D <= 1)
    # L may act at lag zero through B2 and C2.
    assert S[0].bits[nx:, nx:].any()
    assert np.array_equal(S[2].bits[nx:, :nx], (chain3.B2.T != 0).astype(int) @ (D <= 2) > 0)
    assert full_locality(chain3, 4) == of_locality(chain3, None, 4)
    with pytest.raises(ValueError):
        of_locality(chain3, 1, 0)
    with pytest.raises(ValueError):
        of_locality(chain3, 1, 3, h=1)


def test_of_locality_speed_cap(chain3):
    nx = chain3.n_x
    S = of_locality(chain3, 4, 4, h=2)
    D = distance_matrix(chain3.A)
    assert np.array_equal(S[1].bits[:nx, :nx], D <= 0)
    assert np.array_equal(S[2].bits[:nx, :nx], D <= 2)


# --- output-feedback synthesis --------------------------------------------

def test_llqg_matches_oracle(tiny, tiny_base):
    S, resp, st_ = tiny_base
    prob = OfProblem(tiny, S)
    _, obj, res = of_oracle(tiny.A, tiny.B2, tiny.C2, S, prob.Cz, prob.Bw)
    assert st_.status == "converged" and res < 1e-10
    assert np.isclose(h2_cost(prob, resp), obj, rtol=1e-8)
    left, right, member = check_response(prob, resp)
    assert max(left, right) < 1e-10 and member


def test_llqg_localized_matches_oracle(chain3, chain3_local):
    S, resp, st_ = chain3_local
    prob = OfProblem(chain3, S)
    _, obj, _ = of_oracle(chain3.A, chain3.B2, chain3.C2, S, prob.Cz, prob.Bw)
    assert np.isclose(h2_cost(prob, resp), obj, rtol=1e-8)
    left, right, member = check_response(prob, resp)
    assert max(left, right) < 1e-10 and member
    assert max(st_.lambda_identity) < 1e-12
    assert st_.factorizations <= 2 * (chain3.n_x + chain3.n_y + chain3.n_x + chain3.n_u)


def test_h2_side_does_not_change_optimum(tiny, tiny_base):
    S, resp, _ = tiny_base
    r2, s2 = admm_solve(OfProblem(tiny, S, h2_side="row"))
    assert s2.status == "converged"
    assert np.isclose(h2_cost(OfProblem(tiny, S), r2), h2_cost(OfProblem(tiny, S), resp),
                      rtol=1e-6)


@pytest.mark.parametrize("frac", [0.98, 0.95])
def test_l1_bound_matches_oracle(tiny, tiny_base, frac):
    S, resp, _ = tiny_base
    prob = OfProblem(tiny, S)
    gamma = frac * l1_cost(prob, resp)
    r, st_ = mixed_h2_l1_solve(tiny, S, gamma)
    _, obj = of_l1_oracle(tiny.A, tiny.B2, tiny.C2, S, prob.Cz, prob.Bw, gamma)
    assert st_.status == "converged"
    assert np.isclose(h2_cost(prob, r), obj, rtol=1e-5)
    assert l1_cost(prob, r) <= gamma * (1 + 1e-5)


def test_split_and_inner_modes_agree(chain3, chain3_local):
    S, resp, _ = chain3_local
    prob = OfProblem(chain3, S)
    gamma = 0.97 * l1_cost(prob, resp)
    a, sa = mixed_h2_l1_solve(chain3, S, gamma, AdmmConfig(l1_split=True))
    b, sb = mixed_h2_l1_solve(chain3, S, gamma, AdmmConfig(l1_split=False))
    assert sa.status == sb.status == "converged"
    assert sa.Xi is not None and sb.Xi is None
    assert np.isclose(h2_cost(prob, a), h2_cost(prob, b), rtol=1e-6)


def test_warm_start_saves_iterations(tiny, tiny_base):
    S, resp, st_ = tiny_base
    prob = OfProblem(tiny, S)
    again, st2 = admm_solve(prob, warm_start=st_)
    assert st2.status == "converged" and st2.iteration < st_.iteration / 5
    assert np.isclose(h2_cost(prob, again), h2_cost(prob, resp), rtol=1e-8)
    with pytest.raises(ValueError, match="incompatible"):
        admm_solve(OfProblem(P.load_fixture(), full_locality(P.load_fixture(), 3)),
                   warm_start=st_)


def test_tradeoff_is_monotone(tiny, tiny_base):
    S, resp, st_ = tiny_base
    base = l1_cost(OfProblem(tiny, S), resp)
    pts = l1_tradeoff(tiny, S, [base * f for f in (0.99, 0.97, 0.95)], warm_start=st_)
    assert all(p.status == "converged" for p in pts)
    h2 = [p.h2 for p in pts]
    assert h2 == sorted(h2)


def test_callback_and_trace(tiny, tiny_base, tmp_path):
    S, _, _ = tiny_base
    seen = []
    _, st_ = admm_solve(OfProblem(tiny, S), AdmmConfig(max_iter=7),
                        callback=lambda k, Phi, Psi, Lam: seen.append(k))
    assert seen == list(range(1, 8)) and st_.status == "maxed"
    assert np.isnan(st_.polish_residual)
    path = tmp_path / "trace.csv"
    write_trace_csv(st_, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,primal,dual,objective" and len(lines) == 8


def test_parallel_cells_are_deterministic(tiny, tiny_base):
    S, resp, _ = tiny_base
    r2, _ = llqg_solve(tiny, S, AdmmConfig(workers=2))
    assert r2.phi().equals(resp.phi())


# --- regularization -------------------------------------------------------

def test_norm_helpers(tiny_base):
    _, resp, _ = tiny_base
    nrm = sensor_col_norms(resp)
    assert np.isclose(sensor_norm(resp, np.ones(2)), nrm.sum())
    assert actuator_norm(resp, np.zeros(2)) == 0.0
    w = reweight_l1(RegularizerWeights(np.ones(2), np.ones(2), eps=0.5), resp)
    assert np.allclose(w.lam, 1.0 / (nrm + 0.5))
    with pytest.raises(ValueError):
        RegularizerWeights([-1.0], [1.0])


def test_sensor_penalty_shrinks_sensor_use(tiny, tiny_base):
    S, resp, _ = tiny_base
    r, st_ = h2_joint_reg_solve(tiny, S, np.zeros(2), np.array([0.0, 5.0]))
    assert st_.status == "converged"
    assert sensor_col_norms(r)[1] < sensor_col_norms(resp)[1]
    left, right, member = check_response(OfProblem(tiny, S), r)
    assert max(left, right) < 1e-10 and member


def test_sensor_regularization_report(tiny):
    rep = sensor_regularization(tiny, None, 3, mu0=0.0, lambda0=0.0, rounds=1)
    assert rep.removed_sensors == () and rep.feasible
    assert np.isclose(rep.degradation, 0.0, atol=1e-8)
    assert set(rep.to_json()) >= {"kept_sensors", "removed_sensors", "statuses"}


# --- validation -----------------------------------------------------------

def test_config_and_problem_validation(tiny, tiny_base):
    S, _, _ = tiny_base
    with pytest.raises(ValueError):
        AdmmConfig(rho=0)
    with pytest.raises(ValueError):
        AdmmConfig(inner_relax=2.0)
    with pytest.raises(ValueError, match="S_Phi"):
        OfProblem(tiny, of_locality(P.load_fixture(), 1, 3))
    with pytest.raises(ValueError, match="gamma"):
        OfProblem(tiny, S, gamma=0.0)
    with pytest.raises(ValueError, match="share"):
        OfProblem(tiny, S, mu=np.ones(2), gamma=1.0)
    assert OfProblem(tiny, S, gamma=np.inf).gamma is None
    with pytest.raises(ValueError):
        OfProblem(tiny, S, h2_side="both")
