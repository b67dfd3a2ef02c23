import numpy as np
import pytest

from freezing_burgers.errors import StepSizeError
from freezing_burgers.freezing import DEFAULT_CFL, FreezingProblem, consistent_initialize
from freezing_burgers.imex import (
    HEUN_CN,
    ButcherPair,
    FreezingState,
    ImplicitCache,
    adapt_timestep,
    group_time_step,
    imex_stages,
    imex_step,
    integrate,
    stage_solve,
)
from freezing_burgers.linear_solvers import factor_implicit
from freezing_burgers.mesh import build_grid, cell_average_init
from freezing_burgers.verification import ManufacturedDAE, integrate_dae

from oracles import dense_stage_solve, random_stage_instance


def scalar_dae(P=0.0, H0=lambda V: np.zeros(1)):
    return ManufacturedDAE(name="scalar", V0=np.array([1.0]), P=[[P]], H0=H0,
                           H1=lambda V: np.zeros((1, 1)), phase="none")


def test_tableau():
    assert HEUN_CN.s == 2
    assert np.array_equal(HEUN_CN.b, [0.5, 0.5, 0]) and np.array_equal(HEUN_CN.bhat, [0.5, 0, 0.5])
    with pytest.raises(ValueError):
        ButcherPair(c=np.zeros(2), A=np.eye(2), Ahat=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ButcherPair(c=np.zeros(2), A=np.zeros((2, 2)), Ahat=np.triu(np.ones((2, 2))))


def test_crank_nicolson_reduction():
    res = imex_stages(scalar_dae(P=-1.0), np.array([1.0]), 0.1)
    assert abs(res.V[0] - 0.95 / 1.05) <= 1e-15


def test_heun_reduction():
    res = imex_stages(scalar_dae(H0=lambda V: -V), np.array([1.0]), 0.1)
    assert abs(res.V[0] - 1.105) <= 1e-15


def test_zero_rhs_keeps_state():
    dae = scalar_dae()
    st = FreezingState(v=np.array([0.3]), mu=np.zeros(1), alpha=2.0, b=np.zeros(0), t=1.0, tau=0.5)
    new = imex_step(dae, st, 0.25)
    assert new.v[0] == 0.3 and new.alpha == 2.0 and new.tau == 0.75
    with pytest.raises(ValueError):
        imex_step(dae, st, 0.0)


def test_group_update_heun():
    alpha, b, t = group_time_step(1.0, [0.0], 0.0, [np.array([1.0, 0.0]), np.array([1.0, 0.0])], 0.1, 2.0)
    assert alpha == pytest.approx(1.105, abs=1e-15)
    assert t == pytest.approx(0.1105, abs=1e-15)
    assert b[0] == 0


def test_group_update_without_motion():
    alpha, b, t = group_time_step(2.0, [0.5, -1.0], 3.0, [np.zeros(3), np.zeros(3)], 0.1, 1.5)
    assert alpha == 2.0 and np.array_equal(b, [0.5, -1.0])
    assert t == pytest.approx(3.0 + 0.1 * 2.0 ** 1.0, abs=1e-15)


def test_group_update_rejects_collapse():
    with pytest.raises(StepSizeError):
        group_time_step(1.0, [0.0], 0.0, [np.array([-30.0, 0]), np.array([30.0, 0])], 0.1, 2.0)


@pytest.mark.parametrize("phase", ["orthogonal", "fixed"])
def test_block_elimination_matches_dense(rng, phase):
    for _ in range(100):
        prob, V_prev, bundle_prev, h, R1 = random_stage_instance(rng, phase)
        a_diag, a_sub = 0.5, float(rng.choice([0.5, 1.0]))
        factor = factor_implicit(prob.P, h, a_diag)
        V, mu = stage_solve(prob, factor, R1, V_prev, bundle_prev, h * a_sub)
        Vd, mud = dense_stage_solve(prob, R1, bundle_prev, h * a_sub, h * a_diag)
        assert np.max(np.abs(V - Vd)) <= 1e-12 * max(1, np.max(np.abs(Vd)))
        assert np.max(np.abs(mu - mud)) <= 1e-12 * max(1, np.max(np.abs(mud)))


def test_zero_step_stage(rng):
    # index 1 only: at h = 0 the fixed-phase matrix Psi^T A* vanishes
    prob, V_prev, bundle_prev, _, _ = random_stage_instance(rng, "orthogonal")
    V, mu = stage_solve(prob, factor_implicit(prob.P, 0.0, 0.5), V_prev, V_prev, bundle_prev, 0.0)
    assert np.array_equal(V, V_prev)
    assert np.array_equal(mu, prob.closure_mu(V_prev, bundle_prev))


def test_one_factorization_per_step_size():
    prob = FreezingProblem(grid=build_grid(1, (-5, 5), 48), nu=0.4)
    v0 = cell_average_init(prob.grid, lambda x: np.exp(-x**2)).flat
    cache = ImplicitCache(prob.P)
    imex_stages(prob, v0, 0.01, 2.0, cache=cache)
    imex_stages(prob, v0, 0.01, 2.0, cache=cache)
    assert cache.n_factorizations == 1
    imex_stages(prob, v0, 0.02, 2.0, cache=cache)
    assert cache.n_factorizations == 2


def test_cfl_target_and_policy():
    prob = FreezingProblem(grid=build_grid(1, (-5, 5), 98), nu=0.0)
    assert prob.cfl == 1 / 3 and DEFAULT_CFL[2] == 0.2
    st = FreezingState(v=np.zeros(100), mu=np.zeros(2))
    target = adapt_timestep(prob, st, 5.5)
    assert target == pytest.approx(6.0606e-3, rel=1e-4)
    st.dtau = 0.004
    assert adapt_timestep(prob, st, 5.5) == 0.004
    st.dtau = 0.007
    assert adapt_timestep(prob, st, 5.5) == target
    st.dtau = 0.003
    assert adapt_timestep(prob, st, 5.5) == 0.006
    assert adapt_timestep(prob, st, 5.5, policy="every-step") == target
    assert np.isfinite(adapt_timestep(prob, FreezingState(v=np.zeros(100), mu=np.zeros(2)), 0.0))


def test_zero_horizon_returns_consistent_initial_state():
    prob = FreezingProblem(grid=build_grid(1, (-5, 5), 48), nu=0.4)
    v0 = cell_average_init(prob.grid, lambda x: np.exp(-x**2)).flat
    res = integrate(prob, v0, 0.0)
    assert res.n_steps == 0 and len(res.records) == 1
    assert np.array_equal(res.state.v, v0)
    assert np.array_equal(res.state.mu, consistent_initialize(prob, v0))


def test_lands_on_final_time():
    prob = FreezingProblem(grid=build_grid(1, (-5, 5), 48), nu=0.4)
    v0 = cell_average_init(prob.grid, lambda x: np.exp(-x**2)).flat
    res = integrate(prob, v0, 0.37, stop_when_stationary=False)
    assert res.state.tau == 0.37 and res.reason == "tau_end"
    taus = [r.tau for r in res.records]
    assert np.all(np.diff(taus) > 0)


def test_pure_diffusion_flattens():
    grid = build_grid(1, (0, 4), 18)
    from freezing_burgers.central_flux import diffusion_matrix
    v0 = cell_average_init(grid, lambda x: np.where(x < 1, 1.0, 0.0)).flat
    dae = ManufacturedDAE(name="heat", V0=v0, P=diffusion_matrix(grid, 1.0).toarray(), H0=lambda V: np.zeros(V.size),
                          H1=lambda V: np.zeros((V.size, 1)), phase="none")
    tr = integrate_dae(dae, 0.05, 40.0)
    assert np.allclose(tr.V, np.mean(v0), rtol=0, atol=1e-10)


def test_stationarity_stop():
    prob = FreezingProblem(grid=build_grid(1, (-10, 10), 98), nu=1.0)
    v0 = cell_average_init(prob.grid, lambda x: np.exp(-x**2)).flat
    res = integrate(prob, v0, 200.0, keep_records=False)
    assert res.reason == "stationary" and res.state.tau < 200.0


def test_bitwise_reproducible():
    prob = FreezingProblem(grid=build_grid(2, (-5, 5), 38), nu=0.4, p=1.5, a=(1, 1))
    v0 = cell_average_init(prob.grid, lambda x, y: np.exp(-x**2 - y**2)).flat
    a = integrate(prob, v0, 0.3)
    b = integrate(prob, v0, 0.3)
    assert np.array_equal(a.state.v, b.state.v)
    assert [r.__dict__ for r in a.records] == [r.__dict__ for r in b.records]


def test_initialization_without_bound_fixed_point(caplog):
    # far too coarse for a unit Gaussian: the dissipation-driven bound runs away
    prob = FreezingProblem(grid=build_grid(2, (-5, 5), 10), nu=0.4, p=1.5, a=(1, 1))
    v0 = cell_average_init(prob.grid, lambda x, y: np.exp(-x**2 - y**2)).flat
    mu, a = consistent_initialize(prob, v0, return_bound=True)
    assert "does not settle" in caplog.text
    assert np.array_equal(mu, consistent_initialize(prob, v0, a))
