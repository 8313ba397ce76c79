import numpy as np

from stocond.adjoint_first import solve_first_adjoint
from stocond.adjoint_second import (SecondAdjointData, apply_Q,
                                    check_relaxed_identity, export_P_csv,
                                    simulate_phi, solve_second_adjoint)
from stocond.benchmarks import (lq_second_adjoint_ode, lq_unconstrained)
from stocond.conditions import (MultiplierSet, second_adjoint_data_for)
from stocond.adjoint_first import DiscreteBVMeasure
from stocond.forward import simulate_first_variation, simulate_forward
from stocond.model import PathEnsemble, TimeGrid, generate_brownian
from stocond.suites import _lq_setup, _smooth_field
from tests.test_adjoint_first import _drift_free_spec


class TestSolveSecondAdjoint:
    def test_identity_terminal_constant(self):
        spec = _drift_free_spec(n=2, d=1)
        g = TimeGrid(15, 1.0)
        paths = generate_brownian(g, 64, 1, seed=0)
        base = simulate_forward(spec, g, paths, np.ones(2), np.zeros((16, 1)))
        data = SecondAdjointData(P_T=np.eye(2))
        sol = solve_second_adjoint(spec, g, paths, base, np.zeros((16, 1)), data)
        assert np.allclose(sol.P.values, np.eye(2), atol=1e-9)
        assert np.allclose(sol.Qtensor.values, 0.0, atol=1e-9)

    def test_scalar_exponential_closed_form(self):
        alpha, kappa, p = 0.4, 0.3, 1.5
        spec = _drift_free_spec(b1=[[[0.5]]])
        N = 200
        g = TimeGrid(N, 1.0)
        paths = generate_brownian(g, 128, 1, seed=1)
        base = simulate_forward(spec, g, paths, np.ones(1), np.zeros((N + 1, 1)))
        data = SecondAdjointData(P_T=np.array([[p]]),
                                 J=np.array([[alpha]]),
                                 K=np.array([[[kappa]]]))
        sol = solve_second_adjoint(spec, g, paths, base, np.zeros((N + 1, 1)), data)
        exact = p * np.exp((2 * alpha + kappa ** 2) * (1.0 - g.times))
        got = sol.P.values[:, :, 0, 0].mean(axis=0)
        assert np.max(np.abs(got - exact)) <= 0.01 * p * np.exp(2 * alpha + kappa ** 2)
        assert np.max(np.abs(sol.Qtensor.values)) <= 1e-4

    def test_lq_matrix_ode_oracle(self):
        lq = lq_unconstrained()
        spec, g, paths, ric, base, u = _lq_setup(lq, 50, 4000, seed=2)
        xT = base.values[:, -1, :]
        adj = solve_first_adjoint(spec, g, paths, base, u,
                                  -np.asarray(spec.terminal_cost.grad(xT)))
        data = second_adjoint_data_for(spec, g, base, u, adj,
                                       MultiplierSet(1.0, {}, DiscreteBVMeasure()))
        sol = solve_second_adjoint(spec, g, paths, base, u, data)
        oracle = lq_second_adjoint_ode(lq, g)        # (N+1, n, n), raw block
        got = sol.P.values[:, :, : lq.n, : lq.n].mean(axis=0)
        rel = np.sqrt(np.mean((got - oracle) ** 2) / np.mean(oracle ** 2))
        assert rel <= 0.05

    def test_symmetry_preserved(self):
        lq = lq_unconstrained()
        spec, g, paths, ric, base, u = _lq_setup(lq, 25, 2000, seed=3)
        xT = base.values[:, -1, :]
        adj = solve_first_adjoint(spec, g, paths, base, u,
                                  -np.asarray(spec.terminal_cost.grad(xT)))
        data = second_adjoint_data_for(spec, g, base, u, adj,
                                       MultiplierSet(1.0, {}, DiscreteBVMeasure()))
        sol = solve_second_adjoint(spec, g, paths, base, u, data)
        P = sol.P.values
        asym = np.max(np.abs(P - P.transpose(0, 1, 3, 2)))
        assert asym <= 1e-6 * max(1.0, np.max(np.abs(P)))

    def test_negative_semidefinite_propagates(self):
        # F = 0, K = 0 and P_T <= 0 keep P(t) <= 0
        spec = _drift_free_spec(n=2, d=1)
        g = TimeGrid(40, 1.0)
        paths = generate_brownian(g, 64, 1, seed=4)
        base = simulate_forward(spec, g, paths, np.ones(2), np.zeros((41, 1)))
        PT = -np.array([[2.0, 0.5], [0.5, 1.0]])
        data = SecondAdjointData(P_T=PT, J=np.array([[0.1, 0.3], [0.0, -0.2]]))
        sol = solve_second_adjoint(spec, g, paths, base, np.zeros((41, 1)), data)
        mean_P = sol.P.values.mean(axis=0)
        for k in range(g.N + 1):
            eigs = np.linalg.eigvalsh(mean_P[k])
            assert np.all(eigs <= 1e-8)

    def test_P_export(self, tmp_path):
        spec = _drift_free_spec(n=2, d=1)
        g = TimeGrid(5, 1.0)
        paths = generate_brownian(g, 16, 1, seed=5)
        base = simulate_forward(spec, g, paths, np.ones(2), np.zeros((6, 1)))
        sol = solve_second_adjoint(spec, g, paths, base, np.zeros((6, 1)),
                                   SecondAdjointData(P_T=np.eye(2)))
        out = tmp_path / "P.csv"
        export_P_csv(sol, str(out))
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "time,P_0_0,P_0_1,P_1_0,P_1_1"
        assert len(lines) == g.N + 2


class TestApplyQ:
    def test_zero_Q_gives_zero(self):
        spec = _drift_free_spec(n=1, d=1)
        g = TimeGrid(10, 1.0)
        paths = generate_brownian(g, 32, 1, seed=6)
        base = simulate_forward(spec, g, paths, np.ones(1), np.zeros((11, 1)))
        data = SecondAdjointData(P_T=np.eye(1))
        sol = solve_second_adjoint(spec, g, paths, base, np.zeros((11, 1)), data)
        out = apply_Q(spec, g, paths, sol, data, 0, np.ones(1), None, None)
        assert np.max(np.abs(out.values)) <= 1e-8

    def test_phi_equals_first_variation_for_variation_data(self):
        lq = lq_unconstrained()
        spec, g, paths, ric, base, u = _lq_setup(lq, 30, 500, seed=7)
        xT = base.values[:, -1, :]
        adj = solve_first_adjoint(spec, g, paths, base, u,
                                  -np.asarray(spec.terminal_cost.grad(xT)))
        data = second_adjoint_data_for(spec, g, base, u, adj,
                                       MultiplierSet(1.0, {}, DiscreteBVMeasure()))
        u1 = np.sin(np.pi * g.times)[:, None]
        x1 = simulate_first_variation(spec, g, paths, base, u, np.zeros(spec.n), u1)
        M = base.M
        ft = np.zeros((M, g.N + 1, spec.n))
        fh = np.zeros((M, g.N + 1, spec.n, 1))
        ts = g.times
        from stocond.model import as_control_array
        u_arr = as_control_array(u, g, M, spec.m)
        for k in range(g.N):
            a2 = np.asarray(spec.drift_u(ts[k], base.values[:, k, :], u_arr[:, k, :]))
            b2 = np.asarray(spec.diffusion_u(ts[k], base.values[:, k, :],
                                             u_arr[:, k, :]))
            u1k = np.broadcast_to(u1[k], (M, 1))
            ft[:, k] = np.einsum("pij,pj->pi", np.broadcast_to(a2, (M, spec.n, 1)),
                                 u1k)
            fh[:, k] = np.einsum("pilj,pj->pil",
                                 np.broadcast_to(b2, (M, spec.n, 1, 1)), u1k)
        phi = simulate_phi(spec, g, paths, data, 0, np.zeros(spec.n), ft, fh)
        assert np.allclose(phi.values, x1.values, atol=1e-12)


class TestRelaxedIdentity:
    def test_trivial_constant_data(self):
        spec = _drift_free_spec(n=1, d=1)
        g = TimeGrid(10, 1.0)
        paths = generate_brownian(g, 64, 1, seed=8)
        base = simulate_forward(spec, g, paths, np.ones(1), np.zeros((11, 1)))
        data = SecondAdjointData(P_T=np.array([[2.0]]))
        sol = solve_second_adjoint(spec, g, paths, base, np.zeros((11, 1)), data)
        resid, se = check_relaxed_identity(spec, g, paths, sol, data, 0,
                                           (np.array([0.7]), None, None),
                                           (np.array([0.7]), None, None))
        assert resid <= 1e-9

    def test_deterministic_scalar_small_residual(self):
        spec = _drift_free_spec(n=1, d=1)
        N = 200
        g = TimeGrid(N, 1.0)
        paths = generate_brownian(g, 4, 1, seed=9)
        base = PathEnsemble(np.ones((4, N + 1, 1)), g)
        data = SecondAdjointData(P_T=np.array([[1.0]]), J=np.array([[0.3]]))
        sol = solve_second_adjoint(spec, g, paths, base, np.zeros((N + 1, 1)), data)
        ft1 = _smooth_field(np.array([0.4, 0.3, -0.2]), g.times)[:, None]
        ft2 = _smooth_field(np.array([-0.2, 0.5, 0.1]), g.times)[:, None]
        resid, _ = check_relaxed_identity(spec, g, paths, sol, data, 0,
                                          (np.array([1.0]), ft1, None),
                                          (np.array([0.7]), ft2, None))
        assert resid <= 1e-3

    def test_lq_identity_with_noise_data(self):
        lq = lq_unconstrained()
        spec, g, paths, ric, base, u = _lq_setup(lq, 50, 8000, seed=10)
        xT = base.values[:, -1, :]
        adj = solve_first_adjoint(spec, g, paths, base, u,
                                  -np.asarray(spec.terminal_cost.grad(xT)))
        data = second_adjoint_data_for(spec, g, base, u, adj,
                                       MultiplierSet(1.0, {}, DiscreteBVMeasure()))
        sol = solve_second_adjoint(spec, g, paths, base, u, data)
        rng = np.random.default_rng(11)
        for _ in range(3):
            xi1 = 0.5 * rng.standard_normal(spec.n)
            xi2 = 0.5 * rng.standard_normal(spec.n)
            ft = np.zeros((g.N + 1, spec.n))
            ft[:, 0] = 0.5 * _smooth_field(rng.standard_normal(3), g.times)
            fh = np.zeros((g.N + 1, spec.n, 1))
            fh[:, 0, 0] = 0.5 * _smooth_field(rng.standard_normal(3), g.times)
            resid, se = check_relaxed_identity(spec, g, paths, sol, data, 0,
                                               (xi1, ft, fh), (xi2, ft, fh))
            assert resid <= 3 * se + 0.05

    def test_first_variation_quadratic_consistency(self):
        # the identity with variational test data reproduces
        # E <P(T) x1(T), x1(T)> through the P / Q pairing terms
        lq = lq_unconstrained()
        spec, g, paths, ric, base, u = _lq_setup(lq, 50, 8000, seed=12)
        xT = base.values[:, -1, :]
        adj = solve_first_adjoint(spec, g, paths, base, u,
                                  -np.asarray(spec.terminal_cost.grad(xT)))
        data = second_adjoint_data_for(spec, g, base, u, adj,
                                       MultiplierSet(1.0, {}, DiscreteBVMeasure()))
        sol = solve_second_adjoint(spec, g, paths, base, u, data)
        from stocond.model import as_control_array
        M = base.M
        u_arr = as_control_array(u, g, M, spec.m)
        nu1 = np.zeros(spec.n)
        u1 = np.cos(np.pi * g.times)[:, None]
        ft = np.zeros((M, g.N + 1, spec.n))
        fh = np.zeros((M, g.N + 1, spec.n, 1))
        for k in range(g.N):
            a2 = np.broadcast_to(
                np.asarray(spec.drift_u(g.times[k], base.values[:, k, :],
                                        u_arr[:, k, :])), (M, spec.n, 1))
            b2 = np.broadcast_to(
                np.asarray(spec.diffusion_u(g.times[k], base.values[:, k, :],
                                            u_arr[:, k, :])), (M, spec.n, 1, 1))
            u1k = np.broadcast_to(u1[k], (M, 1))
            ft[:, k] = np.einsum("pij,pj->pi", a2, u1k)
            fh[:, k] = np.einsum("pilj,pj->pil", b2, u1k)
        resid, se = check_relaxed_identity(spec, g, paths, sol, data, 0,
                                           (nu1, ft, fh), (nu1, ft, fh))
        assert resid <= 3 * se + 0.05
