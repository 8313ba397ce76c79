"""Analytic-oracle benchmark problems.

Linear-quadratic instances carry a Riccati oracle for the optimal control,
the optimal cost and closed-form adjoints, so every checker's expected
outcome is computable independently of the regression solvers.  A spectral
truncation of a controlled heat equation provides a contractive generator
with exactly known mode decay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cones import Box, SetDescriptor, Singleton, WholeSpace
from .errors import RiccatiBlowup
from .model import (Functional, ProblemSpec, RunningCost, TimeGrid, bolza_reduce,
                    zero_map)


# ---------------------------------------------------------------------------
# linear-quadratic problem data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LQSpec:
    """dx = (A x + B u) dt + sum_i (C_i x + D_i u + sigma_i) dW_i
    with cost E[ x(T)' G x(T) / 2 + int (x' Qr x + u' Rr u) / 2 dt ]."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray            # (d, n, n)
    D: np.ndarray            # (d, n, m)
    sigma: np.ndarray        # (d, n) additive noise levels
    G: np.ndarray
    Q_run: np.ndarray
    R_run: np.ndarray
    T: float
    x0: np.ndarray
    U: SetDescriptor = None
    Ka: SetDescriptor = None

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "sigma", "G", "Q_run", "R_run", "x0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.U is None:
            object.__setattr__(self, "U", WholeSpace(self.m))
        if self.Ka is None:
            object.__setattr__(self, "Ka", Singleton(self.x0))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.C.shape[0]


@dataclass
class RiccatiSolution:
    grid: TimeGrid
    Pi: np.ndarray          # (N+1, n, n) on the coarse grid
    gains: np.ndarray       # (N+1, m, n) feedback u = -gain x

    def gain_at(self, k: int) -> np.ndarray:
        return self.gains[k]

    def optimal_cost(self, x0: np.ndarray) -> float:
        x0 = np.asarray(x0, dtype=float)
        return 0.5 * float(x0 @ self.Pi[0] @ x0)


def _riccati_rhs(lq: LQSpec, Pi: np.ndarray) -> np.ndarray:
    A, B, C, D = lq.A, lq.B, lq.C, lq.D
    S = lq.R_run + np.einsum("dmi,ij,djk->mk", D.transpose(0, 2, 1), Pi, D)
    L = B.T @ Pi + np.einsum("dmi,ij,djk->mk", D.transpose(0, 2, 1), Pi, C)
    gain = np.linalg.solve(S, L)
    quad = np.einsum("dji,jk,dkl->il", C, Pi, C)
    return -(A.T @ Pi + Pi @ A + quad + lq.Q_run - L.T @ gain), gain


def solve_lq_riccati(lq: LQSpec, grid: TimeGrid, substeps: int = 4,
                     cap: float = 1e8) -> RiccatiSolution:
    """Backward RK4 integration of the stochastic Riccati equation.

    Runs at ``substeps`` times the Monte Carlo resolution so oracle error is
    negligible against tested tolerances.  The feedback gain uses
    (R + sum_i D_i' Pi D_i)^{-1} (B' Pi + sum_i D_i' Pi C_i), the general
    control-in-diffusion formula.
    """
    n = lq.n
    h = grid.dt / substeps
    Pi = lq.G.copy()
    out = np.zeros((grid.N + 1, n, n))
    gains = np.zeros((grid.N + 1, lq.m, n))
    out[grid.N] = Pi
    gains[grid.N] = _riccati_rhs(lq, Pi)[1]
    for k in range(grid.N - 1, -1, -1):
        for _ in range(substeps):
            k1, _ = _riccati_rhs(lq, Pi)
            k2, _ = _riccati_rhs(lq, Pi - 0.5 * h * k1)
            k3, _ = _riccati_rhs(lq, Pi - 0.5 * h * k2)
            k4, _ = _riccati_rhs(lq, Pi - h * k3)
            Pi = Pi - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            Pi = 0.5 * (Pi + Pi.T)
            if not np.all(np.isfinite(Pi)) or np.max(np.abs(Pi)) > cap:
                raise RiccatiBlowup("Riccati integration left the norm cap")
        out[k] = Pi
        gains[k] = _riccati_rhs(lq, Pi)[1]
    return RiccatiSolution(grid=grid, Pi=out, gains=gains)


def lq_second_adjoint_ode(lq: LQSpec, grid: TimeGrid, substeps: int = 4
                          ) -> np.ndarray:
    """Deterministic matrix ODE for the second adjoint along the optimum:

    -S' = A' S + S A + sum_i C_i' S C_i - Q_run,  S(T) = -G,

    so Q-part vanishes and P(t) = S(t).  Returns (N+1, n, n).
    """
    n = lq.n
    h = grid.dt / substeps

    def rhs(S):
        quad = np.einsum("dji,jk,dkl->il", lq.C, S, lq.C)
        return -(lq.A.T @ S + S @ lq.A + quad - lq.Q_run)

    S = -lq.G.copy()
    out = np.zeros((grid.N + 1, n, n))
    out[grid.N] = S
    for k in range(grid.N - 1, -1, -1):
        for _ in range(substeps):
            k1 = rhs(S)
            k2 = rhs(S - 0.5 * h * k1)
            k3 = rhs(S - 0.5 * h * k2)
            k4 = rhs(S - h * k3)
            S = S - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            S = 0.5 * (S + S.T)
        out[k] = S
    return out


def adjoint_oracle_lq(lq: LQSpec, grid: TimeGrid, riccati: RiccatiSolution,
                      base_values: np.ndarray):
    """Closed-form adjoint paths along an ensemble of optimal states.

    base_values is the (M, N+1, n) state ensemble of the ORIGINAL (not
    Bolza-reduced) coordinates under the Riccati feedback.  Returns
    (y, Y, P): y(t) = -Pi(t) x(t), Y(t) = -Pi(t) (C x + D u + sigma) with
    u = -gain x, and the deterministic P path from the matrix ODE.
    """
    M, K, n = base_values.shape
    y = np.zeros((M, K, n))
    Y = np.zeros((M, K, n, lq.d))
    for k in range(K):
        Pi = riccati.Pi[k]
        gain = riccati.gains[k]
        xk = base_values[:, k, :]
        uk = -xk @ gain.T
        y[:, k, :] = -xk @ Pi.T
        noise = (np.einsum("dij,pj->pid", lq.C, xk)
                 + np.einsum("dij,pj->pid", lq.D, uk)
                 + np.broadcast_to(lq.sigma.T, (M, n, lq.d)))
        Y[:, k, :, :] = -np.einsum("ij,pjd->pid", Pi, noise)
    P = lq_second_adjoint_ode(lq, grid)
    return y, Y, P


def lq_to_spec(lq: LQSpec, include_generator_in_drift: bool = False) -> ProblemSpec:
    """Mayer-form ProblemSpec for the LQ dynamics (no running cost yet).

    By default the generator sits in the semigroup slot and the drift map is
    B u alone.
    """
    n, m, d = lq.n, lq.m, lq.d
    A_sem = np.zeros((n, n)) if include_generator_in_drift else lq.A
    A_drift = lq.A if include_generator_in_drift else np.zeros((n, n))

    def drift(t, x, u):
        return x @ A_drift.T + u @ lq.B.T

    def diffusion(t, x, u):
        return (np.einsum("dij,pj->pid", lq.C, x)
                + np.einsum("dij,pj->pid", lq.D, u)
                + lq.sigma.T[None, :, :])

    def drift_x(t, x, u):
        return np.broadcast_to(A_drift, (x.shape[0], n, n))

    def drift_u(t, x, u):
        return np.broadcast_to(lq.B, (x.shape[0], n, m))

    def diffusion_x(t, x, u):
        return np.broadcast_to(lq.C.transpose(1, 0, 2), (x.shape[0], n, d, n))

    def diffusion_u(t, x, u):
        return np.broadcast_to(lq.D.transpose(1, 0, 2), (x.shape[0], n, d, m))

    def h_value(x):
        return 0.5 * np.einsum("pi,ij,pj->p", x, lq.G, x)

    def h_grad(x):
        return x @ lq.G.T

    def h_hess(x):
        return np.broadcast_to(lq.G, (x.shape[0], n, n))

    return ProblemSpec(
        n=n, m=m, d=d, T=lq.T, A=A_sem,
        drift=drift, diffusion=diffusion,
        drift_x=drift_x, drift_u=drift_u,
        diffusion_x=diffusion_x, diffusion_u=diffusion_u,
        drift_xx=zero_map(n, n, n), drift_xu=zero_map(n, n, m),
        drift_uu=zero_map(n, m, m),
        diffusion_xx=zero_map(n, d, n, n), diffusion_xu=zero_map(n, d, n, m),
        diffusion_uu=zero_map(n, d, m, m),
        terminal_cost=Functional(h_value, h_grad, h_hess),
        U=lq.U, Ka=lq.Ka,
    )


def lq_running_cost(lq: LQSpec) -> RunningCost:
    n, m = lq.n, lq.m

    def value(t, x, u):
        return 0.5 * (np.einsum("pi,ij,pj->p", x, lq.Q_run, x)
                      + np.einsum("pi,ij,pj->p", u, lq.R_run, u))

    def grad_x(t, x, u):
        return x @ lq.Q_run.T

    def grad_u(t, x, u):
        return u @ lq.R_run.T

    def hess_xx(t, x, u):
        return np.broadcast_to(lq.Q_run, (x.shape[0], n, n))

    def hess_xu(t, x, u):
        return np.zeros((x.shape[0], n, m))

    def hess_uu(t, x, u):
        return np.broadcast_to(lq.R_run, (x.shape[0], m, m))

    return RunningCost(value, grad_x, grad_u, hess_xx, hess_xu, hess_uu)


def lq_reduced_spec(lq: LQSpec) -> ProblemSpec:
    """Bolza-reduced spec: extra accumulator state carries the running cost."""
    return bolza_reduce(lq_to_spec(lq), lq_running_cost(lq))


def riccati_feedback_control(lq: LQSpec, riccati: RiccatiSolution,
                             state_values: np.ndarray) -> np.ndarray:
    """u_k = -gain_k x_k along an ensemble; accepts reduced or raw states."""
    M, K, _ = state_values.shape
    u = np.zeros((M, K, lq.m))
    for k in range(K):
        u[:, k, :] = -state_values[:, k, : lq.n] @ riccati.gains[k].T
    return u


# ---------------------------------------------------------------------------
# spectral heat-equation truncation
# ---------------------------------------------------------------------------

def make_heat_spde(modes: int, viscosity: float = 1.0, control_channels: int = 1,
                   noise_channels: int = 1, control_gain: float = 1.0,
                   noise_level: float = 0.1, bilinear_noise: bool = False,
                   T: float = 1.0) -> ProblemSpec:
    """Spectral truncation of a controlled heat equation on an interval.

    A = diag(-viscosity * pi^2 * k^2), k = 1..modes: negative definite, so
    the contractive-semigroup standing assumption holds exactly.  Control
    feeds the first ``control_channels`` modes; noise is additive by default
    or bilinear (x-proportional) when requested.
    """
    n, m, d = modes, control_channels, noise_channels
    A = np.diag([-viscosity * np.pi ** 2 * (k + 1) ** 2 for k in range(n)])
    B = np.zeros((n, m))
    for j in range(min(n, m)):
        B[j, j] = control_gain

    def drift(t, x, u):
        return u @ B.T

    def diffusion(t, x, u):
        out = np.zeros(x.shape[:-1] + (n, d))
        for l in range(d):
            if bilinear_noise:
                out[..., l % n, l] = noise_level * x[..., l % n]
            else:
                out[..., l % n, l] = noise_level
        return out

    def diffusion_x(t, x, u):
        out = np.zeros(x.shape[:-1] + (n, d, n))
        if bilinear_noise:
            for l in range(d):
                out[..., l % n, l, l % n] = noise_level
        return out

    def h_value(x):
        return 0.5 * np.einsum("pi,pi->p", x, x)

    def h_grad(x):
        return x.copy()

    def h_hess(x):
        return np.broadcast_to(np.eye(n), (x.shape[0], n, n))

    return ProblemSpec(
        n=n, m=m, d=d, T=T, A=A,
        drift=drift, diffusion=diffusion,
        drift_x=zero_map(n, n), drift_u=lambda t, x, u: np.broadcast_to(
            B, (x.shape[0], n, m)),
        diffusion_x=diffusion_x, diffusion_u=zero_map(n, d, m),
        drift_xx=zero_map(n, n, n), drift_xu=zero_map(n, n, m),
        drift_uu=zero_map(n, m, m),
        diffusion_xx=zero_map(n, d, n, n), diffusion_xu=zero_map(n, d, n, m),
        diffusion_uu=zero_map(n, d, m, m),
        terminal_cost=Functional(h_value, h_grad, h_hess),
        U=WholeSpace(m), Ka=Singleton(np.ones(n)),
    )


# ---------------------------------------------------------------------------
# scalar nonlinear benchmarks for remainder studies
# ---------------------------------------------------------------------------

def _scalar_functional_half_square() -> Functional:
    return Functional(lambda x: 0.5 * x[..., 0] ** 2,
                      lambda x: x.copy(),
                      lambda x: np.ones(x.shape[:-1] + (1, 1)))


def make_bilinear_scalar(T: float = 1.0, drift_gain: float = 1.0,
                         noise_gain: float = 1.0) -> ProblemSpec:
    """dx = gain * x u dt + noise_gain * x dW: bilinear drift, linear noise."""

    def drift(t, x, u):
        return drift_gain * x * u

    def diffusion(t, x, u):
        return noise_gain * x[..., None]

    return ProblemSpec(
        n=1, m=1, d=1, T=T, A=np.zeros((1, 1)),
        drift=drift, diffusion=diffusion,
        drift_x=lambda t, x, u: drift_gain * u[..., None],
        drift_u=lambda t, x, u: drift_gain * x[..., None],
        diffusion_x=lambda t, x, u: np.full(x.shape[:-1] + (1, 1, 1), noise_gain),
        diffusion_u=zero_map(1, 1, 1),
        drift_xx=zero_map(1, 1, 1),
        drift_xu=lambda t, x, u: np.full(x.shape[:-1] + (1, 1, 1), drift_gain),
        drift_uu=zero_map(1, 1, 1),
        diffusion_xx=zero_map(1, 1, 1, 1), diffusion_xu=zero_map(1, 1, 1, 1),
        diffusion_uu=zero_map(1, 1, 1, 1),
        terminal_cost=_scalar_functional_half_square(),
        U=WholeSpace(1), Ka=Singleton(np.array([1.0])),
    )


def make_polynomial_scalar(power: int, coeff: float = 0.5, T: float = 1.0,
                           noise_level: float = 0.0) -> ProblemSpec:
    """dx = coeff * x^power dt (+ noise_level dW): smooth nonlinear drift."""

    def drift(t, x, u):
        return coeff * x ** power

    def diffusion(t, x, u):
        return np.full(x.shape[:-1] + (1, 1), noise_level)

    return ProblemSpec(
        n=1, m=1, d=1, T=T, A=np.zeros((1, 1)),
        drift=drift, diffusion=diffusion,
        drift_x=lambda t, x, u: coeff * power * (x ** (power - 1))[..., None],
        drift_u=zero_map(1, 1),
        diffusion_x=zero_map(1, 1, 1), diffusion_u=zero_map(1, 1, 1),
        drift_xx=lambda t, x, u: coeff * power * (power - 1)
        * (x ** (power - 2))[..., None, None],
        drift_xu=zero_map(1, 1, 1), drift_uu=zero_map(1, 1, 1),
        diffusion_xx=zero_map(1, 1, 1, 1), diffusion_xu=zero_map(1, 1, 1, 1),
        diffusion_uu=zero_map(1, 1, 1, 1),
        terminal_cost=_scalar_functional_half_square(),
        U=WholeSpace(1), Ka=Singleton(np.array([1.0])),
    )


# ---------------------------------------------------------------------------
# named registry
# ---------------------------------------------------------------------------

def lq_unconstrained(n: int = 1) -> LQSpec:
    """Scalar (or diagonal) stochastic LQ with control in the diffusion.

    Noise is purely multiplicative (no additive term): with an additive term
    alongside C or D the optimal feedback acquires an affine correction and
    the plain Riccati gain would not be stationary.
    """
    A = -0.5 * np.eye(n)
    B = np.eye(n)[:, :1] if n > 1 else np.eye(1)
    m = B.shape[1]
    C = 0.2 * np.eye(n)[None, :, :]
    D = np.zeros((1, n, m))
    D[0, :m, :m] = 0.3 * np.eye(m)
    sigma = np.zeros((1, n))
    return LQSpec(A=A, B=B, C=C, D=D, sigma=sigma, G=np.eye(n),
                  Q_run=0.5 * np.eye(n), R_run=np.eye(m), T=1.0,
                  x0=np.ones(n))


def lq_terminal_constrained() -> LQSpec:
    """Scalar additive-noise LQ for binding terminal-mean constraints."""
    return LQSpec(A=np.array([[0.3]]), B=np.eye(1), C=np.zeros((1, 1, 1)),
                  D=np.zeros((1, 1, 1)), sigma=0.3 * np.ones((1, 1)),
                  G=np.eye(1), Q_run=np.zeros((1, 1)), R_run=np.eye(1),
                  T=1.0, x0=np.array([1.0]))


def lq_box_constrained() -> LQSpec:
    """Noise-free LQ with a box control set (open-loop optimum well defined)."""
    return LQSpec(A=np.array([[0.0]]), B=np.eye(1), C=np.zeros((1, 1, 1)),
                  D=np.zeros((1, 1, 1)), sigma=np.zeros((1, 1)),
                  G=4.0 * np.eye(1), Q_run=np.zeros((1, 1)), R_run=np.eye(1),
                  T=1.0, x0=np.array([1.0]),
                  U=Box(np.array([-0.5]), np.array([0.5])))


def double_integrator_state_constrained(limit: float = 0.1):
    """Zero-noise double integrator with a position ceiling.

    min int u^2/2, x1' = x2, x2' = u, x(0) = (0, 1), x(T) = (0, -1),
    x1(t) <= limit.  For limit < 1/6 the analytic contact interval is
    [3*limit, T - 3*limit] and the control vanishes on it.
    """
    n, m, d = 2, 1, 1
    A = np.zeros((n, n))
    A2 = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])

    def drift(t, x, u):
        return x @ A2.T + u @ B.T

    spec = ProblemSpec(
        n=n, m=m, d=d, T=1.0, A=A,
        drift=drift, diffusion=zero_map(n, d),
        drift_x=lambda t, x, u: np.broadcast_to(A2, (x.shape[0], n, n)),
        drift_u=lambda t, x, u: np.broadcast_to(B, (x.shape[0], n, m)),
        diffusion_x=zero_map(n, d, n), diffusion_u=zero_map(n, d, m),
        drift_xx=zero_map(n, n, n), drift_xu=zero_map(n, n, m),
        drift_uu=zero_map(n, m, m),
        diffusion_xx=zero_map(n, d, n, n), diffusion_xu=zero_map(n, d, n, m),
        diffusion_uu=zero_map(n, d, m, m),
        terminal_cost=Functional(lambda x: np.zeros(x.shape[0]),
                                 lambda x: np.zeros_like(x),
                                 lambda x: np.zeros(x.shape[:-1] + (n, n))),
        U=WholeSpace(m), Ka=Singleton(np.array([0.0, 1.0])),
        state_constraint=Functional(
            lambda x: x[..., 0] - limit,
            lambda x: np.broadcast_to(np.array([1.0, 0.0]), x.shape).copy(),
            lambda x: np.zeros(x.shape[:-1] + (n, n))),
        terminal_constraints=(
            _affine_functional(np.array([1.0, 0.0]), 0.0),
            _affine_functional(np.array([-1.0, 0.0]), 0.0),
            _affine_functional(np.array([0.0, 1.0]), 1.0),
            _affine_functional(np.array([0.0, -1.0]), -1.0),
        ),
    )
    running = RunningCost(
        value=lambda t, x, u: 0.5 * np.einsum("pi,pi->p", u, u),
        grad_x=lambda t, x, u: np.zeros_like(x),
        grad_u=lambda t, x, u: u.copy(),
        hess_xx=lambda t, x, u: np.zeros(x.shape[:-1] + (n, n)),
        hess_xu=lambda t, x, u: np.zeros(x.shape[:-1] + (n, m)),
        hess_uu=lambda t, x, u: np.broadcast_to(np.eye(m), (x.shape[0], m, m)),
    )
    return spec, running


def _affine_functional(w: np.ndarray, offset: float) -> Functional:
    """g(x) = <w, x> + offset on the leading coordinates of the state."""
    w = np.asarray(w, dtype=float)

    def value(x):
        return x[..., : w.size] @ w + offset

    def grad(x):
        out = np.zeros_like(x)
        out[..., : w.size] = w
        return out

    def hess(x):
        n = x.shape[-1]
        return np.zeros(x.shape[:-1] + (n, n))

    return Functional(value, grad, hess)


BENCHMARKS = {
    "lq_unconstrained": lq_unconstrained,
    "lq_terminal": lq_terminal_constrained,
    "lq_box": lq_box_constrained,
    "double_integrator_state": double_integrator_state_constrained,
    "bilinear_scalar": make_bilinear_scalar,
    "quadratic_drift": lambda: make_polynomial_scalar(2),
    "cubic_drift": lambda: make_polynomial_scalar(3),
    "heat_spde": make_heat_spde,
}
