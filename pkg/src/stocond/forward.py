"""Forward, first and second variational dynamics, plus remainder studies.

Stepping is exponential-Euler: the generator part is applied exactly through
the matrix exponential (computed once per grid since dt is uniform), the
remaining coefficients are frozen at the left endpoint of each step.  All
perturbed systems reuse the nominal Brownian paths (common random numbers),
so pathwise remainders carry no O(M^{-1/2}) noise of their own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BlowUp
from .model import BrownianEnsemble, PathEnsemble, ProblemSpec, TimeGrid, as_control_array

DEFAULT_STATE_CAP = 1e8
DEFAULT_EPSILON_LADDER = tuple(2.0 ** (-k) for k in range(3, 9))


@dataclass(frozen=True)
class VariationData:
    """Perturbation directions for the remainder studies."""

    nu1: np.ndarray
    u1: np.ndarray
    nu2: np.ndarray | None = None
    u2: np.ndarray | None = None
    epsilon_ladder: tuple = DEFAULT_EPSILON_LADDER

    def __post_init__(self):
        lad = np.asarray(self.epsilon_ladder, dtype=float)
        if np.any(lad <= 0) or np.any(lad > 1) or np.any(np.diff(lad) >= 0):
            raise ValueError("epsilon ladder must be strictly decreasing in (0, 1]")


@dataclass
class RemainderReport:
    epsilons: np.ndarray
    norms: np.ndarray
    ses: np.ndarray
    fitted_slope: float

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epsilon,norm,se\n")
            for eps, nrm, se in zip(self.epsilons, self.norms, self.ses):
                fh.write(f"{eps!r},{nrm!r},{se!r}\n")

    def to_json(self) -> str:
        return json.dumps({
            "epsilons": self.epsilons.tolist(),
            "norms": self.norms.tolist(),
            "ses": self.ses.tolist(),
            "fitted_slope": self.fitted_slope,
        }, sort_keys=True)


def semigroup_step(A: np.ndarray, dt: float) -> np.ndarray:
    """exp(A dt) via scaling-and-squaring, computed once per grid."""
    return scipy.linalg.expm(np.asarray(A, dtype=float) * dt)


def _check_cap(x: np.ndarray, cap: float, what: str) -> None:
    mx = float(np.max(np.abs(x))) if x.size else 0.0
    if not np.isfinite(mx) or mx > cap:
        raise BlowUp(f"{what} norm exceeded cap {cap:.3g} (max component {mx:.3g})")


def simulate_forward(spec: ProblemSpec, grid: TimeGrid, paths: BrownianEnsemble,
                     nu0: np.ndarray, u, cap: float = DEFAULT_STATE_CAP) -> PathEnsemble:
    """Controlled state under exponential-Euler stepping.

    x_{k+1} = exp(A dt) (x_k + a(t_k, x_k, u_k) dt + b(t_k, x_k, u_k) dW_k).
    For zero coefficients the semigroup is applied exactly.
    """
    M = paths.M
    u = as_control_array(u, grid, M, spec.m)
    E = semigroup_step(spec.A, grid.dt)
    dt = grid.dt
    ts = grid.times
    X = np.zeros((M, grid.N + 1, spec.n))
    X[:, 0, :] = np.broadcast_to(np.asarray(nu0, dtype=float), (M, spec.n))
    for k in range(grid.N):
        xk = X[:, k, :]
        uk = u[:, k, :]
        a = np.broadcast_to(np.asarray(spec.drift(ts[k], xk, uk)), (M, spec.n))
        b = np.broadcast_to(np.asarray(spec.diffusion(ts[k], xk, uk)),
                            (M, spec.n, paths.d))
        incr = xk + a * dt + np.einsum("pid,pd->pi", b, paths.increments[:, k, :])
        X[:, k + 1, :] = incr @ E.T
        _check_cap(X[:, k + 1, :], cap, "state")
    return PathEnsemble(values=X, grid=grid)


def simulate_first_variation(spec: ProblemSpec, grid: TimeGrid, paths: BrownianEnsemble,
                             base: PathEnsemble, u_bar, nu1: np.ndarray, u1,
                             cap: float = DEFAULT_STATE_CAP) -> PathEnsemble:
    """Linearized dynamics around (base, u_bar) driven by (nu1, u1).

    Exactly linear in (nu1, u1) path by path.
    """
    M = paths.M
    u_bar = as_control_array(u_bar, grid, M, spec.m)
    u1 = as_control_array(u1, grid, M, spec.m)
    E = semigroup_step(spec.A, grid.dt)
    dt = grid.dt
    ts = grid.times
    X1 = np.zeros((M, grid.N + 1, spec.n))
    X1[:, 0, :] = np.broadcast_to(np.asarray(nu1, dtype=float), (M, spec.n))
    for k in range(grid.N):
        xk = base.values[:, k, :]
        uk = u_bar[:, k, :]
        x1k = X1[:, k, :]
        u1k = u1[:, k, :]
        a1 = np.broadcast_to(np.asarray(spec.drift_x(ts[k], xk, uk)), (M, spec.n, spec.n))
        a2 = np.broadcast_to(np.asarray(spec.drift_u(ts[k], xk, uk)), (M, spec.n, spec.m))
        b1 = np.broadcast_to(np.asarray(spec.diffusion_x(ts[k], xk, uk)),
                             (M, spec.n, paths.d, spec.n))
        b2 = np.broadcast_to(np.asarray(spec.diffusion_u(ts[k], xk, uk)),
                             (M, spec.n, paths.d, spec.m))
        drift = np.einsum("pij,pj->pi", a1, x1k) + np.einsum("pij,pj->pi", a2, u1k)
        diff = np.einsum("pilj,pj->pil", b1, x1k) + np.einsum("pilj,pj->pil", b2, u1k)
        incr = x1k + drift * dt + np.einsum("pil,pl->pi", diff, paths.increments[:, k, :])
        X1[:, k + 1, :] = incr @ E.T
        _check_cap(X1[:, k + 1, :], cap, "first variation")
    return PathEnsemble(values=X1, grid=grid)


def simulate_second_variation(spec: ProblemSpec, grid: TimeGrid, paths: BrownianEnsemble,
                              base: PathEnsemble, u_bar, x1: PathEnsemble,
                              nu1: np.ndarray, u1, nu2: np.ndarray, u2,
                              cap: float = DEFAULT_STATE_CAP) -> PathEnsemble:
    """Second order variational dynamics with curvature source terms.

    The drift carries 1/2 a_xx(x1, x1) + a_xu(x1, u1) + 1/2 a_uu(u1, u1)
    evaluated along the nominal pair, and the diffusion the analogous terms.
    """
    if not spec.has_second_derivatives:
        raise ValueError("spec lacks second derivative maps")
    M = paths.M
    u_bar = as_control_array(u_bar, grid, M, spec.m)
    u1 = as_control_array(u1, grid, M, spec.m)
    u2 = as_control_array(u2, grid, M, spec.m)
    E = semigroup_step(spec.A, grid.dt)
    dt = grid.dt
    ts = grid.times
    X2 = np.zeros((M, grid.N + 1, spec.n))
    X2[:, 0, :] = np.broadcast_to(np.asarray(nu2, dtype=float), (M, spec.n))
    for k in range(grid.N):
        xk = base.values[:, k, :]
        uk = u_bar[:, k, :]
        x1k = x1.values[:, k, :]
        u1k = u1[:, k, :]
        x2k = X2[:, k, :]
        u2k = u2[:, k, :]
        a1 = np.broadcast_to(np.asarray(spec.drift_x(ts[k], xk, uk)), (M, spec.n, spec.n))
        a2 = np.broadcast_to(np.asarray(spec.drift_u(ts[k], xk, uk)), (M, spec.n, spec.m))
        b1 = np.broadcast_to(np.asarray(spec.diffusion_x(ts[k], xk, uk)),
                             (M, spec.n, paths.d, spec.n))
        b2 = np.broadcast_to(np.asarray(spec.diffusion_u(ts[k], xk, uk)),
                             (M, spec.n, paths.d, spec.m))
        a11 = np.broadcast_to(np.asarray(spec.drift_xx(ts[k], xk, uk)),
                              (M, spec.n, spec.n, spec.n))
        a12 = np.broadcast_to(np.asarray(spec.drift_xu(ts[k], xk, uk)),
                              (M, spec.n, spec.n, spec.m))
        a22 = np.broadcast_to(np.asarray(spec.drift_uu(ts[k], xk, uk)),
                              (M, spec.n, spec.m, spec.m))
        b11 = np.broadcast_to(np.asarray(spec.diffusion_xx(ts[k], xk, uk)),
                              (M, spec.n, paths.d, spec.n, spec.n))
        b12 = np.broadcast_to(np.asarray(spec.diffusion_xu(ts[k], xk, uk)),
                              (M, spec.n, paths.d, spec.n, spec.m))
        b22 = np.broadcast_to(np.asarray(spec.diffusion_uu(ts[k], xk, uk)),
                              (M, spec.n, paths.d, spec.m, spec.m))
        drift = (np.einsum("pij,pj->pi", a1, x2k)
                 + np.einsum("pij,pj->pi", a2, u2k)
                 + 0.5 * np.einsum("pijk,pj,pk->pi", a11, x1k, x1k)
                 + np.einsum("pijk,pj,pk->pi", a12, x1k, u1k)
                 + 0.5 * np.einsum("pijk,pj,pk->pi", a22, u1k, u1k))
        diff = (np.einsum("pilj,pj->pil", b1, x2k)
                + np.einsum("pilj,pj->pil", b2, u2k)
                + 0.5 * np.einsum("piljk,pj,pk->pil", b11, x1k, x1k)
                + np.einsum("piljk,pj,pk->pil", b12, x1k, u1k)
                + 0.5 * np.einsum("piljk,pj,pk->pil", b22, u1k, u1k))
        incr = x2k + drift * dt + np.einsum("pil,pl->pi", diff, paths.increments[:, k, :])
        X2[:, k + 1, :] = incr @ E.T
        _check_cap(X2[:, k + 1, :], cap, "second variation")
    return PathEnsemble(values=X2, grid=grid)


def sup_moment_norm(values: np.ndarray, p: int = 2) -> tuple[float, float]:
    """sup over grid times of (E |v(t)|^p)^(1/p), with a delta-method SE.

    values has shape (M, N+1, k); the SE is evaluated at the maximizing time.
    """
    M = values.shape[0]
    mags = np.linalg.norm(values, axis=2) ** p          # (M, N+1)
    moments = mags.mean(axis=0)                          # (N+1,)
    k_star = int(np.argmax(moments))
    m_star = moments[k_star]
    norm = m_star ** (1.0 / p)
    if m_star <= 0:
        return 0.0, 0.0
    se_m = float(mags[:, k_star].std(ddof=1)) / np.sqrt(M)
    se = (m_star ** (1.0 / p - 1.0)) / p * se_m
    return float(norm), float(se)


def fit_loglog_slope(epsilons: np.ndarray, norms: np.ndarray) -> float:
    """Least-squares slope of log(norm) against log(eps); NaN when degenerate."""
    mask = norms > 0
    if mask.sum() < 2:
        return float("nan")
    lx = np.log(np.asarray(epsilons)[mask])
    ly = np.log(np.asarray(norms)[mask])
    slope = np.polyfit(lx, ly, 1)[0]
    return float(slope)


def remainder_study_first(spec: ProblemSpec, grid: TimeGrid, paths: BrownianEnsemble,
                          nu0: np.ndarray, u_bar, var: VariationData,
                          p: int = 2) -> RemainderReport:
    """Taylor remainder of first order: r1 = (x^eps - x_bar - eps x1) / eps.

    The nominal and perturbed systems run on the same Brownian ensemble;
    the expected norms vanish as eps -> 0 (slope about 1 for C^2
    coefficients).
    """
    M = paths.M
    u_bar_arr = as_control_array(u_bar, grid, M, spec.m)
    u1_arr = as_control_array(var.u1, grid, M, spec.m)
    base = simulate_forward(spec, grid, paths, nu0, u_bar_arr)
    x1 = simulate_first_variation(spec, grid, paths, base, u_bar_arr, var.nu1, u1_arr)
    eps_arr = np.asarray(var.epsilon_ladder, dtype=float)
    norms, ses = [], []
    nu0 = np.asarray(nu0, dtype=float)
    nu1 = np.asarray(var.nu1, dtype=float)
    for eps in eps_arr:
        xe = simulate_forward(spec, grid, paths, nu0 + eps * nu1,
                              u_bar_arr + eps * u1_arr)
        r1 = (xe.values - base.values - eps * x1.values) / eps
        nrm, se = sup_moment_norm(r1, p=p)
        norms.append(nrm)
        ses.append(se)
    norms = np.asarray(norms)
    return RemainderReport(eps_arr, norms, np.asarray(ses),
                           fit_loglog_slope(eps_arr, norms))


def remainder_study_second(spec: ProblemSpec, grid: TimeGrid, paths: BrownianEnsemble,
                           nu0: np.ndarray, u_bar, var: VariationData,
                           p: int = 2) -> RemainderReport:
    """Second order remainder: r2 = (x^eps - x_bar - eps x1 - eps^2 x2) / eps^2."""
    if var.nu2 is None or var.u2 is None:
        raise ValueError("second order study needs nu2 and u2")
    M = paths.M
    u_bar_arr = as_control_array(u_bar, grid, M, spec.m)
    u1_arr = as_control_array(var.u1, grid, M, spec.m)
    u2_arr = as_control_array(var.u2, grid, M, spec.m)
    base = simulate_forward(spec, grid, paths, nu0, u_bar_arr)
    x1 = simulate_first_variation(spec, grid, paths, base, u_bar_arr, var.nu1, u1_arr)
    x2 = simulate_second_variation(spec, grid, paths, base, u_bar_arr, x1,
                                   var.nu1, u1_arr, var.nu2, u2_arr)
    eps_arr = np.asarray(var.epsilon_ladder, dtype=float)
    norms, ses = [], []
    nu0 = np.asarray(nu0, dtype=float)
    nu1 = np.asarray(var.nu1, dtype=float)
    nu2 = np.asarray(var.nu2, dtype=float)
    for eps in eps_arr:
        xe = simulate_forward(spec, grid, paths, nu0 + eps * nu1 + eps ** 2 * nu2,
                              u_bar_arr + eps * u1_arr + eps ** 2 * u2_arr)
        r2 = (xe.values - base.values - eps * x1.values - eps ** 2 * x2.values) / eps ** 2
        nrm, se = sup_moment_norm(r2, p=p)
        norms.append(nrm)
        ses.append(se)
    norms = np.asarray(norms)
    return RemainderReport(eps_arr, norms, np.asarray(ses),
                           fit_loglog_slope(eps_arr, norms))
