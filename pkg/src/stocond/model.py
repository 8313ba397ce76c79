"""Problem definitions, time grids, Brownian ensembles and path containers.

Everything downstream works on finite-dimensional truncations: the state
lives in R^n, controls in R^m, noise in R^d, and the Hilbert-Schmidt space
of diffusion values is R^{n x d} with the Frobenius inner product.

Coefficient maps are batched: they receive ``x`` of shape (M, n) and ``u``
of shape (M, m) and return arrays whose leading axis is the path axis.
Shape conventions for derivatives:

    drift(t, x, u)        -> (M, n)
    diffusion(t, x, u)    -> (M, n, d)
    drift_x               -> (M, n, n)      d a_i / d x_j at [., i, j]
    drift_u               -> (M, n, m)
    diffusion_x           -> (M, n, d, n)
    diffusion_u           -> (M, n, d, m)
    drift_xx              -> (M, n, n, n)   d2 a_i / dx_j dx_k
    drift_xu              -> (M, n, n, m)   d2 a_i / dx_j du_k
    drift_uu              -> (M, n, m, m)
    diffusion_xx          -> (M, n, d, n, n)
    diffusion_xu          -> (M, n, d, n, m)
    diffusion_uu          -> (M, n, d, m, m)

Maps may return arrays broadcastable to those shapes (e.g. constant
matrices); the engines broadcast as needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .cones import SetDescriptor
from .errors import NonFiniteValue


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * T / N, k = 0..N."""

    N: int
    T: float

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)


@dataclass(frozen=True)
class Functional:
    """Scalar functional of the state with first and second derivatives."""

    value: Callable[[np.ndarray], np.ndarray]          # (M, n) -> (M,)
    grad: Callable[[np.ndarray], np.ndarray]           # (M, n) -> (M, n)
    hess: Callable[[np.ndarray], np.ndarray] | None = None  # (M, n) -> (M, n, n)


@dataclass(frozen=True)
class RunningCost:
    """Integrand of a Bolza cost, with the derivatives bolza_reduce needs."""

    value: Callable      # (t, x, u) -> (M,)
    grad_x: Callable     # (t, x, u) -> (M, n)
    grad_u: Callable     # (t, x, u) -> (M, m)
    hess_xx: Callable | None = None
    hess_xu: Callable | None = None
    hess_uu: Callable | None = None


@dataclass(frozen=True)
class ProblemSpec:
    """Full control problem: dynamics, derivatives, costs and constraints."""

    n: int
    m: int
    d: int
    T: float
    A: np.ndarray
    drift: Callable
    diffusion: Callable
    drift_x: Callable
    drift_u: Callable
    diffusion_x: Callable
    diffusion_u: Callable
    terminal_cost: Functional
    U: SetDescriptor
    Ka: SetDescriptor
    drift_xx: Callable | None = None
    drift_xu: Callable | None = None
    drift_uu: Callable | None = None
    diffusion_xx: Callable | None = None
    diffusion_xu: Callable | None = None
    diffusion_uu: Callable | None = None
    state_constraint: Functional | None = None
    terminal_constraints: tuple[Functional, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))

    @property
    def has_second_derivatives(self) -> bool:
        return all(f is not None for f in (
            self.drift_xx, self.drift_xu, self.drift_uu,
            self.diffusion_xx, self.diffusion_xu, self.diffusion_uu))


@dataclass(frozen=True)
class BrownianEnsemble:
    """Independent N(0, dt) increments per path, step and channel."""

    grid: TimeGrid
    increments: np.ndarray  # (M, N, d)
    seed: int

    @property
    def M(self) -> int:
        return self.increments.shape[0]

    @property
    def d(self) -> int:
        return self.increments.shape[2]


@dataclass(frozen=True)
class PathEnsemble:
    """Adapted process samples on a grid; values has shape (M, N+1, k)."""

    values: np.ndarray
    grid: TimeGrid

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def slice(self, k: int) -> np.ndarray:
        return self.values[:, k, ...]


def generate_brownian(grid: TimeGrid, M: int, d: int, seed: int,
                      block_size: int | None = None) -> BrownianEnsemble:
    """Draw an (M, N, d) ensemble of N(0, dt) increments, reproducibly.

    With ``block_size`` the paths are generated block by block, each block's
    substream derived deterministically from (seed, block index), so blocks
    may be produced independently by parallel workers.
    """
    if M < 1 or grid.N < 1:
        raise ValueError("need at least one path and one step")
    root = np.sqrt(grid.dt)
    if block_size is None:
        incs = np.random.default_rng(seed).standard_normal((M, grid.N, d)) * root
    else:
        incs = np.empty((M, grid.N, d))
        for b, start in enumerate(range(0, M, block_size)):
            stop = min(start + block_size, M)
            rng = np.random.default_rng(np.random.SeedSequence((seed, b)))
            incs[start:stop] = rng.standard_normal((stop - start, grid.N, d)) * root
    return BrownianEnsemble(grid=grid, increments=incs, seed=seed)


def as_control_array(u, grid: TimeGrid, M: int, m: int) -> np.ndarray:
    """Broadcast a control specification to a full (M, N+1, m) array.

    Accepts a PathEnsemble, an (M, N+1, m) array, a deterministic (N+1, m)
    array, or a constant (m,) vector.
    """
    if isinstance(u, PathEnsemble):
        u = u.values
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = np.broadcast_to(u, (grid.N + 1, m))
    if u.ndim == 2:
        u = np.broadcast_to(u[None, :, :], (M, grid.N + 1, m))
    if u.shape != (M, grid.N + 1, m):
        raise ValueError(f"control shape {u.shape} incompatible with (M, N+1, m)")
    return u


# ---------------------------------------------------------------------------
# spec validation by finite differences
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    mismatches: dict[str, float] = field(default_factory=dict)
    log_norm_A: float = 0.0
    lipschitz_drift: float = 0.0
    lipschitz_diffusion: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def max_mismatch(self) -> float:
        return max(self.mismatches.values(), default=0.0)


def _fd_jacobian(f, x, h):
    """Central-difference Jacobian of f along the last axis of x."""
    base = np.asarray(f(x))
    out = np.zeros(base.shape + (x.shape[-1],))
    for j in range(x.shape[-1]):
        xp, xm = x.copy(), x.copy()
        xp[..., j] += h
        xm[..., j] -= h
        out[..., j] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h)
    return out


def _rel_mismatch(fd, declared):
    fd = np.asarray(fd, dtype=float)
    declared = np.broadcast_to(np.asarray(declared, dtype=float), fd.shape)
    denom = max(1.0, float(np.linalg.norm(fd.ravel())))
    return float(np.linalg.norm((fd - declared).ravel())) / denom


def validate_spec(spec: ProblemSpec, samples: int = 20, seed: int = 0,
                  step: float = 1e-4) -> ValidationReport:
    """Check every derivative map against central differences of its parent.

    Also reports the log-norm of A (a positive value only warns: the
    contractive-semigroup assumption is a modelling choice, not something
    the checks require) and crude Lipschitz estimates for drift/diffusion.
    """
    rng = np.random.default_rng(seed)
    report = ValidationReport()
    sym = (spec.A + spec.A.T) / 2
    report.log_norm_A = float(np.max(np.linalg.eigvalsh(sym)))
    if report.log_norm_A > 1e-12:
        report.warnings.append(
            f"log-norm of A is {report.log_norm_A:.3g} > 0; semigroup not contractive")

    ts = rng.uniform(0.0, spec.T, size=samples)
    xs = rng.standard_normal((samples, spec.n))
    us = rng.standard_normal((samples, spec.m))

    def record(name, fd, declared):
        if not (np.all(np.isfinite(fd)) and np.all(np.isfinite(declared))):
            raise NonFiniteValue(f"{name} produced a non-finite value")
        mis = _rel_mismatch(fd, declared)
        report.mismatches[name] = max(report.mismatches.get(name, 0.0), mis)

    for i in range(samples):
        t, x, u = ts[i], xs[i:i + 1], us[i:i + 1]
        a_val = np.asarray(spec.drift(t, x, u))
        b_val = np.asarray(spec.diffusion(t, x, u))
        if not (np.all(np.isfinite(a_val)) and np.all(np.isfinite(b_val))):
            raise NonFiniteValue("drift or diffusion non-finite at a sampled point")
        record("drift_x", _fd_jacobian(lambda xx: spec.drift(t, xx, u), x, step),
               spec.drift_x(t, x, u))
        record("drift_u", _fd_jacobian(lambda uu: spec.drift(t, x, uu), u, step),
               spec.drift_u(t, x, u))
        record("diffusion_x", _fd_jacobian(lambda xx: spec.diffusion(t, xx, u), x, step),
               spec.diffusion_x(t, x, u))
        record("diffusion_u", _fd_jacobian(lambda uu: spec.diffusion(t, x, uu), u, step),
               spec.diffusion_u(t, x, u))
        if spec.drift_xx is not None:
            record("drift_xx", _fd_jacobian(lambda xx: spec.drift_x(t, xx, u), x, step),
                   spec.drift_xx(t, x, u))
        if spec.drift_xu is not None:
            record("drift_xu", _fd_jacobian(lambda uu: spec.drift_x(t, x, uu), u, step),
                   spec.drift_xu(t, x, u))
        if spec.drift_uu is not None:
            record("drift_uu", _fd_jacobian(lambda uu: spec.drift_u(t, x, uu), u, step),
                   spec.drift_uu(t, x, u))
        if spec.diffusion_xx is not None:
            record("diffusion_xx",
                   _fd_jacobian(lambda xx: spec.diffusion_x(t, xx, u), x, step),
                   spec.diffusion_xx(t, x, u))
        if spec.diffusion_xu is not None:
            record("diffusion_xu",
                   _fd_jacobian(lambda uu: spec.diffusion_x(t, x, uu), u, step),
                   spec.diffusion_xu(t, x, u))
        if spec.diffusion_uu is not None:
            record("diffusion_uu",
                   _fd_jacobian(lambda uu: spec.diffusion_u(t, x, uu), u, step),
                   spec.diffusion_uu(t, x, u))

    gv = spec.terminal_cost.grad(xs)
    record("terminal_cost_grad",
           _fd_jacobian(lambda xx: spec.terminal_cost.value(xx), xs, step), gv)
    if spec.terminal_cost.hess is not None:
        record("terminal_cost_hess",
               _fd_jacobian(lambda xx: spec.terminal_cost.grad(xx), xs, step),
               spec.terminal_cost.hess(xs))

    # crude Lipschitz estimates over sampled pairs (same t, u)
    lip_a, lip_b = 0.0, 0.0
    for i in range(samples - 1):
        t, u = ts[i], us[i:i + 1]
        x1, x2 = xs[i:i + 1], xs[i + 1:i + 2]
        dx = float(np.linalg.norm(x1 - x2))
        if dx < 1e-12:
            continue
        lip_a = max(lip_a, float(np.linalg.norm(
            np.ravel(spec.drift(t, x1, u) - spec.drift(t, x2, u)))) / dx)
        lip_b = max(lip_b, float(np.linalg.norm(
            np.ravel(spec.diffusion(t, x1, u) - spec.diffusion(t, x2, u)))) / dx)
    report.lipschitz_drift = lip_a
    report.lipschitz_diffusion = lip_b
    return report


# ---------------------------------------------------------------------------
# Bolza-to-Mayer reduction
# ---------------------------------------------------------------------------

def bolza_reduce(spec: ProblemSpec, running_cost: RunningCost) -> ProblemSpec:
    """Append an accumulator state integrating the running cost.

    The returned spec has state dimension n + 1 where the extra coordinate
    satisfies d(extra) = running_cost dt (no noise), and the terminal cost
    becomes original + extra.  Constraints keep acting on the first n
    coordinates.
    """
    n, m, d = spec.n, spec.m, spec.d
    A_ext = np.zeros((n + 1, n + 1))
    A_ext[:n, :n] = spec.A

    def split(x):
        return x[..., :n]

    def drift(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1,))
        out[..., :n] = np.asarray(spec.drift(t, xa, u))
        out[..., n] = np.asarray(running_cost.value(t, xa, u))
        return out

    def diffusion(t, x, u):
        xa = split(x)
        b = np.asarray(spec.diffusion(t, xa, u))
        out = np.zeros(x.shape[:-1] + (n + 1, d))
        out[..., :n, :] = b
        return out

    def drift_x(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, n + 1))
        out[..., :n, :n] = np.asarray(spec.drift_x(t, xa, u))
        out[..., n, :n] = np.asarray(running_cost.grad_x(t, xa, u))
        return out

    def drift_u(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, m))
        out[..., :n, :] = np.asarray(spec.drift_u(t, xa, u))
        out[..., n, :] = np.asarray(running_cost.grad_u(t, xa, u))
        return out

    def diffusion_x(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, d, n + 1))
        out[..., :n, :, :n] = np.asarray(spec.diffusion_x(t, xa, u))
        return out

    def diffusion_u(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, d, m))
        out[..., :n, :, :] = np.asarray(spec.diffusion_u(t, xa, u))
        return out

    # second derivatives: the accumulator row carries the running-cost hessian
    def drift_xx(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, n + 1, n + 1))
        if spec.drift_xx is not None:
            out[..., :n, :n, :n] = np.asarray(spec.drift_xx(t, xa, u))
        if running_cost.hess_xx is not None:
            out[..., n, :n, :n] = np.asarray(running_cost.hess_xx(t, xa, u))
        return out

    def drift_xu(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, n + 1, m))
        if spec.drift_xu is not None:
            out[..., :n, :n, :] = np.asarray(spec.drift_xu(t, xa, u))
        if running_cost.hess_xu is not None:
            out[..., n, :n, :] = np.asarray(running_cost.hess_xu(t, xa, u))
        return out

    def drift_uu(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, m, m))
        if spec.drift_uu is not None:
            out[..., :n, :, :] = np.asarray(spec.drift_uu(t, xa, u))
        if running_cost.hess_uu is not None:
            out[..., n, :, :] = np.asarray(running_cost.hess_uu(t, xa, u))
        return out

    def diffusion_xx(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, d, n + 1, n + 1))
        if spec.diffusion_xx is not None:
            out[..., :n, :, :n, :n] = np.asarray(spec.diffusion_xx(t, xa, u))
        return out

    def diffusion_xu(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, d, n + 1, m))
        if spec.diffusion_xu is not None:
            out[..., :n, :, :n, :] = np.asarray(spec.diffusion_xu(t, xa, u))
        return out

    def diffusion_uu(t, x, u):
        xa = split(x)
        out = np.zeros(x.shape[:-1] + (n + 1, d, m, m))
        if spec.diffusion_uu is not None:
            out[..., :n, :, :, :] = np.asarray(spec.diffusion_uu(t, xa, u))
        return out

    def lift_functional(fun: Functional) -> Functional:
        def value(x):
            return np.asarray(fun.value(split(x)))

        def grad(x):
            out = np.zeros(x.shape)
            out[..., :n] = np.asarray(fun.grad(split(x)))
            return out

        hess = None
        if fun.hess is not None:
            def hess(x):
                out = np.zeros(x.shape + (n + 1,))
                out[..., :n, :n] = np.asarray(fun.hess(split(x)))
                return out
        return Functional(value=value, grad=grad, hess=hess)

    def terminal_value(x):
        return np.asarray(spec.terminal_cost.value(split(x))) + x[..., n]

    def terminal_grad(x):
        out = np.zeros(x.shape)
        out[..., :n] = np.asarray(spec.terminal_cost.grad(split(x)))
        out[..., n] = 1.0
        return out

    terminal_hess = None
    if spec.terminal_cost.hess is not None:
        def terminal_hess(x):
            out = np.zeros(x.shape + (n + 1,))
            out[..., :n, :n] = np.asarray(spec.terminal_cost.hess(split(x)))
            return out

    return replace(
        spec,
        n=n + 1,
        A=A_ext,
        drift=drift,
        diffusion=diffusion,
        drift_x=drift_x,
        drift_u=drift_u,
        diffusion_x=diffusion_x,
        diffusion_u=diffusion_u,
        drift_xx=drift_xx,
        drift_xu=drift_xu,
        drift_uu=drift_uu,
        diffusion_xx=diffusion_xx,
        diffusion_xu=diffusion_xu,
        diffusion_uu=diffusion_uu,
        terminal_cost=Functional(terminal_value, terminal_grad, terminal_hess),
        state_constraint=(None if spec.state_constraint is None
                          else lift_functional(spec.state_constraint)),
        terminal_constraints=tuple(lift_functional(g)
                                   for g in spec.terminal_constraints),
    )


def extend_initial_state(nu0: np.ndarray, reduced: ProblemSpec) -> np.ndarray:
    """Initial state for a reduced spec: original state plus a zero accumulator."""
    nu0 = np.asarray(nu0, dtype=float)
    out = np.zeros(reduced.n)
    out[: nu0.size] = nu0
    return out


# ---------------------------------------------------------------------------
# zero maps for linear problems
# ---------------------------------------------------------------------------

def zero_map(*shape_tail):
    """Coefficient map returning zeros of batch shape + shape_tail."""
    def fn(t, x, u):
        return np.zeros(x.shape[:-1] + tuple(shape_tail))
    return fn


def export_ensemble_csv(ens: PathEnsemble, path: str) -> None:
    """Dump an ensemble as CSV rows (path, time index, components...)."""
    M, K, k = ens.values.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("path,step," + ",".join(f"c{i}" for i in range(k)) + "\n")
        for p in range(M):
            for j in range(K):
                row = ",".join(repr(v) for v in ens.values[p, j])
                fh.write(f"{p},{j},{row}\n")


def export_ensemble_npz(ens: PathEnsemble, path: str) -> None:
    np.savez_compressed(path, values=ens.values, times=ens.grid.times)
