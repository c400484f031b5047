"""The four linearization schemes and the per-time-step iteration driver.

Every scheme maps an iterate (p, q, u) to the next one in incremental form;
the initial guess of a time step is the previous time level.

* monolithic Newton: coupled solve for (dp, dq, du) with the exact Jacobian;
* fixed-stress L-scheme (FSL): flow solve with constant diagonal
  stabilization (L + 1/N + beta_FS) and no constitutive derivatives,
  then an elasticity solve at the new pressure;
* fixed-stress modified Picard (FS-MP): as FSL but with the first-order
  pressure coefficient phi ds/dp + (1/N + beta_FS) s^2;
* fixed-stress Newton (FS-Newton): FS-MP plus the mobility-derivative
  coupling in the flux block.

beta_FS = alpha^2 / (2 mu / d + lambda) is the classical fixed-stress
stabilization.  Convergence combines absolute and relative L2 criteria on
the increments.  Anderson acceleration is applied as post-processing on the
concatenated mass-weighted coefficient vector; the raw scheme increment at
the current (possibly accelerated) iterate drives the convergence test, and
the accepted state is always the plain image, so depth 0 is bitwise
identical to the unaccelerated scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import constitutive as laws
from .anderson import AndersonConfig, AndersonWindow
from .constitutive import QuadratureError
from .fem import DiscreteOperators, LinearSolveError, LinearSystem, solve_indefinite
from .model import (
    PhysicsParams,
    PoroState,
    ResidualError,
    _flow_parts,
    _iterate_porosity,
    _mech_residual,
    _mobility_coupling,
    newton_blocks,
    porosity_increment,
    prescribed_flux,
)

__all__ = [
    "SchemeConfig",
    "IterationReport",
    "fixed_stress_beta",
    "lscheme_parameter",
    "newton_iteration",
    "fsl_iteration",
    "fsl_local_iteration",
    "fsmp_iteration",
    "fsnewton_iteration",
    "converged",
    "run_time_step",
    "run_transient",
    "TransientResult",
]

KINDS = ("newton", "fsl", "fsmp", "fsnewton")

GROWTH_FACTOR = 1e4        # increment growth classifying divergence
STAGNATION_SPAN = 20       # iterations over which flat increments stagnate
STAGNATION_RTOL = 0.01
STAGNATION_STREAK = 5      # consecutive flat comparisons required


@dataclass(frozen=True)
class SchemeConfig:
    """Which linearization to run and its tuning.

    The L-scheme stabilization comes in two derivative-free flavors:

    * ``l_mode="local"`` (default): diagonal M_p (phi L_s + (1/N + beta) s^2)
      with the porosity/saturation weights of the current iterate and L_s the
      saturation Lipschitz constant -- the a-priori local bound of the
      modified-Picard coefficient.  This is the tuning behind the reference
      iteration counts of the benchmark sweeps.
    * ``l_mode="global"``: constant diagonal (L + 1/N + beta_FS) M_p with the
      globally maximized parameter.  ``L`` gives the parameter explicitly
      (and implies global mode); when None it is derived so that the combined
      stabilization equals L_scale (L_s + beta_FS).

    ``L_scale`` scales the stabilization in either mode (1.0: plain FSL,
    0.5: the halved variant).
    """

    kind: str
    L: float | None = None
    L_scale: float = 1.0
    l_mode: str = "local"
    max_iters: int = 500
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.l_mode not in ("local", "global"):
            raise ValueError(f"unknown l_mode {self.l_mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.L is not None and self.L <= 0:
            raise ValueError("L must be positive")


@dataclass
class IterationReport:
    """Per-time-step iteration history and termination status."""

    termination: str = "max_iters"
    iterations: int = 0
    increment_norms: list = field(default_factory=list)   # (|dp|, |dq|, |du|) L2
    residual_norms: list = field(default_factory=list)    # (|r_p|, |r_q|, |r_u|)
    aa_weights: list = field(default_factory=list)
    failure: str | None = None
    p_trace: list | None = None

    @property
    def converged(self) -> bool:
        return self.termination == "converged"


def fixed_stress_beta(mu: float, lam: float, alpha: float, d: int = 2) -> float:
    """Fixed-stress stabilization alpha^2 / (2 mu / d + lambda)."""
    if mu <= 0 or d not in (2, 3):
        raise ValueError("require mu > 0 and d in {2, 3}")
    return alpha**2 / (2.0 * mu / d + lam)


def lscheme_parameter(scheme: SchemeConfig, params: PhysicsParams) -> float:
    """Resolve the L parameter of the flow stabilization for FSL runs."""
    if scheme.L is not None:
        return scheme.L
    beta = fixed_stress_beta(params.mu, params.lam, params.alpha)
    L = scheme.L_scale * (params.vg.saturation_lipschitz() + beta) - beta
    if L <= 0:
        raise ValueError("derived L-scheme parameter is not positive")
    return L


# ----------------------------------------------------------------------
# Single iterations
# ----------------------------------------------------------------------


def _constrained_flux_increment(state, params, ops, t_new):
    return prescribed_flux(ops, params, t_new) - state.q[ops.fixed_q]


def _residual_norms(parts, r_u, ops):
    rp = float(np.sqrt(np.sum(parts.r_p**2 / ops.M_p)))
    return (rp, float(np.linalg.norm(parts.r_q)), float(np.linalg.norm(r_u)))


def _flow_solve(state, prev, params, ops, parts, cpp, bqp, t_new):
    """Solve the stabilized mixed flow block for (dp, dq); returns the new
    pressure/flux arrays and the full flux increment."""
    dq_fix = _constrained_flux_increment(state, params, ops, t_new)
    rhs_p = parts.r_p
    rhs_q = parts.r_q[ops.free_q]
    if np.any(dq_fix != 0.0):
        rhs_p = rhs_p - params.tau * (ops.D_pq_b @ dq_fix)
        rhs_q = rhs_q - parts.kinv[ops.free_q][:, ops.fixed_q] @ dq_fix
    aqp = -ops.D_pq_f.T if bqp is None else (bqp - ops.D_pq.T)[ops.free_q]
    matrix = sp.block_array(
        [
            [sp.diags_array(cpp), params.tau * ops.D_pq_f],
            [aqp, parts.kinv[ops.free_q][:, ops.free_q]],
        ],
        format="csr",
    )
    sol = solve_indefinite(LinearSystem(matrix), np.concatenate([rhs_p, rhs_q]))
    n_p = ops.mesh.n_cells
    dp = sol[:n_p]
    dq = np.zeros(ops.mesh.n_edges)
    dq[ops.free_q] = sol[n_p:]
    dq[ops.fixed_q] = dq_fix
    return dp, dq


def _mech_step(p_new, q_new, u_old, params, ops, t_new):
    """Elasticity update at the new pressure and old displacement."""
    trial = PoroState(p=p_new, q=q_new, u=u_old, time=t_new)
    r_u = _mech_residual(trial, u_old, params, ops)
    du = np.zeros_like(u_old)
    du[ops.free_u] = ops.elastic_solve(r_u[ops.free_u])
    state = PoroState(p=p_new, q=q_new, u=u_old + du, time=t_new)
    state._sat = trial._sat
    state._pe = trial._pe
    return state, du, r_u


def _split_step(state, prev, params, ops, cpp_of_parts, with_mobility_block):
    t_new = prev.time + params.tau
    parts = _flow_parts(state, prev, params, ops)
    cpp = cpp_of_parts(parts)
    bqp = None
    if with_mobility_block:
        bqp, _ = _mobility_coupling(state, params, ops)
    dp, dq = _flow_solve(state, prev, params, ops, parts, cpp, bqp, t_new)
    new_state, du, r_u = _mech_step(state.p + dp, state.q + dq, state.u, params, ops, t_new)
    inc = (ops.pressure_norm(dp), ops.flux_norm(dq), ops.disp_norm(du))
    return new_state, inc, _residual_norms(parts, r_u, ops)


def fsl_iteration(state: PoroState, prev: PoroState, params: PhysicsParams,
                  ops: DiscreteOperators, L: float):
    """One fixed-stress L-scheme sweep: constant-coefficient flow solve with
    diagonal (L + 1/N + beta_FS), then elasticity at the new pressure.  No
    constitutive derivatives are evaluated."""
    beta = fixed_stress_beta(params.mu, params.lam, params.alpha)
    coeff = (L + params.inv_n + beta) * ops.M_p
    return _split_step(state, prev, params, ops, lambda parts: coeff, False)


def fsl_local_iteration(state: PoroState, prev: PoroState, params: PhysicsParams,
                        ops: DiscreteOperators, scale: float = 1.0):
    """Fixed-stress L-scheme sweep with the locally weighted a-priori bound
    M_p (phi L_s + (1/N + beta) s^2) as flow diagonal.  Still derivative
    free: L_s is the closed-form Lipschitz constant, porosity and saturation
    are plain evaluations at the current iterate."""
    beta = fixed_stress_beta(params.mu, params.lam, params.alpha)
    l_s = params.vg.saturation_lipschitz()

    def cpp(parts):
        phi_it = _iterate_porosity(state, prev, params, ops)
        return ops.M_p * (
            phi_it * scale * l_s + (params.inv_n + scale * beta) * parts.sat**2
        )

    return _split_step(state, prev, params, ops, cpp, False)


def fsmp_iteration(state: PoroState, prev: PoroState, params: PhysicsParams,
                   ops: DiscreteOperators):
    """Fixed-stress modified Picard sweep: first-order saturation
    linearization in the pressure block, Picard mobility."""
    beta = fixed_stress_beta(params.mu, params.lam, params.alpha)

    def cpp(parts):
        phi_it = _iterate_porosity(state, prev, params, ops)
        sd = laws.saturation_derivative(state.p, params.vg)
        return ops.M_p * (phi_it * sd + (params.inv_n + beta) * parts.sat**2)

    return _split_step(state, prev, params, ops, cpp, False)


def fsnewton_iteration(state: PoroState, prev: PoroState, params: PhysicsParams,
                       ops: DiscreteOperators):
    """Fixed-stress Newton sweep: FS-MP plus the chain-rule mobility
    derivative coupling in the flux block."""
    beta = fixed_stress_beta(params.mu, params.lam, params.alpha)

    def cpp(parts):
        phi_it = _iterate_porosity(state, prev, params, ops)
        sd = laws.saturation_derivative(state.p, params.vg)
        return ops.M_p * (phi_it * sd + (params.inv_n + beta) * parts.sat**2)

    return _split_step(state, prev, params, ops, cpp, True)


def newton_iteration(state: PoroState, prev: PoroState, params: PhysicsParams,
                     ops: DiscreteOperators):
    """One monolithic Newton step on the coupled system."""
    t_new = prev.time + params.tau
    blocks = newton_blocks(state, prev, params, ops)
    parts = blocks.parts
    r_u = _mech_residual(state, state.u, params, ops)
    dq_fix = _constrained_flux_increment(state, params, ops, t_new)
    rhs_p = parts.r_p
    rhs_q = parts.r_q[ops.free_q]
    if np.any(dq_fix != 0.0):
        rhs_p = rhs_p - params.tau * (ops.D_pq_b @ dq_fix)
        rhs_q = rhs_q - parts.kinv[ops.free_q][:, ops.fixed_q] @ dq_fix
    rhs = np.concatenate([rhs_p, rhs_q, r_u[ops.free_u]])
    sol = solve_indefinite(LinearSystem(blocks.matrix), rhs)

    n_p = ops.mesh.n_cells
    n_qf = len(ops.free_q)
    dp = sol[:n_p]
    dq = np.zeros(ops.mesh.n_edges)
    dq[ops.free_q] = sol[n_p:n_p + n_qf]
    dq[ops.fixed_q] = dq_fix
    du = np.zeros(2 * ops.mesh.n_nodes)
    du[ops.free_u] = sol[n_p + n_qf:]
    new_state = PoroState(p=state.p + dp, q=state.q + dq, u=state.u + du, time=t_new)
    inc = (ops.pressure_norm(dp), ops.flux_norm(dq), ops.disp_norm(du))
    return new_state, inc, _residual_norms(parts, r_u, ops)


def converged(increment_norms, state_norms, eps_abs: float, eps_rel: float) -> bool:
    """Combined absolute and relative L2 stopping criterion.

    Both the sum of the increment norms and the sum of the incrementwise
    relative terms must fall below their tolerances; a relative term whose
    state norm is below 1e-14 is dropped (e.g. the initial zero
    displacement)."""
    if any(n < 0 for n in increment_norms):
        raise ValueError("norms must be non-negative")
    if sum(increment_norms) >= eps_abs:
        return False
    rel = sum(
        inc / ref for inc, ref in zip(increment_norms, state_norms) if ref >= 1e-14
    )
    return rel < eps_rel


def _iteration_fn(scheme: SchemeConfig, params: PhysicsParams):
    if scheme.kind == "newton":
        return newton_iteration
    if scheme.kind == "fsmp":
        return fsmp_iteration
    if scheme.kind == "fsnewton":
        return fsnewton_iteration
    if scheme.l_mode == "local" and scheme.L is None:
        scale = scheme.L_scale
        return lambda state, prev, params, ops: fsl_local_iteration(
            state, prev, params, ops, scale
        )
    L = lscheme_parameter(scheme, params)
    return lambda state, prev, params, ops: fsl_iteration(state, prev, params, ops, L)


def _state_from_vector(vec, ops, t_new) -> PoroState:
    n_p = ops.mesh.n_cells
    n_q = ops.mesh.n_edges
    return PoroState(
        p=vec[:n_p].copy(),
        q=vec[n_p:n_p + n_q].copy(),
        u=vec[n_p + n_q:].copy(),
        time=t_new,
    )


def run_time_step(scheme: SchemeConfig, accel: AndersonConfig | None,
                  prev: PoroState, params: PhysicsParams, ops: DiscreteOperators,
                  trace: bool = False):
    """Iterate one scheme (optionally through the Anderson post-processor)
    over a single time step.  Failures terminate the loop and are reported
    in the IterationReport, never raised."""
    t_new = prev.time + params.tau
    step = _iteration_fn(scheme, params)
    window = None
    if accel is not None:
        window = AndersonWindow(accel, weights=ops.aa_weights)
    report = IterationReport(p_trace=[prev.p.copy()] if trace else None)
    current = prev
    accepted = None
    totals = []

    for i in range(1, scheme.max_iters + 1):
        try:
            image, inc, res = step(current, prev, params, ops)
        except (LinearSolveError, ResidualError, QuadratureError) as exc:
            report.termination = "diverged"
            report.failure = str(exc)
            break
        report.iterations = i
        report.increment_norms.append(inc)
        report.residual_norms.append(res)
        total = sum(inc)
        totals.append(total)

        if not np.isfinite(total):
            report.termination = "diverged"
            break
        state_norms = (
            ops.pressure_norm(image.p),
            ops.flux_norm(image.q),
            ops.disp_norm(image.u),
        )
        if converged(inc, state_norms, scheme.eps_abs, scheme.eps_rel):
            accepted = image
            report.termination = "converged"
            if trace:
                report.p_trace.append(image.p.copy())
            break
        if total > GROWTH_FACTOR * max(totals[0], 1e-300):
            report.termination = "diverged"
            break
        if len(totals) > STAGNATION_SPAN + STAGNATION_STREAK and all(
            abs(totals[-1 - k] - totals[-1 - k - STAGNATION_SPAN])
            < STAGNATION_RTOL * totals[-1 - k - STAGNATION_SPAN]
            for k in range(STAGNATION_STREAK)
        ):
            report.termination = "stagnated"
            break

        if window is not None:
            vec, alpha, fallback = window.push(
                image.vector(), image.vector() - current.vector()
            )
            report.aa_weights.append(alpha)
            current = _state_from_vector(vec, ops, t_new)
        else:
            current = image
        if trace:
            report.p_trace.append(current.p.copy())

    if accepted is None:
        return current, report

    pe_new = accepted.pore_pressure(params) if params.inv_n != 0.0 else None
    pe_prev = prev.pore_pressure(params) if params.inv_n != 0.0 else None
    accepted.porosity = prev.porosity + porosity_increment(
        accepted.u, prev.u, pe_new, pe_prev, params, ops
    )
    return accepted, report


@dataclass
class TransientResult:
    states: list
    reports: list
    completed: bool
    fail_step: int | None
    fail_status: str | None

    @property
    def iterations_per_step(self):
        return [r.iterations for r in self.reports]

    @property
    def average_iterations(self):
        counts = self.iterations_per_step
        return sum(counts) / len(counts) if counts else float("nan")


def run_transient(scheme: SchemeConfig, accel: AndersonConfig | None,
                  init: PoroState, params: PhysicsParams, ops: DiscreteOperators,
                  n_steps: int | None = None, trace: bool = False) -> TransientResult:
    """March n_steps backward-Euler steps from the initial state, stopping
    at the first non-converged step (the failure is data, not an error)."""
    n_steps = params.n_steps if n_steps is None else n_steps
    states = [init]
    reports = []
    for n in range(1, n_steps + 1):
        state, report = run_time_step(scheme, accel, states[-1], params, ops, trace=trace)
        reports.append(report)
        if not report.converged:
            return TransientResult(states, reports, False, n, report.termination)
        states.append(state)
    return TransientResult(states, reports, True, None, None)
