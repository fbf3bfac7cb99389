"""Solver service: frozen-upwind Newton per timestep and the time loop."""

import math
from collections.abc import Callable
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spilu, spsolve

from porflow.core.errors import (
    CapillaryRangeError,
    LinearSolveError,
    NonConvergenceError,
    SolverError,
    TimeGridError,
)
from porflow.core.logger import log_error, log_step, logger
from porflow.core.models import (
    JacobianMode,
    LinearSolverKind,
    SchemeContext,
    SolverConfig,
    SourceField,
    State,
    TimestepReport,
    Trajectory,
)
from porflow.services.diagnostics_service import calculate_step_energy, check_max_principle
from porflow.services.physics_service import extended_saturation, get_capillary_range
from porflow.services.scheme_service import (
    accumulation_scale,
    compute_upwind,
    evaluate_residual,
    make_state,
    residual_jacobian,
)

CLAMP_FLAG_RTOL = 1e-9
TIME_GRID_RTOL = 1e-9

# Sources for a step: fixed, or built from the step's mid time
SourceSpec = SourceField | Callable[[float], SourceField]


class _NewtonSystem:
    """Residual and Jacobian of one timestep in the packed free unknowns.

    Packed layout interleaves phases: x[2 f] = p_l, x[2 f + 1] = p_g of the
    f-th free dual volume.
    """

    def __init__(
        self,
        context: SchemeContext,
        prev: State,
        dt: float,
        sources: SourceField,
        config: SolverConfig,
    ) -> None:
        self.context = context
        self.prev = prev
        self.dt = dt
        self.sources = sources
        self.config = config
        self.free = context.free
        self.n_volumes = context.dual.n_volumes
        lo, hi = get_capillary_range(context.fluid)
        self.pc_range = (lo, hi)
        self.pressure_scale = config.pressure_scale or (hi - lo)

    def pack(self, p_l: np.ndarray, p_g: np.ndarray) -> np.ndarray:
        return np.stack([p_l[self.free], p_g[self.free]], axis=1).ravel()

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p_l = np.zeros(self.n_volumes)
        p_g = np.zeros(self.n_volumes)
        pairs = x.reshape(-1, 2)
        p_l[self.free] = pairs[:, 0]
        p_g[self.free] = pairs[:, 1]
        return p_l, p_g

    def project(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        """Move p_g - p_l into range(p_c) symmetrically; return the largest shift."""
        pairs = x.reshape(-1, 2)
        pc = pairs[:, 1] - pairs[:, 0]
        excess = pc - np.clip(pc, *self.pc_range)
        projected = np.stack([pairs[:, 0] + 0.5 * excess, pairs[:, 1] - 0.5 * excess], axis=1)
        return projected.ravel(), float(np.max(np.abs(excess), initial=0.0))

    def upwind(self, x: np.ndarray) -> np.ndarray:
        return compute_upwind(self.context, *self.unpack(x))

    def residual(self, x: np.ndarray, upwind: Optional[np.ndarray] = None) -> np.ndarray:
        p_l, p_g = self.unpack(x)
        s_l = extended_saturation(self.context.fluid, p_g - p_l)
        rows = evaluate_residual(
            self.context, p_l, p_g, s_l, self.prev, self.dt, self.sources, upwind
        )
        return rows[self.free].ravel()

    def jacobian(self, x: np.ndarray, f0: np.ndarray, upwind: np.ndarray) -> sp.csr_matrix:
        if self.config.jacobian == JacobianMode.ANALYTIC:
            p_l, p_g = self.unpack(x)
            return residual_jacobian(self.context, p_l, p_g, self.dt, self.sources, upwind)
        return self.fd_jacobian(x, f0, upwind)

    def fd_jacobian(self, x: np.ndarray, f0: np.ndarray, upwind: np.ndarray) -> sp.csr_matrix:
        """Forward-difference Jacobian, one residual per (color, phase)."""
        pattern, colors = get_fd_coloring(self.context)
        rel = self.config.fd_relative_step
        steps = np.maximum(rel * np.abs(x), rel * self.pressure_scale)
        coo = pattern.tocoo()  # row = affected free volume, col = perturbed free volume
        rows, cols, vals = [], [], []
        for color in range(int(colors.max()) + 1):
            members = colors == color
            touched = members[coo.col]
            for b in range(2):
                shift = np.zeros_like(x)
                shift[2 * np.flatnonzero(members) + b] = steps[2 * np.flatnonzero(members) + b]
                diff = (self.residual(x + shift, upwind) - f0).reshape(-1, 2)
                col = 2 * coo.col[touched] + b
                for a in range(2):
                    rows.append(2 * coo.row[touched] + a)
                    cols.append(col)
                    vals.append(diff[coo.row[touched], a] / steps[col])
        n = len(x)
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()


def get_fd_coloring(context: SchemeContext) -> tuple[sp.csr_matrix, np.ndarray]:
    """Dependency pattern between free volumes and a distance-2 greedy coloring.

    Two volumes share a color only if no residual row depends on both.
    """
    dual = context.dual
    ns = dual.n_volumes
    adjacency = sp.csr_matrix(
        (np.ones(len(dual.neighbor_idx)), dual.neighbor_idx, dual.neighbor_ptr), shape=(ns, ns)
    )
    closed = (adjacency + sp.identity(ns, format="csr")).tocsr()
    free = context.free
    pattern = closed[free][:, free].tocsr()
    pattern.sort_indices()
    distance2 = (pattern @ pattern).tocsr()

    colors = np.full(len(free), -1, dtype=np.int64)
    for v in range(len(free)):
        start, stop = distance2.indptr[v], distance2.indptr[v + 1]
        taken = set(colors[distance2.indices[start:stop]].tolist())
        color = 0
        while color in taken:
            color += 1
        colors[v] = color
    return pattern, colors


def solve_linear(
    jacobian: sp.csr_matrix, rhs: np.ndarray, config: SolverConfig, iterate: int
) -> np.ndarray:
    """Solve J dx = rhs with the configured linear solver.

    Raises:
        LinearSolveError: factorization failure, no convergence or non-finite result
    """
    try:
        if config.linear_solver == LinearSolverKind.DIRECT:
            dx = spsolve(jacobian.tocsc(), rhs)
        else:
            ilu = spilu(jacobian.tocsc())
            preconditioner = LinearOperator(jacobian.shape, ilu.solve)
            dx, info = gmres(
                jacobian, rhs, rtol=config.iterative_tol, atol=0.0, M=preconditioner,
                restart=50, maxiter=200,
            )
            if info != 0:
                raise LinearSolveError(iterate, f"GMRES returned info={info}")
    except (RuntimeError, ValueError) as e:
        if isinstance(e, LinearSolveError):
            raise
        raise LinearSolveError(iterate, str(e)) from e
    dx = np.asarray(dx, dtype=np.float64).ravel()
    if not np.all(np.isfinite(dx)):
        raise LinearSolveError(iterate, "singular Jacobian (non-finite update)")
    return dx


def _phase_norms(f: np.ndarray) -> tuple[float, float]:
    rows = f.reshape(-1, 2)
    return float(np.linalg.norm(rows[:, 0])), float(np.linalg.norm(rows[:, 1]))


def _newton(
    context: SchemeContext,
    prev: State,
    dt: float,
    sources: SourceField,
    config: SolverConfig,
) -> tuple[np.ndarray, np.ndarray, TimestepReport]:
    """Newton iteration from the previous state; returns (p_l, p_g, partial report)."""
    system = _NewtonSystem(context, prev, dt, sources, config)
    x, max_clamp = system.project(system.pack(prev.p_l, prev.p_g))
    f = system.residual(x, system.upwind(x))
    norm = float(np.linalg.norm(f))
    scale = accumulation_scale(context, dt)
    target = config.newton_tol * max(norm, config.residual_floor * scale)
    activations = 0

    iteration = 0
    while not norm <= target:
        if iteration >= config.newton_max_iter:
            raise NonConvergenceError(
                f"Newton did not converge in {iteration} iterations (dt={dt:.6g})",
                dt=dt,
                residual=norm,
                target=target,
            )
        iteration += 1
        upwind = system.upwind(x)
        jacobian = system.jacobian(x, f, upwind)
        dx = solve_linear(jacobian, -f, config, iteration)

        step = 1.0
        for halving in range(config.line_search_max_halvings + 1):
            trial, clamp = system.project(x + step * dx)
            f_trial = system.residual(trial, system.upwind(trial))
            norm_trial = float(np.linalg.norm(f_trial))
            if np.isfinite(norm_trial) and norm_trial < norm:
                break
            if halving < config.line_search_max_halvings:
                step *= config.line_search_shrink
        if step < 1.0:
            activations += 1
        if not np.isfinite(norm_trial):
            raise NonConvergenceError(f"Non-finite residual at Newton iterate {iteration}", dt=dt)
        x, f, norm, max_clamp = trial, f_trial, norm_trial, clamp
        logger.debug(f"Newton iterate {iteration}: |F| = {norm:.3e} (target {target:.3e})")

    liquid, gas = _phase_norms(f)
    p_l, p_g = system.unpack(x)
    p_max = system.pc_range[1] - system.pc_range[0]
    report = TimestepReport(
        step=prev.step + 1,
        time=prev.time + dt,
        dt=dt,
        substeps=[dt],
        iterations=iteration,
        residual_liquid=liquid,
        residual_gas=gas,
        line_search_activations=activations,
        clamped=max_clamp > CLAMP_FLAG_RTOL * p_max,
        max_clamp=max_clamp,
    )
    return p_l, p_g, report


def _merge(first: TimestepReport, second: TimestepReport) -> TimestepReport:
    return second.model_copy(
        update={
            "dt": first.dt + second.dt,
            "substeps": first.substeps + second.substeps,
            "iterations": first.iterations + second.iterations,
            "line_search_activations": first.line_search_activations
            + second.line_search_activations,
            "clamped": first.clamped or second.clamped,
            "max_clamp": max(first.max_clamp, second.max_clamp),
        }
    )


def _advance(
    prev: State,
    dt: float,
    context: SchemeContext,
    sources: SourceField,
    config: SolverConfig,
    depth: int,
) -> tuple[State, TimestepReport]:
    try:
        p_l, p_g, report = _newton(context, prev, dt, sources, config)
        state = make_state(context, p_l, p_g, step=prev.step + 1, time=prev.time + dt)
        return state, report
    except (NonConvergenceError, LinearSolveError, CapillaryRangeError, FloatingPointError) as e:
        if depth >= config.max_dt_halvings:
            diagnostics = {
                **getattr(e, "diagnostics", {}),
                "dt": dt,
                "depth": depth,
                "cause": type(e).__name__,
            }
            raise NonConvergenceError(
                f"Timestep failed after {depth} halvings (last dt={dt:.6g}): {e}",
                **diagnostics,
            ) from e
        logger.info(f"Halving timestep to {dt / 2:.6g} after: {e}")

    half = 0.5 * dt
    middle, first = _advance(prev, half, context, sources, config, depth + 1)
    middle = middle.model_copy(update={"step": prev.step})
    final, second = _advance(middle, half, context, sources, config, depth + 1)
    final = final.model_copy(update={"step": prev.step + 1})
    return final, _merge(first, second).model_copy(update={"step": prev.step + 1})


def solve_timestep(
    prev: State,
    dt: float,
    context: SchemeContext,
    sources: SourceField,
    config: Optional[SolverConfig] = None,
) -> tuple[State, TimestepReport]:
    """Advance one timestep, halving dt on failure down to the fallback depth.

    Raises:
        NonConvergenceError: all fallbacks failed (diagnostics attached)
    """
    config = config or SolverConfig()
    if dt <= 0.0:
        raise TimeGridError(f"Timestep must be positive, got {dt}")
    return _advance(prev, dt, context, sources, config, 0)


def get_step_count(t_final: float, dt: float) -> int:
    """Number of steps N with N dt = t_final.

    Raises:
        TimeGridError: t_final is not an integer multiple of dt
    """
    if dt <= 0.0 or t_final < 0.0:
        raise TimeGridError(f"Need dt > 0 and t_final >= 0, got dt={dt}, t_final={t_final}")
    n = round(t_final / dt)
    if abs(n * dt - t_final) > TIME_GRID_RTOL * max(t_final, dt):
        raise TimeGridError(
            f"t_final={t_final} is not a multiple of dt={dt}; "
            f"step {math.ceil(t_final / dt)} would be partial"
        )
    return int(n)


def run(
    initial: State,
    t_final: float,
    dt: float,
    context: SchemeContext,
    sources: SourceSpec,
    config: Optional[SolverConfig] = None,
    on_step: Optional[Callable[[State, TimestepReport], None]] = None,
) -> Trajectory:
    """Run N = t_final / dt uniform timesteps from the initial state.

    Each report carries the max-principle verdict and the per-phase energy
    increments of its step. ``on_step`` is called after every accepted step.

    Raises:
        TimeGridError: t_final not a multiple of dt
        NonConvergenceError: a step failed; ``step`` holds its index
    """
    config = config or SolverConfig()
    n_steps = get_step_count(t_final, dt)
    states = [initial]
    reports: list[TimestepReport] = []

    for n in range(1, n_steps + 1):
        t_mid = (n - 0.5) * dt
        step_sources = sources(t_mid) if callable(sources) else sources
        try:
            state, report = solve_timestep(states[-1], dt, context, step_sources, config)
        except SolverError as e:
            log_error(f"timestep {n}", e)
            diagnostics = getattr(e, "diagnostics", {})
            raise NonConvergenceError(str(e), step=n, **diagnostics) from e

        state = state.model_copy(update={"step": n, "time": n * dt})
        verdict = check_max_principle(state)
        energy_liquid, energy_gas = calculate_step_energy(state, context, dt)
        report = report.model_copy(
            update={
                "step": n,
                "time": n * dt,
                "max_principle_passed": verdict.passed,
                "s_min": verdict.s_min,
                "s_max": verdict.s_max,
                "energy_liquid": energy_liquid,
                "energy_gas": energy_gas,
            }
        )
        states.append(state)
        reports.append(report)
        log_step(
            n,
            time=n * dt,
            iterations=report.iterations,
            substeps=len(report.substeps),
            s_min=verdict.s_min,
            s_max=verdict.s_max,
        )
        if on_step is not None:
            on_step(state, report)

    return Trajectory(states=states, reports=reports)
