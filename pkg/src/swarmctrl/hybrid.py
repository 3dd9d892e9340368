"""Coupled N-state advection-diffusion-reaction system: splitting solver,
combined steering, spatial-gain stabilization, and spectral certificates.

The splitting is symmetric (half reaction, full transport, half
reaction).  Reaction half-steps are exact per-cell matrix exponentials of
an essentially non-negative matrix, so they preserve positivity and move
mass between states exactly as the rate ODE does; the transport substep
conserves each state's mass.  Total mass is therefore conserved exactly
and the per-state mass vector follows the constant-rate ODE without
splitting error.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import control as ctl
from .ctmc import (
    PiecewiseConstantControl,
    TransitionGraph,
    generator,
    is_strongly_connected,
    monotone_certificate,
    synthesize_stationary_rates,
    transfer_control,
)
from .errors import (
    ConfigurationError,
    GraphError,
    InputError,
    SynthesisError,
    TargetError,
)
from .grid import (
    FaceField,
    RectDomain,
    ScalarField,
    divergence_form_operator,
    l2_norm,
    mass,
)
from .pde import (
    StepperConfig,
    assemble_advection_diffusion,
    make_stepper,
)

__all__ = [
    "StackedDensity",
    "HybridTarget",
    "SpatialGainSet",
    "SplitStepper",
    "split_step",
    "mass_trajectory_consistency",
    "MassConsistencyReport",
    "stabilizing_gains",
    "zero_mass_stabilizing_gains",
    "stabilizing_velocities",
    "coupled_spectrum",
    "CoupledSpectrumReport",
    "hybrid_steering_plan",
    "execute_hybrid_plan",
    "HybridPlan",
    "HybridExecution",
]


@dataclasses.dataclass(eq=False)
class StackedDensity:
    """One scalar field per discrete state, sharing a grid."""

    fields: tuple[ScalarField, ...]

    def __post_init__(self):
        if not self.fields:
            raise InputError("need at least one state")
        d = self.fields[0].domain
        if any(f.domain != d for f in self.fields):
            raise InputError("stacked fields live on different grids")
        self.fields = tuple(self.fields)

    @property
    def domain(self) -> RectDomain:
        return self.fields[0].domain

    @property
    def n_states(self) -> int:
        return len(self.fields)

    def mass_vector(self) -> np.ndarray:
        return np.array([mass(f) for f in self.fields])

    def total_mass(self) -> float:
        return float(np.sum(self.mass_vector()))

    def as_array(self) -> np.ndarray:
        """(n_states, n_cells) value matrix."""
        return np.stack([f.flat for f in self.fields])

    @classmethod
    def from_array(cls, domain: RectDomain, arr: np.ndarray) -> "StackedDensity":
        return cls(tuple(ScalarField(domain, row) for row in arr))

    def copy(self) -> "StackedDensity":
        return StackedDensity(tuple(f.copy() for f in self.fields))


@dataclasses.dataclass(eq=False)
class HybridTarget:
    """Per-state target fields; states with zero mass form the off-support
    set that stabilization must drain."""

    fields: tuple[ScalarField, ...]
    support: tuple[int, ...]          # 1-based states with positive mass
    lower_ratio: float                # c with f_i >= c * mass(f_i) cellwise

    @classmethod
    def create(cls, fields: Sequence[ScalarField], lower_ratio: float | None = None) -> "HybridTarget":
        fields = tuple(fields)
        if not fields:
            raise TargetError("need at least one state")
        masses = np.array([mass(f) for f in fields])
        if abs(float(np.sum(masses)) - 1.0) > 1e-9:
            raise TargetError(f"target masses must sum to 1, got {np.sum(masses)!r}")
        if any(np.min(f.values) < 0 for f in fields):
            raise TargetError("target fields must be non-negative")
        support = tuple(i + 1 for i, m in enumerate(masses) if m > 0)
        if not support:
            raise TargetError("target has no supported state")
        ratios = []
        for i in support:
            f = fields[i - 1]
            m = masses[i - 1]
            if np.min(f.values) <= 0:
                raise TargetError(
                    f"supported state {i} must be positive cellwise, "
                    f"min = {np.min(f.values):.3e}"
                )
            ratios.append(float(np.min(f.values)) / m)
        c = min(ratios)
        if lower_ratio is not None:
            if lower_ratio <= 0 or c < lower_ratio:
                raise TargetError(
                    f"lower-bound ratio {lower_ratio} not satisfied (actual {c})"
                )
            c = lower_ratio
        return cls(fields=fields, support=support, lower_ratio=c)

    @property
    def domain(self) -> RectDomain:
        return self.fields[0].domain

    @property
    def n_states(self) -> int:
        return len(self.fields)

    def mass_vector(self) -> np.ndarray:
        return np.array([mass(f) for f in self.fields])

    def full_support(self) -> bool:
        return len(self.support) == self.n_states

    def weight_fields(self, off_support_constant: float = 1.0) -> list[ScalarField]:
        """a_i = 1/f_i on supported states, a constant elsewhere."""
        out = []
        for i, f in enumerate(self.fields, start=1):
            if i in self.support:
                out.append(ScalarField(self.domain, 1.0 / f.values))
            else:
                out.append(ScalarField.constant(self.domain, off_support_constant))
        return out


@dataclasses.dataclass(eq=False)
class SpatialGainSet:
    """Cellwise non-negative reaction gain per edge."""

    graph: TransitionGraph
    domain: RectDomain
    gains: tuple[np.ndarray, ...]  # one grid-shaped array per edge

    def __post_init__(self):
        if len(self.gains) != self.graph.n_edges:
            raise InputError("one gain field per edge required")
        arrs = []
        for g in self.gains:
            g = np.asarray(g, dtype=float)
            if g.shape == ():
                g = np.full(self.domain.shape, float(g))
            if g.shape != self.domain.shape:
                raise InputError(f"gain shape {g.shape} does not match grid")
            if np.any(g < 0) or not np.all(np.isfinite(g)):
                raise InputError("gains must be finite and non-negative")
            arrs.append(g)
        self.gains = tuple(arrs)

    @classmethod
    def constant(
        cls, graph: TransitionGraph, domain: RectDomain, values: Sequence[float]
    ) -> "SpatialGainSet":
        return cls(graph, domain, tuple(np.full(domain.shape, float(v)) for v in values))

    def is_spatially_constant(self) -> bool:
        return all(np.ptp(g) == 0.0 for g in self.gains)

    def max_gain(self) -> float:
        return max((float(np.max(g)) for g in self.gains), default=0.0)

    def max_total_exit_rate(self) -> float:
        """Largest over states and cells of the summed outgoing gains."""
        n = self.graph.n_vertices
        total = np.zeros((n,) + self.domain.shape)
        for g, (i, _) in zip(self.gains, self.graph.edges):
            total[i - 1] += g
        return float(np.max(total)) if total.size else 0.0


def _reaction_propagators(
    graph: TransitionGraph,
    gains: SpatialGainSet | None,
    dt_half: float,
    n_states: int,
    n_cells: int,
) -> np.ndarray | None:
    """exp(dt_half * sum_e K_e(x) Q_e) per cell: (cells, N, N) or (N, N)."""
    if gains is None or dt_half == 0.0:
        return None
    if gains.graph.n_vertices != n_states:
        raise InputError("gain graph does not match the number of states")
    if gains.is_spatially_constant():
        rates = np.array([float(g.reshape(-1)[0]) for g in gains.gains])
        q = generator(gains.graph, rates)
        return scipy.linalg.expm(dt_half * q)
    mats = np.zeros((n_cells, n_states, n_states))
    for g, (i, j) in zip(gains.gains, gains.graph.edges):
        flat = g.reshape(-1)
        mats[:, i - 1, i - 1] -= flat
        mats[:, j - 1, i - 1] += flat
    out = np.empty_like(mats)
    for c in range(n_cells):
        out[c] = scipy.linalg.expm(dt_half * mats[c])
    return out


class SplitStepper:
    """Prefactorized symmetric splitting step for the coupled system.

    Reuse across steps requires fixed velocities, gains, and dt.
    """

    def __init__(
        self,
        domain: RectDomain,
        velocities: Sequence[FaceField | None],
        diffusion: Sequence[float],
        gains: SpatialGainSet | None,
        dt: float,
        cfg: StepperConfig | None = None,
        graph: TransitionGraph | None = None,
    ):
        cfg = cfg or StepperConfig()
        if dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {dt}")
        self.domain = domain
        self.dt = dt
        self.n_states = len(diffusion)
        if len(velocities) != self.n_states:
            raise InputError("one velocity field per state required")
        self._transport = []
        for v, d in zip(velocities, diffusion):
            matrix = assemble_advection_diffusion(domain, v, float(d), cfg.advection_flux)
            self._transport.append(make_stepper(matrix, dt, cfg.scheme))
        self._graph = gains.graph if gains is not None else graph
        self._reaction = _reaction_propagators(
            self._graph, gains, 0.5 * dt, self.n_states, domain.cell_count
        ) if gains is not None else None

    def _react(self, arr: np.ndarray) -> np.ndarray:
        if self._reaction is None:
            return arr
        if self._reaction.ndim == 2:
            return self._reaction @ arr
        # per-cell propagator: (cells, N, N) x (N, cells)
        return np.einsum("cij,jc->ic", self._reaction, arr)

    def step(self, state: StackedDensity) -> StackedDensity:
        arr = state.as_array()
        arr = self._react(arr)
        arr = np.stack([self._transport[k](arr[k]) for k in range(self.n_states)])
        arr = self._react(arr)
        return StackedDensity.from_array(self.domain, arr)


def split_step(
    state: StackedDensity,
    velocities: Sequence[FaceField | None],
    diffusion: Sequence[float],
    gains: SpatialGainSet | None,
    dt: float,
    cfg: StepperConfig | None = None,
) -> StackedDensity:
    """One symmetric splitting step; conserves total mass and positivity."""
    stepper = SplitStepper(state.domain, velocities, diffusion, gains, dt, cfg)
    return stepper.step(state)


@dataclasses.dataclass
class MassConsistencyReport:
    deviations: np.ndarray
    max_deviation: float


def mass_trajectory_consistency(
    times: Sequence[float],
    trajectory: Sequence,
    graph: TransitionGraph,
    rates: Sequence[float],
) -> MassConsistencyReport:
    """Compare per-state masses with the constant-rate ODE solution.

    ``trajectory`` holds either stacked densities or mass vectors.  The
    reference is expm(t * generator) applied to the initial mass vector;
    the report carries the infinity-norm deviation per sample.
    """
    times = np.asarray(times, dtype=float)
    if trajectory and isinstance(trajectory[0], StackedDensity):
        trajectory = [s.mass_vector() for s in trajectory]
    masses = np.asarray(trajectory, dtype=float)
    if masses.shape[0] != times.size:
        raise InputError("one mass vector per sample time required")
    q = generator(graph, rates)
    m0 = masses[0]
    devs = np.empty(times.size)
    for k, t in enumerate(times):
        ref = scipy.linalg.expm((t - times[0]) * q) @ m0
        devs[k] = float(np.max(np.abs(masses[k] - ref)))
    return MassConsistencyReport(deviations=devs, max_deviation=float(np.max(devs)))


def stabilizing_velocities(target: HybridTarget, diffusion: Sequence[float]) -> list[FaceField | None]:
    """Per-state transport law D_k grad(f_k)/f_k; zero off the support."""
    out: list[FaceField | None] = []
    for i, f in enumerate(target.fields, start=1):
        if i in target.support:
            td = ctl.TargetDensity.create(ScalarField(target.domain, f.values / mass(f)))
            out.append(ctl.stabilizing_velocity(td, float(diffusion[i - 1])))
        else:
            out.append(None)
    return out


def stabilizing_gains(
    graph: TransitionGraph,
    target: HybridTarget,
    rates: Sequence[float],
) -> SpatialGainSet:
    """Gains K_e(x) = q_e * m_S(e) / f_S(e)(x) fixing a full-support target.

    The per-edge equilibrium fluxes q_e * m_S(e) form a circulation
    because the rates are stationary for the mass vector, so the reaction
    term vanishes at the stacked target; combined with the per-state
    stabilizing velocities the target is an exact fixed point of the
    splitting flow.
    """
    if not target.full_support():
        raise SynthesisError(
            "target has zero-mass states; use zero_mass_stabilizing_gains"
        )
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (graph.n_edges,):
        raise InputError(f"expected {graph.n_edges} rates")
    masses = target.mass_vector()
    residual = float(np.max(np.abs(generator(graph, rates) @ masses)))
    if residual > 1e-9:
        raise SynthesisError(
            f"rates are not stationary for the target masses (residual {residual:.3e})",
            residual=residual,
        )
    gains = []
    for q_e, (i, _) in zip(rates, graph.edges):
        gains.append(q_e * masses[i - 1] / target.fields[i - 1].values)
    return SpatialGainSet(graph, target.domain, tuple(gains))


def zero_mass_stabilizing_gains(
    graph: TransitionGraph,
    target: HybridTarget,
    off_support_constant: float = 1.0,
    drain_rate: float = 1.0,
) -> SpatialGainSet:
    """Gains for a target supported on a strict subset of the states.

    Support-internal edges carry the circulation gains of the restricted
    problem.  Edges leaving the support get zero gain: mass may not flow
    from the support into states that must empty, which is exactly the
    block-triangular structure of the induced mass-flow matrix.  All
    other edges get the constant ``drain_rate`` times the off-support
    weight, which drives the unsupported states to zero exponentially.
    """
    if target.full_support():
        sub_rates = synthesize_stationary_rates(graph, target.mass_vector())
        return stabilizing_gains(graph, target, sub_rates)
    support = set(target.support)
    sub_vertices = sorted(support)
    relabel = {v: k + 1 for k, v in enumerate(sub_vertices)}
    sub_edges = [
        (relabel[i], relabel[j]) for (i, j) in graph.edges if i in support and j in support
    ]
    if len(sub_vertices) < 2 or not sub_edges:
        raise SynthesisError("support subgraph has no edges; cannot stabilize")
    subgraph = TransitionGraph(len(sub_vertices), tuple(sub_edges))
    if not is_strongly_connected(subgraph):
        raise SynthesisError("support subgraph is not strongly connected")
    masses = target.mass_vector()
    sub_mass = np.array([masses[v - 1] for v in sub_vertices])
    sub_rates = synthesize_stationary_rates(subgraph, sub_mass / np.sum(sub_mass))

    sub_index = {e: k for k, e in enumerate(subgraph.edges)}
    gains = []
    for i, j in graph.edges:
        if i in support and j in support:
            q_e = sub_rates[sub_index[(relabel[i], relabel[j])]]
            gains.append(q_e * masses[i - 1] / target.fields[i - 1].values)
        elif i in support:
            gains.append(np.zeros(target.domain.shape))
        else:
            gains.append(np.full(target.domain.shape, drain_rate * off_support_constant))
    return SpatialGainSet(graph, target.domain, tuple(gains))


@dataclasses.dataclass(eq=False)
class CoupledSpectrumReport:
    eigenvalues: np.ndarray
    max_real_part: float
    gap: float
    zero_simple: bool
    zero_vector: np.ndarray  # (n_states, n_cells), unit total mass when defined


def coupled_spectrum(
    weights,
    diffusion: Sequence[float],
    gains: SpatialGainSet | None,
    graph: TransitionGraph | None = None,
    size_cap: int = 8192,
) -> CoupledSpectrumReport:
    """Dense eigenvalue report for the assembled coupled generator.

    ``weights`` is either a :class:`HybridTarget` or the per-state weight
    fields a_i directly.  Blocks: per-state D_i * div(f_i grad(./f_i))
    with f_i = 1/a_i plus the cellwise reaction coupling.  All real parts
    are non-positive; for a full-support stationary configuration the
    zero eigenvector is the stacked target.
    """
    if isinstance(weights, HybridTarget):
        weights = weights.weight_fields()
    weights = list(weights)
    n_states = len(weights)
    domain = weights[0].domain
    n_cells = domain.cell_count
    size = n_states * n_cells
    if size > size_cap:
        raise ConfigurationError(f"generator size {size} exceeds cap {size_cap}")
    blocks = [[None] * n_states for _ in range(n_states)]
    for k, a in enumerate(weights):
        f = ScalarField(domain, 1.0 / a.values)
        op = divergence_form_operator(a, f)
        blocks[k][k] = float(diffusion[k]) * op.matrix
    if gains is not None:
        for g, (i, j) in zip(gains.gains, gains.graph.edges):
            d = sp.diags(g.reshape(-1))
            blocks[i - 1][i - 1] = blocks[i - 1][i - 1] - d
            prev = blocks[j - 1][i - 1]
            blocks[j - 1][i - 1] = d if prev is None else prev + d
    dense = sp.bmat(blocks, format="csr").toarray()
    vals, vecs = scipy.linalg.eig(dense)
    order = np.argsort(vals.real)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    max_real = float(vals[0].real)
    gap = float(-vals[1].real) if vals.size > 1 else 0.0
    zero_simple = vals.size > 1 and abs(vals[0].real) < 0.5 * max(gap, 1e-300)
    vec = vecs[:, 0].real.copy()
    total = float(np.sum(vec)) * domain.cell_volume
    if abs(total) > 1e-12:
        vec /= total
    zero_vector = vec.reshape(n_states, n_cells)
    return CoupledSpectrumReport(
        eigenvalues=vals,
        max_real_part=max_real,
        gap=gap,
        zero_simple=zero_simple,
        zero_vector=zero_vector,
    )


# ---------------------------------------------------------------------------
# steering


@dataclasses.dataclass(eq=False)
class HybridPlan:
    """Two-stage transfer: rate control moves per-state masses, then
    decoupled velocity steering shapes each state."""

    graph: TransitionGraph
    target: HybridTarget
    t_final: float
    mass_control: PiecewiseConstantControl
    shaping_duration: float
    tolerance: float
    diffusion: tuple[float, ...]


@dataclasses.dataclass(eq=False)
class HybridExecution:
    plan: HybridPlan
    switch_state: StackedDensity
    final_state: StackedDensity
    per_state_error_l2: np.ndarray
    max_velocity: float
    mass_trace: list[tuple[float, np.ndarray]]


def hybrid_steering_plan(
    graph: TransitionGraph,
    initial: StackedDensity,
    target: HybridTarget,
    t_final: float,
    tolerance: float,
    diffusion: Sequence[float] | None = None,
) -> HybridPlan:
    """Plan: zero velocities with rate transfer on [0, t_f/2], then zero
    rates with per-state steering on (t_f/2, t_f]."""
    if t_final <= 0:
        raise InputError(f"final time must be positive, got {t_final}")
    if not is_strongly_connected(graph):
        raise GraphError(
            "hybrid steering requires a strongly connected graph",
            certificate=monotone_certificate(graph),
        )
    if graph.n_vertices != initial.n_states or graph.n_vertices != target.n_states:
        raise InputError("graph size does not match the number of states")
    if not target.full_support():
        raise InputError("steering target must give every state positive mass")
    if abs(initial.total_mass() - 1.0) > 1e-9:
        raise InputError(f"initial total mass must be 1, got {initial.total_mass()!r}")
    diffusion = tuple(float(d) for d in (diffusion or [1.0] * graph.n_vertices))
    mass_control = transfer_control(
        graph, initial.mass_vector(), target.mass_vector(), 0.5 * t_final
    )
    return HybridPlan(
        graph=graph,
        target=target,
        t_final=t_final,
        mass_control=mass_control,
        shaping_duration=0.5 * t_final,
        tolerance=tolerance,
        diffusion=diffusion,
    )


def execute_hybrid_plan(
    plan: HybridPlan,
    initial: StackedDensity,
    cfg: StepperConfig | None = None,
) -> HybridExecution:
    cfg = cfg or StepperConfig()
    domain = initial.domain
    graph = plan.graph
    n_states = initial.n_states
    zero_velocities: list[FaceField | None] = [None] * n_states
    state = initial.copy()
    mass_trace = [(0.0, state.mass_vector())]

    # stage 1: rate transfer, velocities zero; splitting intervals aligned
    # to the control breakpoints so the mass vector tracks the rate ODE
    t = 0.0
    ctrl = plan.mass_control
    for k in range(ctrl.n_intervals):
        seg = float(ctrl.breakpoints[k + 1] - ctrl.breakpoints[k])
        gains = SpatialGainSet.constant(graph, domain, ctrl.rates[k])
        n_steps = max(1, int(math.ceil(seg / cfg.dt)))
        stepper = SplitStepper(
            domain, zero_velocities, plan.diffusion, gains, seg / n_steps, cfg
        )
        for _ in range(n_steps):
            state = stepper.step(state)
        t += seg
        mass_trace.append((t, state.mass_vector()))
    if ctrl.total_duration < plan.shaping_duration:
        # idle remainder of stage 1: pure diffusion
        seg = plan.shaping_duration - ctrl.total_duration
        n_steps = max(1, int(math.ceil(seg / cfg.dt)))
        stepper = SplitStepper(
            domain, zero_velocities, plan.diffusion, None, seg / n_steps, cfg,
            graph=graph,
        )
        for _ in range(n_steps):
            state = stepper.step(state)
        t += seg
        mass_trace.append((t, state.mass_vector()))
    switch_state = state.copy()

    # stage 2: zero rates, per-state steering on normalized fields
    target_masses = plan.target.mass_vector()
    final_fields = []
    max_velocity = 0.0
    per_state_tol = plan.tolerance / math.sqrt(n_states)
    for k in range(n_states):
        m_k = target_masses[k]
        norm_target = ctl.TargetDensity.create(
            ScalarField(domain, plan.target.fields[k].values / m_k)
        )
        y_k = state.fields[k].values / m_k
        y_k = np.maximum(y_k, 0.0)  # clip splitting roundoff
        y_field = ScalarField(domain, y_k / (np.sum(y_k) * domain.cell_volume))
        sub_plan = ctl.synthesize_steering_plan(
            y_field, norm_target, plan.shaping_duration, per_state_tol
        )
        run = ctl.execute_plan(sub_plan, y_field, cfg)
        max_velocity = max(max_velocity, run.max_velocity)
        final_fields.append(ScalarField(domain, run.final_state.values * m_k))
    final = StackedDensity(tuple(final_fields))
    mass_trace.append((plan.t_final, final.mass_vector()))
    errors = np.array(
        [
            l2_norm(ScalarField(domain, f.values - g.values))
            for f, g in zip(final.fields, plan.target.fields)
        ]
    )
    return HybridExecution(
        plan=plan,
        switch_state=switch_state,
        final_state=final,
        per_state_error_l2=errors,
        max_velocity=max_velocity,
        mass_trace=mass_trace,
    )
