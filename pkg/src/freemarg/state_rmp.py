"""Free-compatibility of marginal families: the feasibility check, the
robustness cone program, witness extraction from the dual, free operations,
and the W-state uniqueness / activation computations.

The robustness of a family {sigma_X} with respect to a free set on target T
is log2 of the optimum of

    min tr(V)   s.t.   V >= 0,  tr_{S\\T}(V) in cone(free set),
                       sigma_X <= tr_{S\\X}(V)  for every X,

which is zero exactly when some global state with a free T-marginal has the
sigma_X as its marginals.  The program's dual multipliers {Y_X >= 0} witness
incompatibility: sup over the free-compatible set of sum_X tr(tau_X Y_X)
stays <= 1 while the value at sigma equals the optimum > 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import DEFAULT_TOLS
from .freesets import FreeSetSpec
from .herm import (
    DensityMatrix,
    HermitianOperator,
    LayoutError,
    SubsystemLayout,
    SubsystemSet,
    hermitize,
)
from .programs import attach_free_state_cone
from .solver import (
    ConicProgram,
    PartialTraceMap,
    SolveResult,
    SolverFailure,
    SolverSettings,
    Status,
    solve,
)
from .states import qubit_layout, w_marginal


class NoWitnessError(RuntimeError):
    """Witness extraction was called on a compatible instance."""


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginalFamily:
    """One density matrix per subsystem set; the sets may overlap."""

    layout: SubsystemLayout
    entries: tuple[tuple[SubsystemSet, DensityMatrix], ...]

    def __init__(self, layout: SubsystemLayout,
                 entries: Sequence[tuple[SubsystemSet | Sequence[str], DensityMatrix]]):
        normalized = []
        for sub, sigma in entries:
            if not isinstance(sub, SubsystemSet):
                sub = SubsystemSet(layout, sub)
            if sub.layout != layout:
                raise LayoutError("marginal subsystem refers to a different layout")
            if sigma.layout != layout.sublayout(sub.members):
                raise LayoutError(f"marginal on {sub.members} has the wrong layout")
            normalized.append((sub, sigma))
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "entries", tuple(normalized))

    def labels(self) -> list[str]:
        return [",".join(sub.members) for sub, _ in self.entries]


@dataclass(frozen=True)
class RmpInstance:
    marginals: MarginalFamily
    free: FreeSetSpec

    def __post_init__(self):
        if self.free.target.layout != self.marginals.layout:
            raise LayoutError("free set target must live on the family's global layout")

    @property
    def layout(self) -> SubsystemLayout:
        return self.marginals.layout

    @property
    def target(self) -> SubsystemSet:
        return self.free.target


# ---------------------------------------------------------------------------
# Shared program pieces
# ---------------------------------------------------------------------------


def _marginal_map(layout: SubsystemLayout, sub: SubsystemSet) -> PartialTraceMap | None:
    if tuple(sub.members) == layout.labels:
        return None  # identity
    return PartialTraceMap(layout, sub.members)


def _attach_free(prog: ConicProgram, var, inst_layout: SubsystemLayout, free: FreeSetSpec):
    attach_free_state_cone(prog, var, _marginal_map(inst_layout, free.target), free)


# ---------------------------------------------------------------------------
# Compatibility feasibility check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompatibilityResult:
    compatible: bool
    witness_state: DensityMatrix | None
    residual: float
    certificate: dict | None = None


def check_rfree_compatible(inst: RmpInstance, tol: float = DEFAULT_TOLS.compat,
                           settings: SolverSettings | None = None) -> CompatibilityResult:
    """Is there a global state with these marginals and a free T-marginal?

    Compatible results carry the found global state and the worst marginal
    deviation; Incompatible ones carry the solver's Farkas certificate.
    """
    layout = inst.layout
    d = layout.total_dim
    prog = ConicProgram()
    rho = prog.add_variable("rho", d)
    prog.add_scalar_equality("unit_trace", [(rho, np.eye(d))], 1.0)
    for sub, sigma in inst.marginals.entries:
        m = _marginal_map(layout, sub)
        prog.add_matrix_equality(f"marginal[{','.join(sub.members)}]",
                                 [(rho, m)] if m else [(rho, None)], sigma.entries)
    _attach_free(prog, rho, layout, inst.free)
    prog.set_objective([(rho, np.eye(d))], "min")  # constant on the feasible set

    res = solve(prog, settings)
    if res.status == Status.OPTIMAL:
        state = _project_state(layout, res.primal_blocks["rho"])
        dev = 0.0
        for sub, sigma in inst.marginals.entries:
            m = _marginal_map(layout, sub)
            red = m.apply(state.entries) if m else state.entries
            dev = max(dev, float(np.max(np.abs(red - sigma.entries))))
        if dev > tol:
            raise SolverFailure(f"feasible point violates marginals by {dev:.2e} > tol")
        return CompatibilityResult(True, state, dev)
    if res.status == Status.INFEASIBLE:
        return CompatibilityResult(False, None, np.inf, certificate=res.certificate)
    raise SolverFailure(f"compatibility check ended with status {res.status}")


def _project_state(layout: SubsystemLayout, m: np.ndarray) -> DensityMatrix:
    vals, vecs = np.linalg.eigh(hermitize(m))
    m = (vecs * np.clip(vals, 0, None)) @ vecs.conj().T
    return DensityMatrix.from_array(layout, m / np.trace(m).real)


# ---------------------------------------------------------------------------
# Robustness
# ---------------------------------------------------------------------------


@dataclass
class RobustnessResult:
    status: Status
    value_log2: float
    optimum: float            # tr(V*) = 2**value_log2
    optimizer: HermitianOperator | None
    solve_result: SolveResult
    relaxation: str | None = None
    diagnostics: str | None = None

    @property
    def marginal_duals(self) -> dict[str, np.ndarray]:
        return {name.split("dominate[")[1][:-1]: m
                for name, m in self.solve_result.dual_multipliers.items()
                if name.startswith("dominate[") and name.endswith("]")}


def robustness(inst: RmpInstance, settings: SolverSettings | None = None) -> RobustnessResult:
    layout = inst.layout
    d = layout.total_dim
    prog = ConicProgram()
    v = prog.add_variable("V", d)
    for sub, sigma in inst.marginals.entries:
        m = _marginal_map(layout, sub)
        prog.add_psd_inequality(f"dominate[{','.join(sub.members)}]",
                                [(v, m)], const=-sigma.entries)
    _attach_free(prog, v, layout, inst.free)
    prog.set_objective([(v, np.eye(d))], "min")

    res = solve(prog, settings)
    if res.status == Status.OPTIMAL:
        opt = res.primal_value
        value = max(0.0, math.log2(max(opt, 1e-300)))
        optimizer = HermitianOperator(layout, hermitize(res.primal_blocks["V"]))
        return RobustnessResult(res.status, value, opt, optimizer, res,
                                relaxation=inst.free.relaxation)
    if res.status == Status.INFEASIBLE:
        diag = ("the robustness program is infeasible, so the measure is unbounded: "
                "no scaled free extension dominates the family")
        if not inst.free.contains_full_rank_member():
            diag += (" (the free set has no full-rank member, e.g. a pure singleton, "
                     "so finiteness of the measure is not guaranteed)")
        return RobustnessResult(res.status, np.inf, np.inf, None, res,
                                relaxation=inst.free.relaxation, diagnostics=diag)
    raise SolverFailure(f"robustness solve ended with status {res.status}")


# ---------------------------------------------------------------------------
# Linear maximization over the compatible-and-free set
# ---------------------------------------------------------------------------


class CompatibleSetModel:
    """max over the free-compatible set of  sum_X tr(tau_X O_X).

    The feasible set is every family of marginals of a global state whose
    target reduction is free; the compiled program is reused across
    objectives, which matters for sampling experiments.
    """

    def __init__(self, layout: SubsystemLayout, free: FreeSetSpec,
                 settings: SolverSettings | None = None):
        self.layout = layout
        self.free = free
        self.settings = settings
        d = layout.total_dim
        self.prog = ConicProgram()
        self.var = self.prog.add_variable("rho", d, layout=layout)
        self.prog.add_scalar_equality("unit_trace", [(self.var, np.eye(d))], 1.0)
        _attach_free(self.prog, self.var, layout, free)
        self.prog.set_objective([(self.var, np.eye(d))], "max")
        self.prog.compile()  # objective swaps then share the compiled data

    def maximize(self, objectives: Sequence[tuple[SubsystemSet | Sequence[str], np.ndarray]]
                 ) -> SolveResult:
        d = self.layout.total_dim
        coeff = np.zeros((d, d), dtype=complex)
        for sub, obs in objectives:
            if not isinstance(sub, SubsystemSet):
                sub = SubsystemSet(self.layout, sub)
            obs = obs.entries if isinstance(obs, HermitianOperator) else np.asarray(obs)
            m = _marginal_map(self.layout, sub)
            coeff += m.adjoint(obs) if m else obs
        prog = self.prog.with_objective([(self.var, coeff)], "max")
        res = solve(prog, self.settings)
        if res.status != Status.OPTIMAL:
            raise SolverFailure(f"set maximization ended with status {res.status}")
        return res


def linear_max_over_set(objectives: Sequence[tuple[SubsystemSet | Sequence[str], np.ndarray]],
                        inst: RmpInstance | CompatibleSetModel,
                        settings: SolverSettings | None = None) -> float:
    """sup of sum_X tr(tau_X O_X) over the free-compatible marginal families."""
    model = inst if isinstance(inst, CompatibleSetModel) else \
        CompatibleSetModel(inst.layout, inst.free, settings)
    return model.maximize(objectives).primal_value


# ---------------------------------------------------------------------------
# Witness extraction
# ---------------------------------------------------------------------------


@dataclass
class Witness:
    """PSD blocks {W_X} separating the family from the free-compatible set:
    value_at_sigma > free_sup certifies incompatibility."""

    blocks: tuple[tuple[SubsystemSet, HermitianOperator], ...]
    free_sup: float
    value_at_sigma: float
    metadata: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.value_at_sigma - self.free_sup

    def value_at(self, family: MarginalFamily) -> float:
        by_label = {tuple(sub.members): w for sub, w in self.blocks}
        total = 0.0
        for sub, sigma in family.entries:
            w = by_label[tuple(sub.members)]
            total += float(np.trace(w.entries @ sigma.entries).real)
        return total


def extract_witness(inst: RmpInstance, robustness_result: RobustnessResult | None = None,
                    settings: SolverSettings | None = None,
                    tol: float = DEFAULT_TOLS.compat) -> Witness:
    """Dual optimizer of the robustness program, reported with its
    independently re-solved free-set supremum."""
    res = robustness_result if robustness_result is not None else robustness(inst, settings)
    if res.status != Status.OPTIMAL:
        raise SolverFailure(f"robustness status {res.status}; witness needs Optimal")
    if res.value_log2 <= tol:
        raise NoWitnessError("no witness exists: the family is free-compatible "
                             "(robustness is zero)")
    duals = res.marginal_duals
    blocks = []
    value = 0.0
    for sub, sigma in inst.marginals.entries:
        y = hermitize(duals[",".join(sub.members)])
        blocks.append((sub, HermitianOperator(sub.sublayout(), y)))
        value += float(np.trace(y @ sigma.entries).real)
    sup = linear_max_over_set([(sub, w.entries) for sub, w in blocks], inst, settings)
    w = Witness(tuple(blocks), sup, value,
                metadata={"dual_optimum_unique": False,
                          "relaxation": inst.free.relaxation})
    if w.gap <= 0:
        raise SolverFailure("extracted witness has no strict gap; solver accuracy insufficient")
    return w


# ---------------------------------------------------------------------------
# Free operations
# ---------------------------------------------------------------------------


def apply_free_operation(family: MarginalFamily, channels) -> MarginalFamily:
    """Entrywise application of one channel per marginal.

    The caller asserts the channels arise from one global free operation;
    this library constructs only the product-unitary / product-channel
    subclass (see `product_channels_on_family`), which preserves the free
    set for every kind closed under local operations on the target.
    """
    by_members = {}
    for sub, chan in channels:
        members = tuple(sub.members) if isinstance(sub, SubsystemSet) else tuple(sub)
        by_members[members] = chan
    out = []
    for sub, sigma in family.entries:
        chan = by_members[tuple(sub.members)]
        if chan.in_layout.dims != sigma.layout.dims:
            raise LayoutError(f"channel input does not match marginal on {sub.members}")
        evolved = chan.apply(sigma.entries)
        out.append((sub, DensityMatrix.from_array(sigma.layout, evolved)))
    return MarginalFamily(family.layout, out)


def product_channels_on_family(family: MarginalFamily, site_channels: dict):
    """Marginal channels of a global product channel (x)_l E_l, keyed by the
    family's subsystem sets.  With unitary site channels this is a free
    operation in both directions; with general site channels it is free
    whenever the free set is closed under local channels on the target."""
    from .channel_rmp import ChannelSpec, tensor_channels

    out = []
    for sub, _ in family.entries:
        chans = [site_channels[l] for l in sub.members]
        total = chans[0]
        for c in chans[1:]:
            total = tensor_channels(total, c)
        # align the channel layouts with the marginal's layout
        sub_layout = family.layout.sublayout(sub.members)
        total = ChannelSpec(total.in_layout, sub_layout,
                            HermitianOperator(sub_layout.concat(total.in_layout),
                                              total.choi.entries))
        out.append((sub, total))
    return out


# ---------------------------------------------------------------------------
# W-state uniqueness and the activation criterion
# ---------------------------------------------------------------------------


def _fidelity_program(objective_state: np.ndarray, family: MarginalFamily,
                      sense: str, settings: SolverSettings | None) -> float:
    layout = family.layout
    d = layout.total_dim
    prog = ConicProgram()
    rho = prog.add_variable("rho", d)
    prog.add_scalar_equality("unit_trace", [(rho, np.eye(d))], 1.0)
    for sub, sigma in family.entries:
        m = _marginal_map(layout, sub)
        prog.add_matrix_equality(f"marginal[{','.join(sub.members)}]",
                                 [(rho, m)] if m else [(rho, None)], sigma.entries)
    prog.set_objective([(rho, objective_state)], sense)
    if settings is None:
        # pinned-marginal feasible sets can be rank-deficient (down to a
        # single point), where the last interior-point digits are
        # unreachable; 1e-7 residuals are ample for the 1e-6 answer tolerance
        settings = SolverSettings(gap_tol=1e-7, feas_tol=1e-7)
    res = solve(prog, settings)
    if res.status != Status.OPTIMAL:
        raise SolverFailure(f"fidelity extremization ended with status {res.status}")
    return res.primal_value


def verify_w_uniqueness(settings: SolverSettings | None = None,
                        family: MarginalFamily | None = None) -> dict:
    """Extremize overlap with the W state over all global states compatible
    with the two W marginals; max = min = 1 certifies uniqueness."""
    from .states import w_state

    layout = qubit_layout("ABC")
    if family is None:
        wm_ab = w_marginal(layout.sublayout(("A", "B")))
        wm_bc = w_marginal(layout.sublayout(("B", "C")))
        family = MarginalFamily(layout, [(("A", "B"), wm_ab), (("B", "C"), wm_bc)])
    proj = w_state(layout).entries
    return {
        "max_fid": _fidelity_program(proj, family, "max", settings),
        "min_fid": _fidelity_program(proj, family, "min", settings),
    }


def activation_criterion(rho: DensityMatrix, search: str = "grid",
                         samples: int = 200, seed: int = 0) -> float:
    """max over sampled local unitaries U of <psi|(U (x) I) rho (U (x) I)^dag|psi>
    with |psi> = (1/sqrt(d)) sum_i |i+1 mod d>|i>; a value above 1/d flags
    activation of multi-copy nonlocality.  The search is a heuristic lower
    bound; the identity is always included."""
    if len(rho.layout.dims) != 2 or rho.layout.dims[0] != rho.layout.dims[1]:
        raise LayoutError("activation criterion needs a bipartite state of equal dims")
    d = rho.layout.dims[0]
    psi = np.zeros(d * d, dtype=complex)
    for i in range(d):
        psi[((i + 1) % d) * d + i] = 1 / np.sqrt(d)

    def value(u: np.ndarray) -> float:
        big = np.kron(u, np.eye(d))
        return float(np.real(psi.conj() @ big @ rho.entries @ big.conj().T @ psi))

    best = value(np.eye(d))
    if search not in ("grid", "iterative"):
        raise ValueError("search must be 'grid' or 'iterative'")
    from .discrimination import haar_from_generator

    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    best_u = np.eye(d, dtype=complex)
    for _ in range(samples):
        u = haar_from_generator(d, gen)
        v = value(u)
        if v > best:
            best, best_u = v, u
    if search == "iterative":
        eps = 0.3
        for _ in range(4 * samples):
            h = gen.normal(size=(d, d)) + 1j * gen.normal(size=(d, d))
            h = (h + h.conj().T) / 2
            vals, vecs = np.linalg.eigh(eps * h)
            u = best_u @ ((vecs * np.exp(1j * vals)) @ vecs.conj().T)
            v = value(u)
            if v > best:
                best, best_u = v, u
            else:
                eps *= 0.97
    return best
