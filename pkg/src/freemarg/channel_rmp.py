"""Channel-family compatibility via Choi matrices: marginal channels, the
dynamical robustness cone program, witness decomposition into state/observable
pairs, and the ensemble state-discrimination task.

Conventions.  A channel from X' to X is stored as its Choi *state*
J = (E (x) id)(|Phi+><Phi+|) on the layout  out (x) in :  J >= 0 iff E is
completely positive, and tr_out(J) = I_in/d_in iff E is trace preserving.
Input and output factors must carry distinct labels (e.g. "A" out, "A'" in).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOLS
from .freesets import FreeChannelSetSpec
from .herm import (
    DensityMatrix,
    HermitianOperator,
    LayoutError,
    SubsystemLayout,
    SubsystemSet,
    ValidationError,
    hermitize,
    ptrace_array,
)
from .programs import attach_free_state_cone
from .solver import (
    ComposeMap,
    ConicProgram,
    PartialTraceMap,
    PermuteMap,
    SolveResult,
    SolverFailure,
    SolverSettings,
    Status,
    TensorIdentityMap,
    TraceTimesMap,
    hermitian_basis,
    solve,
)


class NoWitnessError(RuntimeError):
    """Witness extraction was called on a compatible instance."""


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelSpec:
    """A channel X' -> X given by its Choi state on out (x) in."""

    in_layout: SubsystemLayout
    out_layout: SubsystemLayout
    choi: HermitianOperator

    def __post_init__(self):
        if set(self.in_layout.labels) & set(self.out_layout.labels):
            raise LayoutError("input and output layouts must use distinct labels")
        expected = self.out_layout.concat(self.in_layout)
        if self.choi.layout != expected:
            raise LayoutError("Choi layout must be out (x) in")
        tols = DEFAULT_TOLS
        if self.choi.min_eig() < -tols.psd:
            raise ValidationError(f"Choi not PSD: min eig {self.choi.min_eig():.2e}")
        marg = ptrace_array(self.choi.entries, self.choi.layout.dims,
                            self.choi.layout.axes_of(self.in_layout.labels))
        target = np.eye(self.d_in) / self.d_in
        if np.max(np.abs(marg - target)) > tols.psd:
            raise ValidationError("Choi input marginal is not I/d: channel not trace-preserving")

    @property
    def d_in(self) -> int:
        return self.in_layout.total_dim

    @property
    def d_out(self) -> int:
        return self.out_layout.total_dim

    # -- constructors

    @staticmethod
    def from_kraus(kraus: list[np.ndarray], in_layout: SubsystemLayout,
                   out_layout: SubsystemLayout) -> "ChannelSpec":
        d_in, d_out = in_layout.total_dim, out_layout.total_dim
        j = np.zeros((d_out * d_in, d_out * d_in), dtype=complex)
        for k in kraus:
            k = np.asarray(k, dtype=complex)
            v = k.reshape(-1) / np.sqrt(d_in)  # (K (x) I)|Phi+> in (out, in) order
            j += np.outer(v, v.conj())
        return ChannelSpec(in_layout, out_layout, HermitianOperator(out_layout.concat(in_layout), j))

    @staticmethod
    def from_unitary(u: np.ndarray, in_layout: SubsystemLayout,
                     out_layout: SubsystemLayout | None = None) -> "ChannelSpec":
        out_layout = out_layout or _primed_twin(in_layout)
        return ChannelSpec.from_kraus([np.asarray(u, dtype=complex)], in_layout, out_layout)

    @staticmethod
    def identity(in_layout: SubsystemLayout, out_layout: SubsystemLayout | None = None) -> "ChannelSpec":
        out_layout = out_layout or _primed_twin(in_layout)
        return ChannelSpec.from_kraus([np.eye(in_layout.total_dim)], in_layout, out_layout)

    @staticmethod
    def depolarizing(in_layout: SubsystemLayout, out_layout: SubsystemLayout | None = None,
                     p: float = 1.0) -> "ChannelSpec":
        """E(rho) = (1-p) rho + p tr(rho) I/d."""
        out_layout = out_layout or _primed_twin(in_layout)
        d = in_layout.total_dim
        ident = ChannelSpec.identity(in_layout, out_layout).choi.entries
        mixed = np.kron(np.eye(d) / d, np.eye(d) / d)
        j = (1 - p) * ident + p * mixed
        return ChannelSpec(in_layout, out_layout, HermitianOperator(out_layout.concat(in_layout), j))

    @staticmethod
    def replacement(state: DensityMatrix, in_layout: SubsystemLayout) -> "ChannelSpec":
        """E(rho) = tr(rho) * state."""
        d_in = in_layout.total_dim
        j = np.kron(state.entries, np.eye(d_in) / d_in)
        return ChannelSpec(in_layout, state.layout,
                           HermitianOperator(state.layout.concat(in_layout), j))

    # -- action

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """E(rho) = d_in tr_in[J (I (x) rho^T)]."""
        m = self.choi.entries @ np.kron(np.eye(self.d_out), np.asarray(rho).T)
        return self.d_in * ptrace_array(m, (self.d_out, self.d_in), (0,))

    def apply_adjoint(self, obs: np.ndarray) -> np.ndarray:
        """Heisenberg picture: tr[obs E(rho)] = tr[apply_adjoint(obs) rho]."""
        m = self.choi.entries @ np.kron(np.asarray(obs), np.eye(self.d_in))
        return self.d_in * ptrace_array(m, (self.d_out, self.d_in), (1,)).T

    def apply_to(self, rho: DensityMatrix) -> DensityMatrix:
        if rho.layout != self.in_layout:
            raise LayoutError("input state layout does not match the channel input")
        return DensityMatrix.from_array(self.out_layout, self.apply(rho.entries))

    def to_json(self) -> dict:
        return {"in": self.in_layout.to_json(), "out": self.out_layout.to_json(),
                "choi": self.choi.to_json()}

    @staticmethod
    def from_json(data: dict) -> "ChannelSpec":
        return ChannelSpec(SubsystemLayout.from_json(data["in"]),
                           SubsystemLayout.from_json(data["out"]),
                           HermitianOperator.from_json(data["choi"]))


def _primed_twin(layout: SubsystemLayout) -> SubsystemLayout:
    return SubsystemLayout([(l.rstrip("'") if l.endswith("'") else l + "'", d)
                            for l, d in layout.factors])


def tensor_channels(a: ChannelSpec, b: ChannelSpec) -> ChannelSpec:
    """Product channel a (x) b; Choi factors reordered to out (x) in."""
    from .herm import permute_factors, tensor

    big = tensor(a.choi, b.choi)  # [a.out, a.in, b.out, b.in]
    out_layout = a.out_layout.concat(b.out_layout)
    in_layout = a.in_layout.concat(b.in_layout)
    order = out_layout.labels + in_layout.labels
    return ChannelSpec(in_layout, out_layout, permute_factors(big, order))


# ---------------------------------------------------------------------------
# Channel families and instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelPair:
    """An input-output pair X' -> X inside global in/out spaces."""

    inp: SubsystemSet
    out: SubsystemSet

    def label(self) -> str:
        return f"{','.join(self.inp.members)}->{','.join(self.out.members)}"


@dataclass(frozen=True)
class ChannelMarginalFamily:
    global_in: SubsystemLayout
    global_out: SubsystemLayout
    entries: tuple[tuple[ChannelPair, ChannelSpec], ...]

    def __init__(self, global_in, global_out, entries):
        entries = tuple(entries)
        for pair, spec in entries:
            if pair.inp.layout != global_in or pair.out.layout != global_out:
                raise LayoutError("pair subsystem sets must refer to the global layouts")
            if spec.in_layout != global_in.sublayout(pair.inp.members):
                raise LayoutError(f"channel input layout mismatch for pair {pair.label()}")
            if spec.out_layout != global_out.sublayout(pair.out.members):
                raise LayoutError(f"channel output layout mismatch for pair {pair.label()}")
        object.__setattr__(self, "global_in", global_in)
        object.__setattr__(self, "global_out", global_out)
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class ChannelRmpInstance:
    family: ChannelMarginalFamily
    target: ChannelPair
    free: FreeChannelSetSpec

    def __post_init__(self):
        if self.target.inp.layout != self.family.global_in:
            raise LayoutError("target input must live on the global input layout")
        if self.target.out.layout != self.family.global_out:
            raise LayoutError("target output must live on the global output layout")

    @property
    def joint_layout(self) -> SubsystemLayout:
        return self.family.global_out.concat(self.family.global_in)


# ---------------------------------------------------------------------------
# Marginal channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginalChannelResult:
    exists: bool
    channel: ChannelSpec | None
    deviation: float


def marginal_channel(global_channel: ChannelSpec, pair: ChannelPair,
                     tol: float = DEFAULT_TOLS.psd) -> MarginalChannelResult:
    """Reduced channel on the pair, when the no-signaling condition holds.

    Exists iff  tr_{rest}(J) (x) I/d  ==  tr_{out rest}(J)  on the kept
    factors; the reduced Choi is then the pair marginal of the global Choi.
    """
    so = global_channel.out_layout.concat(global_channel.in_layout)
    j = global_channel.choi
    keep_pair = list(pair.out.members) + list(pair.inp.members)
    marg = PartialTraceMap(so, keep_pair).apply(j.entries)

    rhs_labels = list(pair.out.members) + list(global_channel.in_layout.labels)
    rhs = PartialTraceMap(so, rhs_labels).apply(j.entries)

    rest_in = [l for l in global_channel.in_layout.labels if l not in pair.inp.members]
    if rest_in:
        d_rest = global_channel.in_layout.dim_of(rest_in)
        lifted = np.kron(marg, np.eye(d_rest) / d_rest)
        cur_layout = SubsystemLayout(
            [so.factors[a] for a in so.axes_of(keep_pair)]
            + [global_channel.in_layout.factors[a]
               for a in global_channel.in_layout.axes_of(rest_in)])
        lifted = PermuteMap(cur_layout, rhs_labels).apply(lifted)
    else:
        lifted = marg
    dev = float(np.max(np.abs(lifted - rhs)))
    if dev > tol * max(1.0, float(np.max(np.abs(rhs)))):
        return MarginalChannelResult(False, None, dev)
    in_sub = global_channel.in_layout.sublayout(pair.inp.members)
    out_sub = global_channel.out_layout.sublayout(pair.out.members)
    spec = ChannelSpec(in_sub, out_sub, HermitianOperator(out_sub.concat(in_sub), marg))
    return MarginalChannelResult(True, spec, dev)


# ---------------------------------------------------------------------------
# Program builders
# ---------------------------------------------------------------------------


def _existence_terms(so: SubsystemLayout, global_in: SubsystemLayout,
                     pair: ChannelPair) -> list | None:
    """Terms of  tr_{S\\X}(V) - lift(tr_{SS'\\XX'}(V)) = 0, or None if trivial."""
    rest_in = [l for l in global_in.labels if l not in pair.inp.members]
    if not rest_in:
        return None
    keep_pair = list(pair.out.members) + list(pair.inp.members)
    rhs_labels = list(pair.out.members) + list(global_in.labels)
    lhs = PartialTraceMap(so, rhs_labels)
    m1 = PartialTraceMap(so, keep_pair)
    d_rest = global_in.dim_of(rest_in)
    m2 = TensorIdentityMap(m1.out_dim, d_rest, denom=d_rest)
    cur_layout = SubsystemLayout(
        [so.factors[a] for a in so.axes_of(keep_pair)]
        + [global_in.factors[a] for a in global_in.axes_of(rest_in)])
    m3 = PermuteMap(cur_layout, rhs_labels)
    rhs_map = ComposeMap(m3, ComposeMap(m2, m1)).scaled(-1.0)
    return [(None, lhs), (None, rhs_map)]  # var filled in by caller


def _build_channel_base(inst: ChannelRmpInstance, prog: ConicProgram, pin_choi_state: bool):
    """Shared constraints: Choi validity, marginal existence, free target cone."""
    so = inst.joint_layout
    gin = inst.family.global_in
    v = prog.add_variable("V", so.total_dim)

    # Choi-validity: tr_S(V) = tr(V) I/d_in (cone form), or exactly I/d_in
    tr_out_map = PartialTraceMap(so, gin.labels)
    d_in = gin.total_dim
    if pin_choi_state:
        prog.add_matrix_equality("choi_state", [(v, tr_out_map)], np.eye(d_in) / d_in)
    else:
        prog.add_matrix_equality(
            "choi_cone", [(v, tr_out_map), (v, TraceTimesMap(so.total_dim, -np.eye(d_in) / d_in))],
            np.zeros((d_in, d_in)))

    pairs = [pair for pair, _ in inst.family.entries]
    for pair in pairs + [inst.target]:
        terms = _existence_terms(so, gin, pair)
        if terms is not None:
            prog.add_matrix_equality(f"exists[{pair.label()}]",
                                     [(v, m) for _, m in terms],
                                     np.zeros((terms[0][1].out_dim,) * 2))

    free = inst.free
    t_pair = inst.target
    keep_t = list(t_pair.out.members) + list(t_pair.inp.members)
    if free.kind == "SingletonChannel":
        prog.add_matrix_equality(
            "free.pin",
            [(v, PartialTraceMap(so, keep_t)),
             (v, TraceTimesMap(so.total_dim, -free.choi.entries))],
            np.zeros((free.choi.dim,) * 2))
    elif free.kind == "FreeOutputState":
        # replacement structure: V_TT' = tr_{T'}(V_TT') (x) I/d_T'
        m_tt = PartialTraceMap(so, keep_t)
        m_t = PartialTraceMap(so, list(t_pair.out.members))
        d_tp = t_pair.inp.dim
        lift = ComposeMap(TensorIdentityMap(m_t.out_dim, d_tp, denom=d_tp), m_t).scaled(-1.0)
        prog.add_matrix_equality("free.replacement", [(v, m_tt), (v, lift)],
                                 np.zeros((m_tt.out_dim,) * 2))
        attach_free_state_cone(prog, v, m_t, free.state_spec, prefix="free.state")
    # AllChannels: marginal existence + Choi validity already say it all
    return v


def _pair_trace_map(inst: ChannelRmpInstance, pair: ChannelPair) -> PartialTraceMap:
    return PartialTraceMap(inst.joint_layout,
                           list(pair.out.members) + list(pair.inp.members))


# ---------------------------------------------------------------------------
# Compatibility check and robustness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelCompatibilityResult:
    compatible: bool
    witness_channel: ChannelSpec | None
    residual: float
    certificate: dict | None = None


def check_channel_compatible(inst: ChannelRmpInstance,
                             tol: float = DEFAULT_TOLS.compat,
                             settings: SolverSettings | None = None) -> ChannelCompatibilityResult:
    """Feasibility of a global channel matching all pair marginals with a
    free target-pair marginal."""
    prog = ConicProgram()
    v = _build_channel_base(inst, prog, pin_choi_state=True)
    for pair, spec in inst.family.entries:
        prog.add_matrix_equality(f"marginal[{pair.label()}]",
                                 [(v, _pair_trace_map(inst, pair))], spec.choi.entries)
    d = inst.joint_layout.total_dim
    prog.set_objective([(v, np.eye(d))], "min")  # constant (=1) on the feasible set
    res = solve(prog, settings)
    if res.status == Status.OPTIMAL:
        j = _project_choi_state(res.primal_blocks["V"], inst.family.global_in.total_dim)
        so = inst.joint_layout
        spec = ChannelSpec(inst.family.global_in, inst.family.global_out,
                           HermitianOperator(so, j))
        dev = max(
            float(np.max(np.abs(_pair_trace_map(inst, pair).apply(j) - s.choi.entries)))
            for pair, s in inst.family.entries)
        return ChannelCompatibilityResult(True, spec, dev)
    if res.status == Status.INFEASIBLE:
        return ChannelCompatibilityResult(False, None, np.inf, certificate=res.certificate)
    raise SolverFailure(f"compatibility check ended with status {res.status}")


def _project_choi_state(j: np.ndarray, d_in: int) -> np.ndarray:
    """Nearest valid Choi state: clip negative eigenvalues, then sandwich the
    input marginal back to I/d (preserves positivity exactly)."""
    vals, vecs = np.linalg.eigh(hermitize(j))
    j = (vecs * np.clip(vals, 1e-14, None)) @ vecs.conj().T
    d_out = j.shape[0] // d_in
    marg = ptrace_array(j, (d_out, d_in), (1,))
    mw, mv = np.linalg.eigh(hermitize(marg))
    k = (mv * (1.0 / np.sqrt(np.maximum(mw, 1e-14) * d_in))) @ mv.conj().T
    sandwich = np.kron(np.eye(d_out), k)
    return hermitize(sandwich @ j @ sandwich)


@dataclass
class ChannelRobustnessResult:
    status: Status
    value_log2: float
    optimum: float
    optimizer: HermitianOperator | None
    solve_result: SolveResult
    relaxation: str | None = None
    diagnostics: str | None = None

    @property
    def pair_duals(self) -> dict[str, np.ndarray]:
        return {name.split("dominate[")[1][:-1]: m
                for name, m in self.solve_result.dual_multipliers.items()
                if name.startswith("dominate[") and name.endswith("]")}


def channel_robustness(inst: ChannelRmpInstance,
                       settings: SolverSettings | None = None) -> ChannelRobustnessResult:
    """log2 of  min tr(V)  over scaled free-compatible Chois dominating all
    pair marginals."""
    if not inst.free.admits_full_rank_replacement():
        warnings.warn("free channel set admits no full-rank replacement channel; "
                      "strong duality is not guaranteed", stacklevel=2)
    prog = ConicProgram()
    v = _build_channel_base(inst, prog, pin_choi_state=False)
    for pair, spec in inst.family.entries:
        prog.add_psd_inequality(f"dominate[{pair.label()}]",
                                [(v, _pair_trace_map(inst, pair))],
                                const=-spec.choi.entries)
    d = inst.joint_layout.total_dim
    prog.set_objective([(v, np.eye(d))], "min")
    res = solve(prog, settings)
    if res.status == Status.OPTIMAL:
        opt = res.primal_value
        value = max(0.0, math.log2(max(opt, 1e-300)))
        optimizer = HermitianOperator(inst.joint_layout, hermitize(res.primal_blocks["V"]))
        return ChannelRobustnessResult(res.status, value, opt, optimizer, res,
                                       relaxation=inst.free.relaxation)
    if res.status == Status.INFEASIBLE:
        diag = ("no scaled free-compatible Choi dominates the family: the free "
                "channel set likely admits no full-rank replacement channel "
                "(finiteness assumption violated)")
        return ChannelRobustnessResult(res.status, np.inf, np.inf, None, res,
                                       relaxation=inst.free.relaxation, diagnostics=diag)
    raise SolverFailure(f"channel robustness solve ended with status {res.status}")


# ---------------------------------------------------------------------------
# Linear maximization over the compatible-and-free channel set
# ---------------------------------------------------------------------------


class ChannelCompatibleSetModel:
    """max over free-compatible channel families of
    sum_pairs tr( J^L_pair  B_pair ), reusing one compiled program."""

    def __init__(self, inst: ChannelRmpInstance, settings: SolverSettings | None = None):
        self.inst = inst
        self.settings = settings
        self.prog = ConicProgram()
        self.var = _build_channel_base(inst, self.prog, pin_choi_state=True)
        self.maps = {pair.label(): _pair_trace_map(inst, pair)
                     for pair, _ in inst.family.entries}
        self.maps[inst.target.label()] = _pair_trace_map(inst, inst.target)
        d = inst.joint_layout.total_dim
        self.prog.set_objective([(self.var, np.eye(d))], "max")
        self.prog.compile()  # objective swaps then share the compiled data

    def maximize(self, observables: dict[str, np.ndarray]) -> SolveResult:
        so = self.inst.joint_layout
        coeff = np.zeros((so.total_dim, so.total_dim), dtype=complex)
        for label, obs in observables.items():
            coeff += self.maps[label].adjoint(np.asarray(obs, dtype=complex))
        prog = self.prog.with_objective([(self.var, coeff)], "max")
        res = solve(prog, self.settings)
        if res.status != Status.OPTIMAL:
            raise SolverFailure(f"channel set maximization ended with {res.status}")
        return res


def channel_linear_max_over_set(observables: dict[str, np.ndarray],
                                inst: ChannelRmpInstance,
                                settings: SolverSettings | None = None) -> float:
    return ChannelCompatibleSetModel(inst, settings).maximize(observables).primal_value


# ---------------------------------------------------------------------------
# Dynamical witness
# ---------------------------------------------------------------------------


def ic_state_frame(d: int) -> list[np.ndarray]:
    """Deterministic informationally complete frame of d^2 pure states:
    basis projectors plus the +/i two-level superpositions."""
    frame = []
    for k in range(d):
        v = np.zeros(d, dtype=complex)
        v[k] = 1.0
        frame.append(np.outer(v, v.conj()))
    for k in range(d):
        for l in range(k + 1, d):
            v = np.zeros(d, dtype=complex)
            v[k] = v[l] = 1 / np.sqrt(2)
            frame.append(np.outer(v, v.conj()))
            v = np.zeros(d, dtype=complex)
            v[k] = 1 / np.sqrt(2)
            v[l] = 1j / np.sqrt(2)
            frame.append(np.outer(v, v.conj()))
    return frame


def _herm_coords(m: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    return np.array([float(np.trace(h.conj().T @ m).real) for h in basis])


def frame_decompose(e: np.ndarray, d_out: int, d_in: int) -> tuple[np.ndarray, list, list]:
    """Weights w[i, j] with  e = sum_ij w_ij  xi_i (x) rho_j^T  over the
    deterministic IC frames on the output (xi) and input (rho) spaces."""
    xis = ic_state_frame(d_out)
    rhos = ic_state_frame(d_in)
    basis = hermitian_basis(d_out * d_in)
    cols = np.column_stack([
        _herm_coords(np.kron(xi, rho.T), basis) for xi in xis for rho in rhos])
    w = np.linalg.solve(cols, _herm_coords(e, basis))
    return w.reshape(len(xis), len(rhos)), xis, rhos


@dataclass
class ChannelWitness:
    """Per pair: observables W_i on the output and input states rho_i with
    sum_i tr[W_i E(rho_i)] strictly larger at the family than anywhere in the
    free-compatible set."""

    entries: dict[str, list[tuple[np.ndarray, np.ndarray]]]  # label -> [(W_i, rho_i)]
    free_sup: float
    value_at_family: float
    n_terms: int
    metadata: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.value_at_family - self.free_sup


def channel_witness(inst: ChannelRmpInstance,
                    robustness: ChannelRobustnessResult | None = None,
                    settings: SolverSettings | None = None,
                    tol: float = DEFAULT_TOLS.compat) -> ChannelWitness:
    res = robustness if robustness is not None else channel_robustness(inst, settings)
    if res.status != Status.OPTIMAL:
        raise SolverFailure(f"robustness status {res.status}; witness needs Optimal")
    if res.value_log2 <= tol:
        raise NoWitnessError("no witness exists: the channel family is free-compatible")

    duals = res.pair_duals
    entries: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
    value = 0.0
    n_max = 0
    for pair, spec in inst.family.entries:
        e = hermitize(duals[pair.label()])
        w, _, rhos = frame_decompose(e, spec.d_out, spec.d_in)
        terms = []
        for j, rho in enumerate(rhos):
            wj = hermitize(sum(w[i, j] * xi for i, xi in enumerate(ic_state_frame(spec.d_out))))
            wj = wj / spec.d_in
            terms.append((wj, rho))
        # identity check: folded form reproduces tr(J E) exactly
        folded = sum(float(np.trace(wj @ spec.apply(rho)).real) for wj, rho in terms)
        direct = float(np.trace(spec.choi.entries @ e).real)
        if abs(folded - direct) > 1e-8 * (1 + abs(direct)):
            raise SolverFailure("frame decomposition failed to reproduce the Choi pairing")
        entries[pair.label()] = terms
        value += folded
        n_max = max(n_max, len(terms))

    # zero-pad every pair to a common number of terms
    for pair, spec in inst.family.entries:
        terms = entries[pair.label()]
        while len(terms) < n_max:
            terms.append((np.zeros((spec.d_out,) * 2), np.eye(spec.d_in) / spec.d_in))

    sup = channel_linear_max_over_set(duals, inst, settings)
    bound = max(max(p.out.dim, p.inp.dim) for p, _ in inst.family.entries) ** 2 + 3
    w = ChannelWitness(entries, sup, value, n_max,
                       metadata={"dual_optimum_unique": False,
                                 "n_bound": bound,
                                 "relaxation": inst.free.relaxation})
    if w.gap <= 0:
        raise SolverFailure("extracted witness has no strict gap; solver accuracy insufficient")
    return w


# ---------------------------------------------------------------------------
# Ensemble state discrimination task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelDiscriminationTask:
    """Per pair: prior p_pair, per-outcome priors, input states, POVM."""

    pair_priors: dict[str, float]
    outcome_priors: dict[str, np.ndarray]
    states: dict[str, list[np.ndarray]]
    povms: dict[str, list[np.ndarray]]
    epsilon: float
    metadata: dict = field(default_factory=dict)

    def strictly_positive(self, tol: float = 0.0) -> bool:
        for label in self.pair_priors:
            if self.pair_priors[label] <= tol or np.any(self.outcome_priors[label] <= tol):
                return False
            for e in self.povms[label]:
                if np.linalg.eigvalsh(hermitize(e))[0] <= tol:
                    return False
        return True


def state_discrimination_task(witness: ChannelWitness, inst: ChannelRmpInstance,
                              epsilon: float | None = None,
                              settings: SolverSettings | None = None) -> ChannelDiscriminationTask:
    """Shift and scale the witness observables into strictly positive POVM
    elements, append the completing outcome, and fix the priors."""
    if all(np.max(np.abs(wj)) < 1e-14 for terms in witness.entries.values()
           for wj, _ in terms):
        raise ValueError("degenerate (all-zero) witness cannot define a task")

    n = witness.n_terms
    n_pairs = len(witness.entries)
    povms: dict[str, list[np.ndarray]] = {}
    states: dict[str, list[np.ndarray]] = {}
    pair_specs = {pair.label(): spec for pair, spec in inst.family.entries}
    for label, terms in witness.entries.items():
        d_out = pair_specs[label].d_out
        shift = max(0.0, max(-float(np.linalg.eigvalsh(wj)[0]) for wj, _ in terms))
        delta = shift + 0.05 * max(1e-6, max(float(np.linalg.norm(wj, 2)) for wj, _ in terms))
        zs = [hermitize(wj + delta * np.eye(d_out)) for wj, _ in terms]
        total = sum(zs)
        kap = 0.95 / float(np.linalg.eigvalsh(total)[-1])
        zs = [kap * z for z in zs]
        povms[label] = zs + [np.eye(d_out) - sum(zs)]
        states[label] = [rho for _, rho in terms] + [np.eye(pair_specs[label].d_in)
                                                     / pair_specs[label].d_in]

    if epsilon is None:
        d1, d2 = _epsilon_bound_terms(witness, inst, povms, states, settings)
        epsilon = 0.5 if d2 <= 0 else min(d1 / d2, 1.0) / 2
    if not (0 < epsilon < 1):
        raise ValueError(f"epsilon = {epsilon} does not give a strictly positive task")

    priors = {label: np.array([(1 - epsilon) / n] * n + [epsilon])
              for label in witness.entries}
    task = ChannelDiscriminationTask(
        pair_priors={label: 1.0 / n_pairs for label in witness.entries},
        outcome_priors=priors, states=states, povms=povms, epsilon=float(epsilon),
        metadata={"n_terms": n})
    if not task.strictly_positive():
        raise ValueError("constructed task is not strictly positive")
    return task


def _effective_pair_observable(task_states, task_povms, weights, d_in) -> np.ndarray:
    """B with tr(J^L B) = sum_i w_i tr[E_i L(sigma_i)] for any channel L."""
    b = np.zeros((task_povms[0].shape[0] * d_in,) * 2, dtype=complex)
    for w_i, e_i, s_i in zip(weights, task_povms, task_states):
        b += w_i * d_in * np.kron(e_i, s_i.T)
    return b


def _epsilon_bound_terms(witness, inst, povms, states, settings):
    """Delta_1 (main-outcome advantage) and Delta_2 (completing-outcome drift)."""
    model = ChannelCompatibleSetModel(inst, settings)
    pair_specs = {pair.label(): spec for pair, spec in inst.family.entries}
    n = witness.n_terms
    n_pairs = len(witness.entries)

    def observables(kind: str) -> dict[str, np.ndarray]:
        obs = {}
        for label in witness.entries:
            spec = pair_specs[label]
            if kind == "main":
                w = [1.0 / (n * n_pairs)] * n + [0.0]
            else:
                w = [-1.0 / (n * n_pairs)] * n + [1.0 / n_pairs]
            obs[label] = _effective_pair_observable(states[label], povms[label], w, spec.d_in)
        return obs

    def value_at_family(obs):
        return sum(float(np.trace(pair_specs[l].choi.entries @ obs[l]).real)
                   for l in obs)

    obs_main = observables("main")
    d1 = value_at_family(obs_main) - model.maximize(obs_main).primal_value
    obs_gamma = observables("gamma")
    d2 = model.maximize(obs_gamma).primal_value - value_at_family(obs_gamma)
    return d1, d2


def channel_success_probability(task: ChannelDiscriminationTask,
                                family: ChannelMarginalFamily) -> float:
    """P = sum_pairs sum_i p_pair p_i tr[E_i E_pair(sigma_i)]."""
    total = 0.0
    specs = {pair.label(): spec for pair, spec in family.entries}
    for label, p_pair in task.pair_priors.items():
        spec = specs[label]
        for p_i, e_i, s_i in zip(task.outcome_priors[label], task.povms[label],
                                 task.states[label]):
            total += p_pair * p_i * float(np.trace(e_i @ spec.apply(s_i)).real)
    return total


def channel_task_advantage(task: ChannelDiscriminationTask, inst: ChannelRmpInstance,
                           settings: SolverSettings | None = None) -> float:
    """P at the instance family minus the best P over the free-compatible set."""
    pair_specs = {pair.label(): spec for pair, spec in inst.family.entries}
    obs = {}
    for label, p_pair in task.pair_priors.items():
        spec = pair_specs[label]
        weights = [p_pair * p for p in task.outcome_priors[label]]
        obs[label] = _effective_pair_observable(task.states[label], task.povms[label],
                                                weights, spec.d_in)
    p_at = channel_success_probability(task, inst.family)
    sup = ChannelCompatibleSetModel(inst, settings).maximize(obs).primal_value
    return p_at - sup
