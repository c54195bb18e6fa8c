"""Sub-channel discrimination games built from incompatibility witnesses.

A witness block W_X is turned into a strictly positive task: the spectral
decomposition of W_X + delta*I gives weights w_i and vectors |v_i>, each
rotated by a chosen unitary into an operator M_i = d_X w_i U_i |v_i><v_i| U_i^dag;
the POVM elements are E_i = (M_i + delta*I) / (mu_X + delta) with
mu_X = ||sum_i (M_i + delta*I)||_inf, completed by E_{d+1} = I - sum_i E_i.
With channel i being conjugation by the same U_i, the main-outcome success
probability is an affine image of the witness value, so incompatible
families beat every free-compatible family at the task.

Randomness is deterministic and portable: all sampling uses the Philox4x32-10
counter-based generator; the histogram experiment seeds sample k with
``seed XOR k``, so results are independent of execution order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import DEFAULT_TOLS
from .freesets import FreeSetSpec
from .herm import (
    HermitianOperator,
    SubsystemLayout,
    SubsystemSet,
    eig_hermitian,
    hermitize,
)
from .solver import SolverFailure, SolverSettings
from .state_rmp import CompatibleSetModel, MarginalFamily, RmpInstance, Witness
from .states import qubit_layout, w_marginal


# ---------------------------------------------------------------------------
# Haar sampling (Ginibre + QR with phase-corrected R diagonal)
# ---------------------------------------------------------------------------


def haar_from_generator(dim: int, gen: np.random.Generator) -> np.ndarray:
    z = (gen.normal(size=(dim, dim)) + 1j * gen.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r).copy()
    ph /= np.abs(ph)
    return q * ph


def haar_unitary(dim: int, seed: int) -> np.ndarray:
    """Haar-distributed unitary, deterministic per seed (Philox4x32-10)."""
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    return haar_from_generator(dim, gen)


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskBlock:
    sub: SubsystemSet
    prior: float
    outcome_priors: np.ndarray
    unitaries: tuple[np.ndarray, ...]       # channel i = conjugation by unitaries[i]
    povm: tuple[np.ndarray, ...]
    spectral_weights: np.ndarray | None = None
    spectral_vectors: np.ndarray | None = None


@dataclass(frozen=True)
class DiscriminationTask:
    blocks: tuple[TaskBlock, ...]
    epsilon: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        tols = DEFAULT_TOLS
        if abs(sum(b.prior for b in self.blocks) - 1) > 1e-12:
            raise ValueError("block priors must sum to one")
        for b in self.blocks:
            if abs(float(np.sum(b.outcome_priors)) - 1) > 1e-12:
                raise ValueError("outcome priors must sum to one")
            if len(b.unitaries) != len(b.povm) or len(b.povm) != len(b.outcome_priors):
                raise ValueError("outcome count mismatch")
            total = sum(b.povm)
            if np.max(np.abs(total - np.eye(total.shape[0]))) > tols.psd:
                raise ValueError("POVM does not sum to the identity")

    @property
    def strictly_positive(self) -> bool:
        for b in self.blocks:
            if b.prior <= 0 or np.any(b.outcome_priors <= 0):
                return False
            for e in b.povm:
                if np.linalg.eigvalsh(hermitize(e))[0] <= 0:
                    return False
        return True


def success_probability(task: DiscriminationTask, inputs: MarginalFamily) -> float:
    """P = sum_X sum_i p_X p_i tr[E_i U_i sigma_X U_i^dag]."""
    by_members = {tuple(sub.members): sigma for sub, sigma in inputs.entries}
    total = 0.0
    for b in task.blocks:
        sigma = by_members[tuple(b.sub.members)].entries
        for p_i, u, e in zip(b.outcome_priors, b.unitaries, b.povm):
            total += b.prior * float(p_i) * float(np.trace(e @ u @ sigma @ u.conj().T).real)
    return total


def effective_observables(task: DiscriminationTask) -> list[tuple[SubsystemSet, np.ndarray]]:
    """O_X with P(tau) = sum_X tr(tau_X O_X): Heisenberg-picture POVM sums."""
    out = []
    for b in task.blocks:
        d = b.povm[0].shape[0]
        o = np.zeros((d, d), dtype=complex)
        for p_i, u, e in zip(b.outcome_priors, b.unitaries, b.povm):
            o += b.prior * float(p_i) * (u.conj().T @ e @ u)
        out.append((b.sub, hermitize(o)))
    return out


def advantage(task: DiscriminationTask, sigma: MarginalFamily,
              feasible: RmpInstance | CompatibleSetModel,
              settings: SolverSettings | None = None,
              require_strict: bool = True) -> float:
    """P at sigma minus the best P over the free-compatible set."""
    if require_strict and not task.strictly_positive:
        raise ValueError("advantage is defined for strictly positive tasks")
    model = feasible if isinstance(feasible, CompatibleSetModel) else \
        CompatibleSetModel(feasible.layout, feasible.free, settings)
    sup = model.maximize(effective_observables(task)).primal_value
    return success_probability(task, sigma) - sup


# ---------------------------------------------------------------------------
# Task construction from a witness
# ---------------------------------------------------------------------------


def shifted_spectrum(block: HermitianOperator, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministically ordered eigensystem of W + delta*I."""
    shifted = HermitianOperator(block.layout,
                                block.entries + delta * np.eye(block.dim))
    return eig_hermitian(shifted)


def _block_from_spectrum(sub: SubsystemSet, weights: np.ndarray, vectors: np.ndarray,
                         unitaries: Sequence[np.ndarray], delta: float,
                         priors: np.ndarray, prior: float,
                         strict: bool = True) -> TaskBlock:
    """POVM block from a shifted-witness spectrum.

    With strict=True the normalization is mu = ||sum_i (M_i + delta I)||, so
    the completing element stays strictly positive.  strict=False uses the
    weaker mu = ||sum_i M_i + delta I||, the variant whose numbers the
    histogram experiment reproduces; its completing element can dip slightly
    (about -2 delta / mu) below zero.
    """
    d = vectors.shape[0]
    ms = []
    for i in range(d):
        v = unitaries[i] @ vectors[:, i]
        ms.append(d * float(weights[i]) * np.outer(v, v.conj()))
    mu = float(np.linalg.eigvalsh(hermitize(sum(ms)))[-1]) + (d * delta if strict else delta)
    povm = [hermitize((m + delta * np.eye(d)) / (mu + delta)) for m in ms]
    povm.append(np.eye(d) - sum(povm))
    return TaskBlock(sub, prior, priors, tuple(unitaries), tuple(povm),
                     spectral_weights=weights, spectral_vectors=vectors)


def task_from_witness(witness: Witness, unitaries, instance: RmpInstance | None = None,
                      delta: float = 0.01, epsilon: float | None = None,
                      settings: SolverSettings | None = None) -> DiscriminationTask:
    """Build the discrimination task attached to a witness.

    `unitaries` maps each block's member tuple to a list of d_X (or d_X + 1)
    unitary matrices; the optional extra entry is the channel of the
    completing outcome (identity if omitted).  With `epsilon=None` the
    completing-outcome prior is chosen by the safety rule
    eps = 1/2 if Delta_2 <= 0 else min(Delta_1/Delta_2, 1)/2, which needs the
    instance to solve the two bound terms.  Passing epsilon=0 is allowed for
    diagnostics but yields a task that is not strictly positive.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    specs = []
    for sub, w in witness.blocks:
        if w.min_eig() < -DEFAULT_TOLS.psd:
            raise ValueError(f"witness block on {sub.members} is not PSD")
        d = w.dim
        us = list(unitaries[tuple(sub.members)])
        if len(us) not in (d, d + 1):
            raise ValueError(f"need {d} or {d + 1} unitaries for block {sub.members}")
        for u in us:
            if np.max(np.abs(u.conj().T @ u - np.eye(d))) > 1e-10:
                raise ValueError("channel matrices must be unitary")
        if len(us) == d:
            us.append(np.eye(d, dtype=complex))
        weights, vectors = shifted_spectrum(w, delta)
        specs.append((sub, weights, vectors, us))

    eps = epsilon
    if eps is None:
        if instance is None:
            raise ValueError("epsilon rule needs the instance to bound the task terms")
        draft = _assemble(specs, delta, 0.5)
        d1, d2 = epsilon_bound_terms(draft, instance.marginals, instance, settings)
        eps = 0.5 if d2 <= 0 else min(d1 / d2, 1.0) / 2
    task = _assemble(specs, delta, float(eps))
    return task


def _assemble(specs, delta: float, eps: float) -> DiscriminationTask:
    blocks = []
    n_blocks = len(specs)
    for sub, weights, vectors, us in specs:
        d = vectors.shape[0]
        priors = np.array([(1 - eps) / d] * d + [eps])
        blocks.append(_block_from_spectrum(sub, weights, vectors, us, delta,
                                           priors, 1.0 / n_blocks))
    return DiscriminationTask(tuple(blocks), eps)


def epsilon_bound_terms(task: DiscriminationTask, sigma: MarginalFamily,
                        feasible: RmpInstance | CompatibleSetModel,
                        settings: SolverSettings | None = None) -> tuple[float, float]:
    """(Delta_1, Delta_2): the main-outcome advantage and the worst drift of
    the completing outcome, recomputed from the assembled task."""
    model = feasible if isinstance(feasible, CompatibleSetModel) else \
        CompatibleSetModel(feasible.layout, feasible.free, settings)

    def blockwise(weight_fn):
        obs = []
        for b in task.blocks:
            d = b.povm[0].shape[0]
            o = np.zeros((d, d), dtype=complex)
            for i, (u, e) in enumerate(zip(b.unitaries, b.povm)):
                o += b.prior * weight_fn(i, d) * (u.conj().T @ e @ u)
            obs.append((b.sub, hermitize(o)))
        return obs

    def val(obs):
        by_members = {tuple(sub.members): s for sub, s in sigma.entries}
        return sum(float(np.trace(o @ by_members[tuple(sub.members)].entries).real)
                   for sub, o in obs)

    main = blockwise(lambda i, d: 1.0 / d if i < d else 0.0)
    gamma = blockwise(lambda i, d: -1.0 / d if i < d else 1.0)
    d1 = val(main) - model.maximize(main).primal_value
    d2 = model.maximize(gamma).primal_value - val(gamma)
    return d1, d2


# ---------------------------------------------------------------------------
# The W-marginal example and its histogram experiment
# ---------------------------------------------------------------------------

# POVM construction data of the canonical W-marginal example: the spectral
# weights and vectors of (witness + 0.01*I) for the two-qubit witness block,
# in the basis |00>, |01>, |10>, |11>.
W_EXAMPLE_DELTA = 0.01
W_EXAMPLE_WEIGHTS = np.array([
    0.010000027026545,
    0.010000058075968,
    0.458638621962197,
    0.537143367559183,
])
_A = 0.668877697040469
_B = 0.743372468148935
W_EXAMPLE_VECTORS = np.array([
    [0.0, 0.0, 1.0, 0.0],
    [_A, 0.0, 0.0, _B],
    [-_B, 0.0, 0.0, _A],
    [0.0, 1.0, 0.0, 0.0],
], dtype=complex)  # columns are the vectors for the four weights above


def w_example_witness_block(layout: SubsystemLayout | None = None) -> HermitianOperator:
    """The two-qubit witness block reconstructed from the published spectrum."""
    layout = layout or qubit_layout("AB")
    m = np.zeros((4, 4), dtype=complex)
    for i in range(4):
        v = W_EXAMPLE_VECTORS[:, i]
        m += (W_EXAMPLE_WEIGHTS[i] - W_EXAMPLE_DELTA) * np.outer(v, v.conj())
    return HermitianOperator(layout, m)


def w_example_instance() -> RmpInstance:
    """Both two-qubit W marginals on AB and BC with a separable (PPT) target AC."""
    layout = qubit_layout("ABC")
    fam = MarginalFamily(layout, [
        (("A", "B"), w_marginal(layout.sublayout(("A", "B")))),
        (("B", "C"), w_marginal(layout.sublayout(("B", "C")))),
    ])
    free = FreeSetSpec.separable_ppt(SubsystemSet(layout, ("A", "C")))
    return RmpInstance(fam, free)


def w_histogram_instance() -> RmpInstance:
    """The histogram experiment's labeling of the same problem: marginals on
    AB and AC, separable (PPT) target BC.  This is `w_example_instance` with
    the parties A and B swapped, the convention the published POVM data and
    histogram statistics belong to."""
    layout = qubit_layout("ABC")
    fam = MarginalFamily(layout, [
        (("A", "B"), w_marginal(layout.sublayout(("A", "B")))),
        (("A", "C"), w_marginal(layout.sublayout(("A", "C")))),
    ])
    free = FreeSetSpec.separable_ppt(SubsystemSet(layout, ("B", "C")))
    return RmpInstance(fam, free)


@dataclass(frozen=True)
class WTaskParams:
    """Fixed parameters of the histogram experiment."""

    delta: float = W_EXAMPLE_DELTA
    epsilon: float = 0.01
    weights: np.ndarray = field(default_factory=lambda: W_EXAMPLE_WEIGHTS.copy())
    vectors: np.ndarray = field(default_factory=lambda: W_EXAMPLE_VECTORS.copy())


def _w_example_task(unitaries: Sequence[np.ndarray], params: WTaskParams) -> DiscriminationTask:
    """The two-block task of the experiment: one set of five unitaries shared
    by the AB and AC blocks, POVMs normalized the published way."""
    layout = qubit_layout("ABC")
    eps = params.epsilon
    priors = np.array([(1 - eps) / 4] * 4 + [eps])
    blocks = tuple(
        _block_from_spectrum(SubsystemSet(layout, members), params.weights,
                             params.vectors, unitaries, params.delta, priors, 0.5,
                             strict=False)
        for members in (("A", "B"), ("A", "C")))
    return DiscriminationTask(blocks, eps)


def sample_w_advantage(index: int, seed: int, params: WTaskParams | None = None,
                       model: CompatibleSetModel | None = None,
                       settings: SolverSettings | None = None) -> float:
    """One histogram sample: five shared Haar unitaries, then the task's
    advantage over the separable-target compatible set."""
    params = params or WTaskParams()
    inst = w_histogram_instance()
    if model is None:
        model = CompatibleSetModel(inst.layout, inst.free, settings)
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(index)))
    us = [haar_from_generator(4, gen) for _ in range(5)]
    task = _w_example_task(us, params)
    try:
        return advantage(task, inst.marginals, model, require_strict=False)
    except SolverFailure as exc:
        raise SolverFailure(f"histogram sample {index} failed: {exc}") from exc


@dataclass
class HistogramResult:
    samples: np.ndarray
    seed: int
    bin_width: float = 1e-4

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def std(self) -> float:
        return float(np.std(self.samples))

    @property
    def min(self) -> float:
        return float(np.min(self.samples))

    @property
    def max(self) -> float:
        return float(np.max(self.samples))

    def bin_counts(self) -> dict[str, int]:
        edges = np.arange(0.0, self.max + 2 * self.bin_width, self.bin_width)
        counts, _ = np.histogram(self.samples, bins=edges)
        keep = np.nonzero(counts)[0]
        return {f"{edges[k]:.4f}": int(counts[k]) for k in keep}

    def summary(self) -> dict:
        return {"n_samples": int(self.samples.size), "seed": self.seed,
                "mean": self.mean, "std": self.std, "min": self.min, "max": self.max,
                "bin_width": self.bin_width, "bin_counts": self.bin_counts()}

    def to_csv(self) -> str:
        lines = ["sample_index,delta_p"]
        lines += [f"{k},{repr(float(v))}" for k, v in enumerate(self.samples)]
        return "\n".join(lines) + "\n"


_worker_model: CompatibleSetModel | None = None


def _histogram_worker(args) -> tuple[int, float]:
    global _worker_model
    index, seed, params = args
    if _worker_model is None:
        inst = w_histogram_instance()
        _worker_model = CompatibleSetModel(inst.layout, inst.free)
    return index, sample_w_advantage(index, seed, params, model=_worker_model)


def histogram_experiment(n_samples: int, seed: int, params: WTaskParams | None = None,
                         jobs: int = 1,
                         settings: SolverSettings | None = None) -> HistogramResult:
    """Distribution of the discrimination advantage of the W marginals over
    Haar-random unitary ensembles; samples are seeded independently, so the
    result does not depend on the degree of parallelism."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    out = np.empty(n_samples)
    if jobs <= 1 or n_samples == 1:
        inst = w_histogram_instance()
        model = CompatibleSetModel(inst.layout, inst.free, settings)
        for k in range(n_samples):
            out[k] = sample_w_advantage(k, seed, params, model, settings)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for k, value in pool.map(_histogram_worker,
                                     [(k, seed, params) for k in range(n_samples)],
                                     chunksize=max(1, n_samples // (8 * jobs))):
                out[k] = value
    return HistogramResult(out, seed)
