"""Dense semidefinite programming over complex Hermitian blocks.

Programs are stated over complex Hermitian PSD matrix variables with affine
equality constraints and affine PSD inequalities.  Internally every block is
mapped to its real symmetric embedding [[Re, -Im], [Im, Re]] and the problem
is solved by a primal-dual interior-point method with Nesterov-Todd scaling
on a homogeneous self-dual model, so primal infeasibility and unboundedness
surface as explicit certificates instead of garbage numbers.

The solver is deterministic: no randomized pivoting, identical inputs give
identical iterates.  Set the ``RMP_SOLVER_TRACE`` environment variable to
``1``/``stderr`` (or a file path) for a per-iteration diagnostic trace.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .config import DEFAULT_TOLS
from .herm import (
    SubsystemLayout,
    embedding_to_hermitian,
    hermitize,
    permute_array,
    ptrace_array,
    ptranspose_array,
    real_embedding,
)


class SolverFailure(RuntimeError):
    """The interior-point method could not certify any status."""


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolverSettings:
    gap_tol: float = DEFAULT_TOLS.gap
    feas_tol: float = DEFAULT_TOLS.feas
    max_iters: int = 200


# ---------------------------------------------------------------------------
# Linear maps between Hermitian operator spaces (with explicit adjoints)
# ---------------------------------------------------------------------------


class LinMap:
    """Base class; subclasses provide `apply` and the trace-inner-product
    adjoint `adjoint` satisfying tr(H @ apply(M)) == tr(adjoint(H) @ M)."""

    in_dim: int
    out_dim: int

    def apply(self, m: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, h: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def then(self, outer: "LinMap") -> "LinMap":
        return ComposeMap(outer, self)

    def scaled(self, alpha: float) -> "LinMap":
        return ScaleMap(self, alpha)


class IdentityMap(LinMap):
    def __init__(self, dim: int):
        self.in_dim = self.out_dim = dim

    def apply(self, m):
        return m

    def adjoint(self, h):
        return h


class ScaleMap(LinMap):
    def __init__(self, inner: LinMap, alpha: float):
        self.inner, self.alpha = inner, float(alpha)
        self.in_dim, self.out_dim = inner.in_dim, inner.out_dim

    def apply(self, m):
        return self.alpha * self.inner.apply(m)

    def adjoint(self, h):
        return self.alpha * self.inner.adjoint(h)


class ComposeMap(LinMap):
    def __init__(self, outer: LinMap, inner: LinMap):
        if inner.out_dim != outer.in_dim:
            raise ValueError("composed map dimensions do not match")
        self.outer, self.inner = outer, inner
        self.in_dim, self.out_dim = inner.in_dim, outer.out_dim

    def apply(self, m):
        return self.outer.apply(self.inner.apply(m))

    def adjoint(self, h):
        return self.inner.adjoint(self.outer.adjoint(h))


class PartialTraceMap(LinMap):
    """M on `layout` -> tr over the complement of `keep` (original order)."""

    def __init__(self, layout: SubsystemLayout, keep: Sequence[str]):
        self.layout = layout
        self.keep_axes = layout.axes_of(keep)
        self.dims = layout.dims
        self.in_dim = layout.total_dim
        self.out_dim = layout.dim_of(keep)

    def apply(self, m):
        return ptrace_array(m, self.dims, self.keep_axes)

    def adjoint(self, h):
        # tensor with identity on the traced-out factors, at their positions
        n = len(self.dims)
        drop = [a for a in range(n) if a not in self.keep_axes]
        full = h
        order = list(self.keep_axes)
        for a in drop:
            full = np.kron(full, np.eye(self.dims[a]))
            order.append(a)
        # `full` currently carries factors in `order`; permute back to layout order
        perm = [order.index(a) for a in range(n)]
        dims_cur = [self.dims[a] for a in order]
        return permute_array(full, dims_cur, perm)


class PartialTransposeMap(LinMap):
    def __init__(self, layout: SubsystemLayout, part: Sequence[str]):
        self.dims = layout.dims
        self.axes = layout.axes_of(part)
        self.in_dim = self.out_dim = layout.total_dim

    def apply(self, m):
        return ptranspose_array(m, self.dims, self.axes)

    adjoint = apply  # partial transpose is self-adjoint


class PermuteMap(LinMap):
    """Reorder tensor factors of `layout` into `new_order`."""

    def __init__(self, layout: SubsystemLayout, new_order: Sequence[str]):
        self.perm = layout.axes_of(new_order)
        self.dims = layout.dims
        self.new_dims = [self.dims[p] for p in self.perm]
        self.inv = [list(self.perm).index(a) for a in range(len(self.dims))]
        self.in_dim = self.out_dim = layout.total_dim

    def apply(self, m):
        return permute_array(m, self.dims, self.perm)

    def adjoint(self, h):
        return permute_array(h, self.new_dims, self.inv)


class TensorIdentityMap(LinMap):
    """M -> M (x) I_extra / denom, identity factors appended on the right."""

    def __init__(self, in_dim: int, extra_dim: int, denom: float = 1.0):
        self.in_dim = in_dim
        self.extra = extra_dim
        self.denom = float(denom)
        self.out_dim = in_dim * extra_dim

    def apply(self, m):
        return np.kron(m, np.eye(self.extra)) / self.denom

    def adjoint(self, h):
        d = self.in_dim
        t = h.reshape(d, self.extra, d, self.extra)
        return np.trace(t, axis1=1, axis2=3) / self.denom


class ProbeTimesMap(LinMap):
    """M -> tr(P M) * C for fixed Hermitian P (on the input) and C (output)."""

    def __init__(self, probe: np.ndarray, c: np.ndarray):
        self.probe = hermitize(np.asarray(probe, dtype=complex))
        self.c = np.asarray(c, dtype=complex)
        self.in_dim = self.probe.shape[0]
        self.out_dim = self.c.shape[0]

    def apply(self, m):
        return np.trace(self.probe @ m) * self.c

    def adjoint(self, h):
        return np.trace(hermitize(h) @ self.c).real * self.probe


class TraceTimesMap(ProbeTimesMap):
    """M -> tr(M) * C for a fixed Hermitian C."""

    def __init__(self, in_dim: int, c: np.ndarray):
        super().__init__(np.eye(in_dim), c)


# ---------------------------------------------------------------------------
# svec helpers for real symmetric matrices
# ---------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)
_svec_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _svec_idx(n: int):
    if n not in _svec_cache:
        iu = np.triu_indices(n)
        w = np.where(iu[0] == iu[1], 1.0, _SQRT2)
        _svec_cache[n] = (iu[0], iu[1], w)
    return _svec_cache[n]


def svec(m: np.ndarray) -> np.ndarray:
    r, c, w = _svec_idx(m.shape[0])
    return m[r, c] * w


def smat(v: np.ndarray, n: int) -> np.ndarray:
    r, c, w = _svec_idx(n)
    out = np.zeros((n, n))
    out[r, c] = v / w
    out[c, r] = out[r, c]
    return out


def svec_len(n: int) -> int:
    return n * (n + 1) // 2


def hermitian_basis(d: int) -> list[np.ndarray]:
    """Orthonormal (trace inner product) basis of d x d Hermitian matrices."""
    basis = []
    for k in range(d):
        e = np.zeros((d, d), dtype=complex)
        e[k, k] = 1.0
        basis.append(e)
    for k in range(d):
        for l in range(k + 1, d):
            e = np.zeros((d, d), dtype=complex)
            e[k, l] = e[l, k] = 1.0 / _SQRT2
            basis.append(e)
            e = np.zeros((d, d), dtype=complex)
            e[k, l] = -1j / _SQRT2
            e[l, k] = 1j / _SQRT2
            basis.append(e)
    return basis


# ---------------------------------------------------------------------------
# Program construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockRef:
    name: str
    cdim: int
    index: int
    is_slack: bool = False
    layout: SubsystemLayout | None = None


@dataclass
class _EqGroup:
    name: str
    rows: slice
    probes: list[np.ndarray] | None  # None for scalar rows
    scalar: bool


@dataclass
class _PsdGroup:
    name: str
    slack: BlockRef


Term = tuple[BlockRef, LinMap | None]


class ConicProgram:
    """Block-structured SDP: min/max sum_j tr(C_j X_j) over PSD blocks X_j
    subject to affine equalities and affine-PSD inequality constraints."""

    def __init__(self):
        self.blocks: list[BlockRef] = []
        self._offsets: list[int] = []
        self._rows: list[np.ndarray] = []
        self._rhs: list[float] = []
        self.eq_groups: list[_EqGroup] = []
        self.psd_groups: list[_PsdGroup] = []
        self._c: np.ndarray | None = None
        self.sense: int = +1  # +1 minimize, -1 maximize
        self._compiled: dict | None = None

    # -- construction ------------------------------------------------------

    def add_variable(self, name: str, cdim: int,
                     layout: SubsystemLayout | None = None) -> BlockRef:
        ref = BlockRef(name, int(cdim), len(self.blocks), layout=layout)
        self._append_block(ref)
        return ref

    def _append_block(self, ref: BlockRef):
        if any(b.name == ref.name for b in self.blocks):
            raise ValueError(f"duplicate block name {ref.name!r}")
        start = self._offsets[-1] + svec_len(2 * self.blocks[-1].cdim) if self.blocks else 0
        self.blocks.append(ref)
        self._offsets.append(start)
        self._compiled = None

    def _coeff_row(self, terms: Sequence[Term], probe: np.ndarray) -> np.ndarray:
        row = np.zeros(self.num_cols)
        for ref, lmap in terms:
            h = probe if lmap is None else lmap.adjoint(probe)
            sl = self.block_slice(ref)
            row[sl] += svec(real_embedding(hermitize(h))) / 2.0
        return row

    @property
    def num_cols(self) -> int:
        if not self.blocks:
            return 0
        return self._offsets[-1] + svec_len(2 * self.blocks[-1].cdim)

    def block_slice(self, ref: BlockRef) -> slice:
        start = self._offsets[ref.index]
        return slice(start, start + svec_len(2 * ref.cdim))

    def add_scalar_equality(self, name: str, terms: Sequence[tuple[BlockRef, np.ndarray]],
                            rhs: float):
        """sum_j tr(probe_j X_j) = rhs."""
        start = len(self._rows)
        row = np.zeros(self.num_cols)
        for ref, probe in terms:
            sl = self.block_slice(ref)
            row[sl] += svec(real_embedding(hermitize(np.asarray(probe, dtype=complex)))) / 2.0
        self._rows.append(row)
        self._rhs.append(float(rhs))
        self.eq_groups.append(_EqGroup(name, slice(start, start + 1), None, True))
        self._compiled = None

    def add_matrix_equality(self, name: str, terms: Sequence[Term], rhs: np.ndarray):
        """sum_j map_j(X_j) = rhs, expanded over an orthonormal Hermitian basis."""
        rhs = hermitize(np.asarray(rhs, dtype=complex))
        d = rhs.shape[0]
        for ref, lmap in terms:
            out = ref.cdim if lmap is None else lmap.out_dim
            if out != d:
                raise ValueError(f"constraint {name!r}: term output dim {out} != rhs dim {d}")
        probes = hermitian_basis(d)
        start = len(self._rows)
        for h in probes:
            self._rows.append(self._coeff_row(terms, h))
            self._rhs.append(float(np.trace(h.conj().T @ rhs).real))
        self.eq_groups.append(_EqGroup(name, slice(start, start + len(probes)), probes, False))
        self._compiled = None

    def add_psd_inequality(self, name: str, terms: Sequence[Term],
                           const: np.ndarray | None = None):
        """sum_j map_j(X_j) + const >= 0 (PSD), via a slack block."""
        dims = [(t[0].cdim if t[1] is None else t[1].out_dim) for t in terms]
        d = dims[0]
        if any(x != d for x in dims):
            raise ValueError(f"constraint {name!r}: mismatched term dimensions {dims}")
        slack = BlockRef(f"{name}.slack", d, len(self.blocks), is_slack=True)
        self._append_block(slack)
        rhs = np.zeros((d, d), dtype=complex) if const is None else -np.asarray(const, complex)
        self.add_matrix_equality(f"{name}.def", list(terms) + [(slack, ScaleMap(IdentityMap(d), -1.0))], rhs)
        self.psd_groups.append(_PsdGroup(name, slack))

    def set_objective(self, terms: Sequence[tuple[BlockRef, np.ndarray]], sense: str = "min"):
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.sense = +1 if sense == "min" else -1
        c = np.zeros(self.num_cols)
        for ref, coeff in terms:
            sl = self.block_slice(ref)
            c[sl] += svec(real_embedding(hermitize(np.asarray(coeff, dtype=complex)))) / 2.0
        self._c = c
        if self._compiled is not None:
            self._compiled["c"] = self.sense * self._pad(c)

    def with_objective(self, terms, sense: str = "min") -> "ConicProgram":
        """Cheap copy sharing constraint data; only the objective differs."""
        import copy

        clone = copy.copy(self)
        clone._compiled = dict(self._compiled) if self._compiled is not None else None
        clone.set_objective(terms, sense)
        return clone

    def _pad(self, vec: np.ndarray) -> np.ndarray:
        if vec.shape[0] == self.num_cols:
            return vec
        out = np.zeros(self.num_cols)
        out[: vec.shape[0]] = vec
        return out

    # -- compilation -------------------------------------------------------

    def compile(self) -> dict:
        """Assemble (A, b, c), normalize and rank-reduce the equality rows."""
        if self._compiled is not None:
            return self._compiled
        n = self.num_cols
        m = len(self._rows)
        a = np.zeros((m, n))
        for k, row in enumerate(self._rows):
            a[k, : row.shape[0]] = row
        b = np.array(self._rhs)
        c = self.sense * self._pad(self._c if self._c is not None else np.zeros(n))

        norms = np.linalg.norm(a, axis=1)
        keep = norms > 1e-14
        bad = (~keep) & (np.abs(b) > 1e-12)
        inconsistent_zero_row = bool(np.any(bad))
        d_inv = np.where(keep, 1.0 / np.where(keep, norms, 1.0), 0.0)
        a_n = a * d_inv[:, None]
        b_n = b * d_inv

        if m > 0:
            u, sv, vt = np.linalg.svd(a_n, full_matrices=False)
            rank_tol = (sv[0] if sv.size else 0.0) * max(m, n) * 1e-13
            r = int(np.sum(sv > max(rank_tol, 1e-13)))
            u_r = u[:, :r]
            a_red = (sv[:r, None] * vt[:r])
            b_red = u_r.T @ b_n
            b_perp = b_n - u_r @ b_red
        else:
            r = 0
            u_r = np.zeros((0, 0))
            a_red = np.zeros((0, n))
            b_red = np.zeros(0)
            b_perp = np.zeros(0)

        edims = [2 * blk.cdim for blk in self.blocks]
        blocks = _Blocks(edims)
        rr = a_red.shape[0]
        a_mats = [
            np.stack([smat(a_red[k, sl], ed) for k in range(rr)]) if rr
            else np.zeros((0, ed, ed))
            for sl, ed in zip(blocks.slices, edims)
        ]
        self._compiled = {
            "A": a_red, "b": b_red, "c": c,
            "u_r": u_r, "d_inv": d_inv,
            "b_perp": b_perp,
            "inconsistent_zero_row": inconsistent_zero_row,
            "edims": edims,
            "A_mats": a_mats,
        }
        return self._compiled

    # -- value helpers -----------------------------------------------------

    def unpack_blocks(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """svec vector -> complex Hermitian matrix per block."""
        out = {}
        for blk in self.blocks:
            v = x[self.block_slice(blk)]
            out[blk.name] = embedding_to_hermitian(smat(v, 2 * blk.cdim))
        return out

    def equality_dual(self, name: str, y: np.ndarray) -> np.ndarray | float:
        for g in self.eq_groups:
            if g.name == name:
                ys = y[g.rows]
                if g.scalar:
                    return float(ys[0])
                return hermitize(sum(yk * h for yk, h in zip(ys, g.probes)))
        raise KeyError(name)


@dataclass
class SolveResult:
    status: Status
    primal_value: float
    dual_value: float
    primal_blocks: dict[str, np.ndarray] = field(default_factory=dict)
    dual_multipliers: dict[str, object] = field(default_factory=dict)
    gap: float = np.nan
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    certificate: dict | None = None

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


# ---------------------------------------------------------------------------
# The homogeneous self-dual interior-point engine
# ---------------------------------------------------------------------------


def _trace_writer() -> Callable[[str], None] | None:
    target = os.environ.get("RMP_SOLVER_TRACE")
    if not target:
        return None
    if target in ("1", "stderr"):
        return lambda line: print(line, file=sys.stderr)
    fh = open(target, "a")
    return lambda line: (fh.write(line + "\n"), fh.flush())


class _Blocks:
    """Pack/unpack between the stacked svec vector and per-block matrices."""

    def __init__(self, edims: Sequence[int]):
        self.edims = list(edims)
        self.slices = []
        pos = 0
        for n in self.edims:
            self.slices.append(slice(pos, pos + svec_len(n)))
            pos += svec_len(n)
        self.total = pos

    def unpack(self, v):
        return [smat(v[sl], n) for sl, n in zip(self.slices, self.edims)]

    def pack(self, mats):
        return np.concatenate([svec(m) for m in mats]) if mats else np.zeros(0)

    def identity(self):
        return [np.eye(n) for n in self.edims]


def _min_step_to_boundary(m: np.ndarray, dm: np.ndarray) -> float:
    """sup { a : m + a*dm > 0 } for symmetric PD m."""
    try:
        l = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return 0.0
    w = sla.solve_triangular(l, dm, lower=True)
    w = sla.solve_triangular(l, w.T, lower=True)
    lam = float(np.linalg.eigvalsh(hermitize(w))[0].real)
    return np.inf if lam >= -1e-16 else -1.0 / lam


def solve(program: ConicProgram, settings: SolverSettings | None = None) -> SolveResult:
    """Solve the program, returning optimum with certificates or an honest
    Infeasible / Unbounded / NumericalFailure status."""
    settings = settings or SolverSettings()
    data = program.compile()
    trace = _trace_writer()
    sense = program.sense

    a, b, c = data["A"], data["b"], data["c"]
    edims = data["edims"]
    blocks = _Blocks(edims)
    r, n = a.shape

    if data["inconsistent_zero_row"]:
        return _infeasible_result(program, settings, np.zeros(r), note="zero row with nonzero rhs")
    if r > 0 and np.linalg.norm(data["b_perp"]) > settings.feas_tol * (1 + np.linalg.norm(b)):
        # equality system itself is inconsistent; Farkas direction is immediate
        return _infeasible_result(program, settings, None, note="inconsistent equalities",
                                  y_orig=data["d_inv"] * data["b_perp"])

    a_mats = data["A_mats"]

    x_m = blocks.identity()
    s_m = blocks.identity()
    y = np.zeros(r)
    tau, kappa = 1.0, 1.0
    nu = sum(edims) + 1.0

    norm_b = 1.0 + np.linalg.norm(b)
    norm_c = 1.0 + np.linalg.norm(c)

    def w_apply(vec, g_list):
        return blocks.pack([g @ mm @ g for g, mm in zip(g_list, blocks.unpack(vec))])

    status = Status.NUMERICAL_FAILURE
    it = 0
    fail_note = "iteration limit reached"
    x = blocks.pack(x_m)
    s = blocks.pack(s_m)
    best = None          # (score, x_m, s_m, y, tau, kappa)
    stall_count = 0

    for it in range(settings.max_iters):
        x = blocks.pack(x_m)
        s = blocks.pack(s_m)
        at_y = a.T @ y if r else np.zeros(n)
        g1 = at_y + s - c * tau                 # dual residual direction
        g2 = (a @ x if r else np.zeros(0)) - b * tau  # primal residual direction
        cx = float(c @ x)
        by = float(b @ y) if r else 0.0
        g3 = -cx + by - kappa
        gap_inner = float(x @ s) + tau * kappa
        mu = gap_inner / nu
        if not (np.isfinite(mu) and np.isfinite(cx) and np.isfinite(by)
                and np.all(np.isfinite(x)) and np.all(np.isfinite(s))):
            fail_note = "iterate diverged (non-finite values)"
            break

        # -- status tests on the scaled candidate
        pres = np.linalg.norm(g2 / tau) / norm_b if r else 0.0
        dres = np.linalg.norm(g1 / tau) / norm_c
        pobj, dobj = cx / tau, by / tau
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if trace:
            trace(f"iter {it:3d} mu={mu:9.2e} pres={pres:8.1e} dres={dres:8.1e} "
                  f"gap={relgap:8.1e} tau={tau:8.1e} kappa={kappa:8.1e}")
        score = max(pres / settings.feas_tol, dres / settings.feas_tol,
                    relgap / settings.gap_tol)
        if best is None or score < best[0]:
            best = (score, [m.copy() for m in x_m], [m.copy() for m in s_m],
                    y.copy(), tau, kappa)
        if score <= 1.0:
            status = Status.OPTIMAL
            break
        if it >= 1:
            if by > 0 and np.linalg.norm(at_y + s) / by <= settings.feas_tol:
                return _infeasible_result(program, settings, y / by, s_vec=s / by, iters=it)
            if -cx > 0 and (np.linalg.norm(a @ x) if r else 0.0) / (-cx) <= settings.feas_tol:
                return _unbounded_result(program, settings, x / (-cx), iters=it)

        # -- Nesterov-Todd scaling per block
        try:
            g_list, gh_list, ghi_list, lam_list = [], [], [], []
            for xb, sb in zip(x_m, s_m):
                ws, us = np.linalg.eigh(sb)
                if ws[0] <= 0:
                    raise np.linalg.LinAlgError("dual block lost definiteness")
                s_half = (us * np.sqrt(ws)) @ us.T
                s_ihalf = (us * (1.0 / np.sqrt(ws))) @ us.T
                mid = hermitize(s_half @ xb @ s_half)
                wm, um = np.linalg.eigh(mid)
                if wm[0] <= 0:
                    raise np.linalg.LinAlgError("primal block lost definiteness")
                g = hermitize(s_ihalf @ (um * np.sqrt(wm)) @ um.T @ s_ihalf)
                wg, ug = np.linalg.eigh(g)
                gh = (ug * np.sqrt(wg)) @ ug.T
                ghi = (ug * (1.0 / np.sqrt(wg))) @ ug.T
                lam = hermitize(gh @ sb @ gh)
                g_list.append(g)
                gh_list.append(gh)
                ghi_list.append(ghi)
                lam_list.append(lam)
            lam_eigs = [np.linalg.eigh(l) for l in lam_list]

            # KKT normal matrix M = A W A'
            if r:
                aw = np.hstack([
                    np.stack([svec(g @ a_mats[j][k] @ g) for k in range(r)])
                    if r else np.zeros((0, svec_len(ed)))
                    for j, (g, ed) in enumerate(zip(g_list, edims))
                ]) if n else np.zeros((r, 0))
                m_mat = hermitize(aw @ a.T)
                cho = None
                reg = 0.0
                for _ in range(4):
                    try:
                        cho = sla.cho_factor(m_mat + reg * np.eye(r), lower=True)
                        break
                    except np.linalg.LinAlgError:
                        reg = max(reg * 100, 1e-12 * (1 + np.trace(m_mat) / max(r, 1)))
                if cho is None:
                    raise np.linalg.LinAlgError("KKT factorization failed")

                def kkt_solve(rhs):
                    # one step of iterative refinement buys an extra digit
                    u = sla.cho_solve(cho, rhs)
                    u += sla.cho_solve(cho, rhs - m_mat @ u)
                    return u
            else:
                aw, kkt_solve = None, None

            w_c = w_apply(c, g_list)
            aw_c_b = (a @ w_c + b) if r else np.zeros(0)
            u2 = kkt_solve(aw_c_b) if r else np.zeros(0)

            # stable positive denominator for the dtau pivot:
            #   den = ||(I - Pi) W^{1/2} c||^2 + b' M^-1 b + kappa/tau
            def w_half(vec):
                return blocks.pack([gh @ mm @ gh for gh, mm in zip(gh_list, blocks.unpack(vec))])

            c_half = w_half(c)
            if r:
                q_vec = a @ w_c
                resid = c_half - w_half(a.T @ kkt_solve(q_vec))
                den = float(resid @ resid) + float(b @ kkt_solve(b)) + kappa / tau
            else:
                q_vec = np.zeros(0)
                den = float(c_half @ c_half) + kappa / tau

            def direction(eta, target_mu, corr_mats, corr_tk):
                rlam = []
                for (wl, ql), lam, corr in zip(lam_eigs, lam_list, corr_mats):
                    t = target_mu * np.eye(lam.shape[0]) - lam @ lam - corr
                    tq = ql.T @ t @ ql
                    denom = wl[:, None] + wl[None, :]
                    rlam.append(ql @ (2.0 * tq / denom) @ ql.T)
                h = blocks.pack([gh @ rl @ gh for gh, rl in zip(gh_list, rlam)])
                dx_part = h + eta * w_apply(g1, g_list)
                r_tk = target_mu - tau * kappa - corr_tk
                if r:
                    u1 = kkt_solve(-(a @ dx_part) - eta * g2)
                else:
                    u1 = np.zeros(0)
                num = (-eta * g3 + float(c @ dx_part)
                       + (float((q_vec - b) @ u1) if r else 0.0)
                       + r_tk / tau)
                dtau = num / den
                dy = u1 + dtau * u2 if r else np.zeros(0)
                ds = -eta * g1 - (a.T @ dy if r else 0.0) + c * dtau
                dx = dx_part + w_apply((a.T @ dy if r else 0.0) - c * dtau, g_list)
                dkappa = (r_tk - kappa * dtau) / tau
                return dx, dy, ds, dtau, dkappa

            zeros_corr = [np.zeros((ed, ed)) for ed in edims]
            dx_a, dy_a, ds_a, dtau_a, dkap_a = direction(1.0, 0.0, zeros_corr, 0.0)

            # affine step length
            dx_am, ds_am = blocks.unpack(dx_a), blocks.unpack(ds_a)
            alpha = 1.0
            for xb, dxb, sb, dsb in zip(x_m, dx_am, s_m, ds_am):
                alpha = min(alpha, _min_step_to_boundary(xb, dxb))
                alpha = min(alpha, _min_step_to_boundary(sb, dsb))
            if dtau_a < 0:
                alpha = min(alpha, -tau / dtau_a)
            if dkap_a < 0:
                alpha = min(alpha, -kappa / dkap_a)
            alpha = min(alpha, 1.0)

            gap_aff = (float((x + alpha * dx_a) @ (s + alpha * ds_a))
                       + (tau + alpha * dtau_a) * (kappa + alpha * dkap_a))
            sigma = min(1.0, max(gap_aff / gap_inner, 0.0)) ** 3
            sigma = min(max(sigma, 1e-8), 1.0 - 1e-8)

            # Mehrotra corrector in the scaled space
            corr = []
            for ghi, dxb, gh2, dsb in zip(ghi_list, dx_am, gh_list, ds_am):
                dlx = ghi @ dxb @ ghi
                dls = gh2 @ dsb @ gh2
                corr.append(hermitize(dlx @ dls))
            dx_c, dy_c, ds_c, dtau_c, dkap_c = direction(
                1.0 - sigma, sigma * mu, corr, dtau_a * dkap_a)

            dx_cm, ds_cm = blocks.unpack(dx_c), blocks.unpack(ds_c)
            step = np.inf
            for xb, dxb, sb, dsb in zip(x_m, dx_cm, s_m, ds_cm):
                step = min(step, _min_step_to_boundary(xb, dxb))
                step = min(step, _min_step_to_boundary(sb, dsb))
            if dtau_c < 0:
                step = min(step, -tau / dtau_c)
            if dkap_c < 0:
                step = min(step, -kappa / dkap_c)
            step = min(1.0, 0.99 * step)
            if not np.isfinite(step) or step <= 1e-13:
                fail_note = "step length collapsed"
                break
            stall_count = stall_count + 1 if step <= 1e-7 else 0
            if stall_count >= 3:
                fail_note = "no further progress (stalled steps)"
                break

            x_m = [hermitize(xb + step * dxb) for xb, dxb in zip(x_m, dx_cm)]
            s_m = [hermitize(sb + step * dsb) for sb, dsb in zip(s_m, ds_cm)]
            y = y + step * dy_c
            tau += step * dtau_c
            kappa += step * dkap_c
            # the model is homogeneous of degree one: rescale the iterate so
            # tau + kappa stays O(1) instead of drifting along the ray
            inv = 2.0 / (tau + kappa)
            x_m = [xb * inv for xb in x_m]
            s_m = [sb * inv for sb in s_m]
            y = y * inv
            tau *= inv
            kappa *= inv
            if trace:
                trace(f"        sigma={sigma:8.1e} step={step:6.3f}")
        except (np.linalg.LinAlgError, ValueError) as exc:
            fail_note = f"linear algebra failure: {exc}"
            break
    else:
        it = settings.max_iters

    if status != Status.OPTIMAL:
        # fall back to the best iterate seen, then try certificates once more
        if best is not None:
            _, x_m, s_m, y, tau, kappa = best
        x = blocks.pack(x_m)
        s = blocks.pack(s_m)
        by = float(b @ y) if r else 0.0
        cx = float(c @ x)
        if r and by > 0 and np.linalg.norm(a.T @ y + s) / by <= settings.feas_tol * 10:
            return _infeasible_result(program, settings, y / by, s_vec=s / by, iters=it)
        if -cx > 0 and (np.linalg.norm(a @ x) if r else 0.0) / (-cx) <= settings.feas_tol * 10:
            return _unbounded_result(program, settings, x / (-cx), iters=it)
        return SolveResult(Status.NUMERICAL_FAILURE, np.nan, np.nan, iterations=it,
                           residuals={"note": fail_note,
                                      "best_score": best[0] if best else np.inf})

    # -- optimal extraction
    xs = x / tau
    ys = y / tau
    ss = s / tau
    primal_blocks = program.unpack_blocks(xs)
    y_orig = data["d_inv"] * (data["u_r"] @ ys) if r else np.zeros(len(program._rows))
    duals: dict[str, object] = {}
    for g in program.eq_groups:
        duals[g.name] = program.equality_dual(g.name, sense * y_orig)
    for g in program.psd_groups:
        sl = program.block_slice(g.slack)
        duals[g.name] = 2.0 * embedding_to_hermitian(smat(sense * ss[sl], 2 * g.slack.cdim))

    pobj = sense * float(c @ xs)
    dobj = sense * float(b @ ys) if r else 0.0
    res = {
        "primal": float(np.linalg.norm((a @ xs) - b)) if r else 0.0,
        "dual": float(np.linalg.norm((a.T @ ys if r else 0.0) + ss - c)),
        "compl": float(xs @ ss),
        "relgap": abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj)),
    }
    return SolveResult(Status.OPTIMAL, pobj, dobj, primal_blocks, duals,
                       gap=abs(pobj - dobj), iterations=it, residuals=res)


def _infeasible_result(program, settings, y_red, s_vec=None, note="", iters=0,
                       y_orig=None) -> SolveResult:
    data = program.compile()
    if y_orig is None:
        y_orig = (data["d_inv"] * (data["u_r"] @ y_red)) if data["A"].shape[0] else np.zeros(0)
    cert = {"kind": "primal-infeasibility", "equality_ray": {}, "note": note}
    for g in program.eq_groups:
        cert["equality_ray"][g.name] = program.equality_dual(g.name, y_orig)
    if s_vec is not None:
        cert["dual_slack"] = program.unpack_blocks(s_vec)
    pv = np.inf if program.sense > 0 else -np.inf
    return SolveResult(Status.INFEASIBLE, pv, pv, certificate=cert, iterations=iters,
                       residuals={"note": note} if note else {})


def _unbounded_result(program, settings, x_ray, iters=0) -> SolveResult:
    cert = {"kind": "improving-ray", "ray_blocks": program.unpack_blocks(x_ray)}
    pv = -np.inf if program.sense > 0 else np.inf
    return SolveResult(Status.UNBOUNDED, pv, pv, certificate=cert, iterations=iters)
