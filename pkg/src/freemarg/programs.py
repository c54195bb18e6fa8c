"""Internal helpers translating free-set descriptors into solver constraints."""

from __future__ import annotations

import numpy as np

from .freesets import DiagonalOnly, FreeSetSpec, ProportionalTo, Psd, PsdPartialTranspose
from .solver import (
    BlockRef,
    ComposeMap,
    ConicProgram,
    IdentityMap,
    LinMap,
    PartialTransposeMap,
    TraceTimesMap,
    hermitian_basis,
)


def attach_free_state_cone(prog: ConicProgram, var: BlockRef, extract: LinMap | None,
                           free: FreeSetSpec, prefix: str = "free"):
    """Constrain extract(V) (default: V itself) into cone(free set).

    The variable's PSD cone membership already gives extract(V) >= 0 for
    trace-like extraction maps, so bare `Psd` descriptors add nothing here.
    The trace scale of the cone is tr(V): for a trace-preserving extraction
    map tr(extract(V)) = tr(V), which the `ProportionalTo` rows rely on.
    """
    sub = free.target.sublayout()
    var_dim = var.cdim

    def compose(outer: LinMap) -> LinMap:
        return outer if extract is None else ComposeMap(outer, extract)

    for k, con in enumerate(free.emit_constraints()):
        if isinstance(con, Psd):
            continue
        if isinstance(con, PsdPartialTranspose):
            pt = PartialTransposeMap(sub, con.part)
            prog.add_psd_inequality(f"{prefix}.ppt[{','.join(con.part)}]",
                                    [(var, compose(pt))])
        elif isinstance(con, DiagonalOnly):
            d = sub.total_dim
            probes = [h for h in hermitian_basis(d)[d:]]  # off-diagonal part only
            for j, h in enumerate(probes):
                if con.basis is not None:
                    h = con.basis @ h @ con.basis.conj().T
                lifted = h if extract is None else extract.adjoint(h)
                prog.add_scalar_equality(f"{prefix}.diag[{j}]", [(var, lifted)], 0.0)
        elif isinstance(con, ProportionalTo):
            ext = extract if extract is not None else IdentityMap(var_dim)
            prog.add_matrix_equality(
                f"{prefix}.pin",
                [(var, ext), (var, TraceTimesMap(var_dim, -con.state))],
                np.zeros((sub.total_dim, sub.total_dim)))
        else:
            raise TypeError(f"unknown cone constraint {con!r}")
