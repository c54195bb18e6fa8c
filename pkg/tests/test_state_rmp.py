import numpy as np
import pytest

from freemarg.freesets import FreeSetSpec
from freemarg.herm import SubsystemLayout, SubsystemSet
from freemarg.solver import Status
from freemarg.state_rmp import (
    MarginalFamily,
    NoWitnessError,
    RmpInstance,
    activation_criterion,
    apply_free_operation,
    check_rfree_compatible,
    extract_witness,
    linear_max_over_set,
    product_channels_on_family,
    robustness,
    verify_w_uniqueness,
)
from freemarg.states import (
    ket,
    marginal_of,
    maximally_mixed,
    pure,
    qubit_layout,
    random_density,
    sym_bell,
    w_marginal,
    w_state,
)

from conftest import rand_kraus, rand_unitary

# regression constant: optimum tr(V*) of the W-marginal instance with a
# separable (PPT) target, cross-checked against a mixing-parameter bisection
W_INSTANCE_OPTIMUM = 1.0477756476

LAYOUT = qubit_layout("ABC")


def w_instance():
    fam = MarginalFamily(LAYOUT, [
        (("A", "B"), w_marginal(LAYOUT.sublayout(("A", "B")))),
        (("B", "C"), w_marginal(LAYOUT.sublayout(("B", "C")))),
    ])
    return RmpInstance(fam, FreeSetSpec.separable_ppt(SubsystemSet(LAYOUT, ("A", "C"))))


def white_noise_instance():
    mm = maximally_mixed(LAYOUT)
    fam = MarginalFamily(LAYOUT, [(("A", "B"), marginal_of(mm, "AB")),
                                  (("B", "C"), marginal_of(mm, "BC"))])
    return RmpInstance(fam, FreeSetSpec.separable_ppt(SubsystemSet(LAYOUT, ("A", "C"))))


def monogamy_instance():
    fam = MarginalFamily(LAYOUT, [
        (("A", "B"), sym_bell(LAYOUT.sublayout(("A", "B")))),
        (("B", "C"), sym_bell(LAYOUT.sublayout(("B", "C")))),
    ])
    return RmpInstance(fam, FreeSetSpec.all_states(SubsystemSet(LAYOUT, ("A", "B", "C"))))


class TestCompatibility:
    def test_white_noise_compatible(self):
        res = check_rfree_compatible(white_noise_instance())
        assert res.compatible
        assert res.residual < 1e-6
        # returned global state really has the required marginals
        assert np.max(np.abs(marginal_of(res.witness_state, "AB").entries - np.eye(4) / 4)) < 1e-6

    def test_monogamy_incompatible(self):
        res = check_rfree_compatible(monogamy_instance())
        assert not res.compatible
        assert res.certificate is not None

    def test_w_marginals_incompatible_with_separable_target(self):
        assert not check_rfree_compatible(w_instance()).compatible

    def test_w_marginals_compatible_without_free_restriction(self):
        inst = w_instance()
        all_states = RmpInstance(inst.marginals,
                                 FreeSetSpec.all_states(SubsystemSet(LAYOUT, ("A", "B", "C"))))
        res = check_rfree_compatible(all_states)
        assert res.compatible
        # the only compatible extension is the W state itself
        fid = np.real(np.trace(res.witness_state.entries @ w_state(LAYOUT).entries))
        assert fid == pytest.approx(1.0, abs=1e-5)


class TestRobustness:
    def test_compatible_instance_zero(self):
        res = robustness(white_noise_instance())
        assert res.status == Status.OPTIMAL
        assert res.value_log2 == pytest.approx(0.0, abs=1e-6)

    def test_w_instance_regression(self):
        res = robustness(w_instance())
        assert res.status == Status.OPTIMAL
        assert res.optimum == pytest.approx(W_INSTANCE_OPTIMUM, abs=1e-6)
        assert res.relaxation == "ppt-exact"
        # strong duality at the reported tolerance
        assert abs(res.solve_result.primal_value - res.solve_result.dual_value) <= \
            1e-7 * (1 + abs(res.solve_result.primal_value))

    def test_w_instance_bisection_cross_check(self):
        """Independent route: largest p with p*sigma + (1-p)*tau free-compatible,
        found by bisecting feasibility, matches 1/optimum coarsely."""
        from freemarg.solver import (ComposeMap, ConicProgram, PartialTraceMap,
                                     PartialTransposeMap, solve)

        inst = w_instance()

        def feasible(p):
            prog = ConicProgram()
            rho = prog.add_variable("rho", 8)
            prog.add_scalar_equality("tr", [(rho, np.eye(8))], 1.0)
            for sub, sigma in inst.marginals.entries:
                prog.add_psd_inequality(f"dom[{sub.members}]",
                                        [(rho, PartialTraceMap(LAYOUT, sub.members))],
                                        const=-p * sigma.entries)
            pt = ComposeMap(PartialTransposeMap(LAYOUT.sublayout(("A", "C")), ("C",)),
                            PartialTraceMap(LAYOUT, ("A", "C")))
            prog.add_psd_inequality("ppt", [(rho, pt)])
            prog.set_objective([(rho, np.eye(8))], "min")
            return solve(prog).status == Status.OPTIMAL

        lo, hi = 0.5, 1.0
        for _ in range(11):
            mid = (lo + hi) / 2
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        assert lo <= 1.0 / W_INSTANCE_OPTIMUM <= hi

    def test_monogamy_strictly_positive(self):
        res = robustness(monogamy_instance())
        assert res.status == Status.OPTIMAL
        assert res.optimum == pytest.approx(4.0 / 3.0, abs=1e-6)

    def test_relaxation_monotonicity(self):
        """Replacing the separable target set by all states never increases
        the measure (the free-compatible set only grows)."""
        inst = w_instance()
        r_ppt = robustness(inst).value_log2
        relaxed = RmpInstance(inst.marginals,
                              FreeSetSpec.all_states(SubsystemSet(LAYOUT, ("A", "C"))))
        r_all = robustness(relaxed).value_log2
        assert r_all <= r_ppt + 1e-7

    def test_infinite_when_free_set_is_pure_singleton(self):
        lay = LAYOUT
        target = SubsystemSet(lay, ("A", "C"))
        phi = pure(lay.sublayout(("A", "C")), ket(lay.sublayout(("A", "C")), "00"))
        with pytest.warns(UserWarning):
            free = FreeSetSpec.singleton(target, phi)
        fam = MarginalFamily(lay, [(("A", "B"), maximally_mixed(lay.sublayout(("A", "B"))))])
        res = robustness(RmpInstance(fam, free))
        assert res.status == Status.INFEASIBLE
        assert res.value_log2 == np.inf
        assert "pure singleton" in res.diagnostics or "full-rank" in res.diagnostics

    def test_strong_duality_on_random_full_rank_instances(self, rng):
        for trial in range(10):
            inst = _random_instance(rng, trial)
            res = robustness(inst)
            assert res.status == Status.OPTIMAL
            rel = abs(res.solve_result.primal_value - res.solve_result.dual_value) / (
                1 + abs(res.solve_result.primal_value))
            assert rel <= 1e-7


def _random_instance(rng, trial):
    """Random marginal family over ABC with a full-rank-member free set."""
    lay = LAYOUT
    kinds = trial % 4
    target = SubsystemSet(lay, ("A", "C"))
    if kinds == 0:
        free = FreeSetSpec.all_states(target)
    elif kinds == 1:
        free = FreeSetSpec.separable_ppt(target)
    elif kinds == 2:
        free = FreeSetSpec.incoherent(target)
    else:
        free = FreeSetSpec.singleton(target, random_density(lay.sublayout(("A", "C")), rng))
    if trial % 2 == 0:
        global_state = random_density(lay, rng)
        fam = MarginalFamily(lay, [(("A", "B"), marginal_of(global_state, "AB")),
                                   (("B", "C"), marginal_of(global_state, "BC"))])
    else:
        fam = MarginalFamily(lay, [(("A", "B"), random_density(lay.sublayout(("A", "B")), rng)),
                                   (("B", "C"), random_density(lay.sublayout(("B", "C")), rng))])
    return RmpInstance(fam, free)


class TestWitness:
    def test_w_instance_witness(self):
        inst = w_instance()
        w = extract_witness(inst)
        assert w.gap >= 1e-4
        assert w.free_sup <= 1 + 1e-6
        assert w.value_at_sigma == pytest.approx(W_INSTANCE_OPTIMUM, abs=1e-6)
        for _, block in w.blocks:
            assert block.min_eig() > -1e-9

    def test_witness_free_sup_reproducible(self):
        inst = w_instance()
        w = extract_witness(inst)
        again = linear_max_over_set([(sub, op.entries) for sub, op in w.blocks], inst)
        assert again == pytest.approx(w.free_sup, abs=1e-6)

    def test_monogamy_witness(self):
        w = extract_witness(monogamy_instance())
        assert w.gap >= 1e-4

    def test_compatible_instance_raises(self):
        with pytest.raises(NoWitnessError, match="no witness exists"):
            extract_witness(white_noise_instance())

    def test_witness_value_helper(self):
        inst = w_instance()
        w = extract_witness(inst)
        assert w.value_at(inst.marginals) == pytest.approx(w.value_at_sigma, abs=1e-12)


class TestLinearMax:
    def test_identity_objective_counts_blocks(self):
        inst = w_instance()
        val = linear_max_over_set([(("A", "B"), np.eye(4)), (("B", "C"), np.eye(4))], inst)
        assert val == pytest.approx(2.0, abs=1e-7)

    def test_singleton_feasible_set_is_exact(self, rng):
        lay = LAYOUT
        global_state = random_density(lay, rng)
        free = FreeSetSpec.singleton(SubsystemSet(lay, ("A", "B", "C")), global_state)
        inst = RmpInstance(MarginalFamily(lay, [(("A", "B"), marginal_of(global_state, "AB"))]),
                           free)
        obs = np.diag([0.5, -0.25, 1.5, 0.0])
        val = linear_max_over_set([(("A", "B"), obs)], inst)
        expect = float(np.trace(obs @ marginal_of(global_state, "AB").entries).real)
        assert val == pytest.approx(expect, abs=1e-6)

    def test_published_witness_strictly_below_sigma_value(self):
        from freemarg.discrimination import w_example_witness_block

        inst = w_instance()
        block = w_example_witness_block
        objs = [(("A", "B"), block(LAYOUT.sublayout(("A", "B"))).entries),
                (("B", "C"), block(LAYOUT.sublayout(("B", "C"))).entries)]
        sup = linear_max_over_set(objs, inst)
        at_sigma = sum(float(np.trace(o @ w_marginal().entries).real) for _, o in objs)
        assert at_sigma - sup >= 1e-4


class TestFreeOperations:
    def test_identity_channels_no_op(self):
        from freemarg.channel_rmp import ChannelSpec

        inst = w_instance()
        chans = []
        for sub, sigma in inst.marginals.entries:
            in_lay = SubsystemLayout([(l + "'", 2) for l in sub.members])
            chans.append((sub, ChannelSpec.identity(in_lay, sigma.layout)))
        out = apply_free_operation(inst.marginals, chans)
        for (s1, m1), (s2, m2) in zip(inst.marginals.entries, out.entries):
            assert np.max(np.abs(m1.entries - m2.entries)) < 1e-12

    def test_product_unitary_conjugates_marginals(self, rng):
        from freemarg.channel_rmp import ChannelSpec

        inst = w_instance()
        site = {l: ChannelSpec.from_unitary(rand_unitary(rng, 2),
                                            SubsystemLayout([(l + "'", 2)]),
                                            SubsystemLayout([(l, 2)]))
                for l in "ABC"}
        chans = product_channels_on_family(inst.marginals, site)
        out = apply_free_operation(inst.marginals, chans)
        # direct conjugation oracle
        us = {l: None for l in "ABC"}
        for l in "ABC":
            # recover the unitary from the Choi matrix: J = (U (x) I) Phi+ ...
            j = site[l].choi.entries
            vals, vecs = np.linalg.eigh(j)
            v = vecs[:, -1] * np.sqrt(2)
            us[l] = v.reshape(2, 2)  # column-major? row-major flatten of U/sqrt(d)
        for (sub, sigma), (_, evolved) in zip(inst.marginals.entries, out.entries):
            u = np.kron(us[sub.members[0]], us[sub.members[1]])
            direct = u @ sigma.entries @ u.conj().T
            assert np.max(np.abs(direct - evolved.entries)) < 1e-9

    def test_robustness_invariant_under_product_unitaries(self, rng):
        from freemarg.channel_rmp import ChannelSpec

        inst = w_instance()
        base = robustness(inst).value_log2
        for _ in range(3):
            site = {l: ChannelSpec.from_unitary(rand_unitary(rng, 2),
                                                SubsystemLayout([(l + "'", 2)]),
                                                SubsystemLayout([(l, 2)]))
                    for l in "ABC"}
            fam2 = apply_free_operation(inst.marginals,
                                        product_channels_on_family(inst.marginals, site))
            val = robustness(RmpInstance(fam2, inst.free)).value_log2
            assert val == pytest.approx(base, abs=1e-6)

    def test_robustness_never_increases_under_product_channels(self, rng):
        from freemarg.channel_rmp import ChannelSpec

        inst = w_instance()
        base = robustness(inst).value_log2
        for _ in range(3):
            site = {l: ChannelSpec.from_kraus(rand_kraus(rng, 2, 2, 2),
                                              SubsystemLayout([(l + "'", 2)]),
                                              SubsystemLayout([(l, 2)]))
                    for l in "ABC"}
            fam2 = apply_free_operation(inst.marginals,
                                        product_channels_on_family(inst.marginals, site))
            val = robustness(RmpInstance(fam2, inst.free)).value_log2
            assert val <= base + 1e-6


class TestWUniqueness:
    def test_both_extrema_are_one(self):
        res = verify_w_uniqueness()
        assert res["max_fid"] == pytest.approx(1.0, abs=1e-6)
        assert res["min_fid"] == pytest.approx(1.0, abs=1e-6)

    def test_relaxing_one_marginal_breaks_uniqueness(self):
        # replacing the BC pin by a compatible non-W marginal admits non-W
        # extensions, so the minimum fidelity drops below one.  (The literal
        # replacement by I/4 is infeasible: the B marginals disagree.)
        lay = LAYOUT
        alt = marginal_of(_product_extension(), "BC")
        fam = MarginalFamily(lay, [(("A", "B"), w_marginal(lay.sublayout(("A", "B")))),
                                   (("B", "C"), alt)])
        res = verify_w_uniqueness(family=fam)
        assert res["min_fid"] < 1 - 1e-4


def _product_extension():
    """W marginal on AB tensored with a maximally mixed C qubit."""
    from freemarg.herm import DensityMatrix, tensor

    w_ab = w_marginal(LAYOUT.sublayout(("A", "B")))
    mixed_c = maximally_mixed(LAYOUT.sublayout(("C",)))
    return DensityMatrix(tensor(w_ab.op, mixed_c.op))


class TestActivation:
    def test_w_marginal_value(self):
        val = activation_criterion(w_marginal(qubit_layout("AC")), samples=50)
        assert val == pytest.approx(2.0 / 3.0, abs=1e-9)
        assert val > 0.5

    def test_white_noise_flat(self):
        val = activation_criterion(maximally_mixed(qubit_layout("AC")), samples=30)
        assert val == pytest.approx(0.25, abs=1e-9)

    def test_perfect_overlap(self):
        lay = qubit_layout("AC")
        bell = pure(lay, ket(lay, "01") + ket(lay, "10"))
        assert activation_criterion(bell, samples=10) == pytest.approx(1.0, abs=1e-9)

    def test_iterative_not_worse_than_grid(self):
        rho = w_marginal(qubit_layout("AC"))
        grid = activation_criterion(rho, search="grid", samples=20, seed=3)
        it = activation_criterion(rho, search="iterative", samples=20, seed=3)
        assert it >= grid - 1e-12


class TestReductionToPlainMarginalProblem:
    """target = whole system with all states free recovers plain marginal
    compatibility."""

    def test_compatible_families_by_construction(self, rng):
        free = FreeSetSpec.all_states(SubsystemSet(LAYOUT, ("A", "B", "C")))
        for _ in range(5):
            rho = random_density(LAYOUT, rng)
            fam = MarginalFamily(LAYOUT, [(("A", "B"), marginal_of(rho, "AB")),
                                          (("B", "C"), marginal_of(rho, "BC"))])
            assert check_rfree_compatible(RmpInstance(fam, free)).compatible

    def test_monogamy_counterexample(self):
        assert not check_rfree_compatible(monogamy_instance()).compatible

    def test_zero_robustness_iff_compatible(self, rng):
        free = FreeSetSpec.all_states(SubsystemSet(LAYOUT, ("A", "B", "C")))
        rho = random_density(LAYOUT, rng)
        fam = MarginalFamily(LAYOUT, [(("A", "B"), marginal_of(rho, "AB")),
                                      (("B", "C"), marginal_of(rho, "BC"))])
        assert robustness(RmpInstance(fam, free)).value_log2 == pytest.approx(0.0, abs=1e-6)
        assert robustness(monogamy_instance()).value_log2 > 1e-3


class TestIncoherentTarget:
    def test_rotated_basis_robustness(self, rng):
        """A family whose only extension has coherence in the rotated basis
        is incompatible; the measure goes positive and the witness is sound."""
        u = rand_unitary(rng, 4)
        free_rot = FreeSetSpec.incoherent(SubsystemSet(LAYOUT, ("A", "C")), basis=u)
        inst = RmpInstance(w_instance().marginals, free_rot)
        res = robustness(inst)
        assert res.status == Status.OPTIMAL
        # computational-basis-incoherent target for comparison
        free_comp = FreeSetSpec.incoherent(SubsystemSet(LAYOUT, ("A", "C")))
        res2 = robustness(RmpInstance(w_instance().marginals, free_comp))
        assert res2.status == Status.OPTIMAL
        assert res2.value_log2 > 1e-3  # the unique extension's AC marginal is coherent
        if res.value_log2 > 1e-6:
            w = extract_witness(inst, res)
            assert w.gap > 0


class TestFullySeparableTarget:
    def test_w_family_with_global_separable_target(self):
        """Target = entire system with full separability (PPT intersection
        across every bipartition): the W marginals force entanglement."""
        free = FreeSetSpec.separable_ppt(SubsystemSet(LAYOUT, ("A", "B", "C")))
        assert len([c for c in free.emit_constraints()]) == 4  # PSD + 3 cuts
        inst = RmpInstance(w_instance().marginals, free)
        res = robustness(inst)
        assert res.status == Status.OPTIMAL
        assert res.value_log2 > 1e-3
        assert res.relaxation == "ppt-outer"
        w = extract_witness(inst, res)
        assert w.gap >= 1e-4

    def test_white_noise_family_is_fully_separable_compatible(self):
        free = FreeSetSpec.separable_ppt(SubsystemSet(LAYOUT, ("A", "B", "C")))
        mm = maximally_mixed(LAYOUT)
        fam = MarginalFamily(LAYOUT, [(("A", "B"), marginal_of(mm, "AB")),
                                      (("B", "C"), marginal_of(mm, "BC"))])
        assert robustness(RmpInstance(fam, free)).value_log2 == pytest.approx(0.0, abs=1e-6)


class TestSingleBlockReduction:
    """One block covering the whole system with a separable target recovers
    the plain (generalized) entanglement robustness of that state."""

    def test_qubit_qutrit_entangled(self, rng):
        lay = SubsystemLayout([("A", 2), ("B", 3)])
        v = np.zeros(6, dtype=complex)
        v[0] = v[4] = 1 / np.sqrt(2)  # (|00> + |11>)/sqrt(2) inside 2x3
        from freemarg.states import pure

        psi = pure(lay, v)
        free = FreeSetSpec.separable_ppt(SubsystemSet(lay, ("A", "B")))
        inst = RmpInstance(MarginalFamily(lay, [(("A", "B"), psi)]), free)
        res = robustness(inst)
        assert res.status == Status.OPTIMAL
        # generalized robustness of a maximally-entangled qubit pair: 2^R = 2
        assert res.optimum == pytest.approx(2.0, abs=1e-6)
        assert res.relaxation == "ppt-exact"

    def test_qubit_qutrit_product(self, rng):
        lay = SubsystemLayout([("A", 2), ("B", 3)])
        from freemarg.herm import DensityMatrix, tensor

        a = random_density(SubsystemLayout([("A", 2)]), rng)
        b = random_density(SubsystemLayout([("B", 3)]), rng)
        prod = DensityMatrix(tensor(a.op, b.op))
        free = FreeSetSpec.separable_ppt(SubsystemSet(lay, ("A", "B")))
        inst = RmpInstance(MarginalFamily(lay, [(("A", "B"), prod)]), free)
        assert robustness(inst).value_log2 == pytest.approx(0.0, abs=1e-6)
