import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utilcal import (
    ConfigError,
    DomainError,
    FiniteDistribution,
    LabeledPredictions,
    PatchConfig,
    PatchRecord,
    PatchSequence,
    UtilitySpec,
    apply_patch,
    brier,
    comb_pool,
    find_worst_witness,
    fit,
    gen_miscalibrated,
    gen_two_point,
    project_simplex,
    split,
    transform,
    uc_hat,
)
from utilcal.patching import project_simplex_rows
from utilcal.utilities import derive_rng


def random_dist(rng, S, C):
    sup = -np.log1p(-rng.random((S, C)))
    sup /= sup.sum(axis=1, keepdims=True)
    q = -np.log1p(-rng.random((S, C)))
    q /= q.sum(axis=1, keepdims=True)
    w = -np.log1p(-rng.random(S))
    w /= w.sum()
    return FiniteDistribution(sup, w, q)


def perfect_predictor(n=24, C=3):
    probs = np.eye(C)[np.arange(n) % C]
    return LabeledPredictions(probs, np.arange(n) % C)


class TestProjectSimplex:
    def test_identity_on_simplex(self):
        x = np.array([0.2, 0.3, 0.5])
        assert np.max(np.abs(project_simplex(x) - x)) <= 1e-15

    def test_symmetric_point(self):
        assert project_simplex(np.array([1.0, 1.0])).tolist() == [0.5, 0.5]

    def test_vertex_with_kkt(self):
        out = project_simplex(np.array([2.0, 0.0, 0.0]))
        assert out.tolist() == [1.0, 0.0, 0.0]
        # KKT certificate: tau = 1 reproduces the output
        assert np.array_equal(np.maximum(np.array([2.0, 0.0, 0.0]) - 1.0, 0.0), out)

    def test_against_dense_grid_search(self):
        # coarse grid over the C=3 simplex as an independent optimality check
        rng = np.random.default_rng(0)
        grid = []
        steps = 120
        for i in range(steps + 1):
            for j in range(steps + 1 - i):
                grid.append((i / steps, j / steps, (steps - i - j) / steps))
        grid = np.array(grid)
        for _ in range(5):
            x = rng.uniform(-2, 2, 3)
            out = project_simplex(x)
            d_out = np.sum((x - out) ** 2)
            d_grid = np.min(np.sum((x - grid) ** 2, axis=1))
            assert d_out <= d_grid + 1e-4

    @given(st.integers(0, 10**6), st.integers(2, 10))
    @settings(max_examples=100, deadline=None)
    def test_kkt_and_nonexpansive(self, seed, C):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-3, 3, C)
        out = project_simplex(x)
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out >= 0)
        tau = np.max(x - out)
        assert np.max(np.abs(out - np.maximum(x - tau, 0.0))) <= 1e-10
        y = rng.dirichlet(np.ones(C))
        assert np.linalg.norm(y - out) <= np.linalg.norm(y - x) + 1e-10

    def test_rows_matches_single(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-2, 2, (50, 6))
        rows = project_simplex_rows(X)
        for i in range(50):
            assert rows[i] == pytest.approx(project_simplex(X[i]), abs=1e-14)


class TestFindWorstWitness:
    def test_single_utility_pool(self):
        d = gen_two_point(20)
        spec = UtilitySpec.top_class()
        witness, err = find_worst_witness(d, [spec])
        est = uc_hat(d, spec)
        assert err == est.value
        assert (witness.lo, witness.hi) == est.interval
        assert witness.sign == -est.sign

    def test_perfect_predictor_zero(self):
        _, err = find_worst_witness(perfect_predictor(), comb_pool(3))
        assert err == 0.0

    def test_two_point_pool_maximum(self):
        # exhaustive evaluation of the small pool: class 1's confidence is
        # 0.275 against a 0.95 true frequency, the largest violation
        d = gen_two_point(20)
        pool = comb_pool(3) + [UtilitySpec.top_class()]
        witness, err = find_worst_witness(d, pool)
        per_spec = [uc_hat(d, s).value for s in pool]
        assert err == max(per_spec)
        assert err == pytest.approx(0.3375, abs=1e-12)
        assert witness.spec.label() == "class_wise_1"

    def test_empty_pool(self):
        with pytest.raises(DomainError):
            find_worst_witness(perfect_predictor(), [])


class TestApplyPatch:
    def test_outside_interval_identity(self):
        rec = PatchRecord(UtilitySpec.top_class(), 0.8, 0.9, 1, 0.1)
        p = np.array([0.5, 0.3, 0.2])
        assert np.array_equal(apply_patch(p, rec), p)

    def test_zero_step_rejected(self):
        with pytest.raises(DomainError):
            PatchRecord(UtilitySpec.top_class(), 0.4, 0.5, 1, 0.0)

    def test_two_point_row_moves_against_violation(self):
        # witness direction that lowers the over-confident 0.45 prediction
        rec = PatchRecord(UtilitySpec.top_class(), 0.45, 0.45, 1, 0.1)
        p = np.array([0.45, 0.275, 0.275])
        out = apply_patch(p, rec)
        expected = project_simplex(p - 0.1 * np.array([1.0, 0.0, 0.0]))
        assert out == pytest.approx(expected, abs=1e-15)
        assert out[0] < 0.45
        assert abs(out.sum() - 1.0) <= 1e-12 and np.all(out >= 0)

    def test_interval_validation(self):
        with pytest.raises(DomainError):
            PatchRecord(UtilitySpec.top_class(), 0.9, 0.1, 1, 0.1)

    def test_sign_validation(self):
        with pytest.raises(DomainError):
            PatchRecord(UtilitySpec.top_class(), 0.1, 0.9, 2, 0.1)


class TestFit:
    def test_already_calibrated_stops_immediately(self):
        seq = fit(perfect_predictor(), PatchConfig(epsilon=0.01))
        assert seq.records == ()
        assert seq.history == ()

    def test_two_point_single_utility_descent(self):
        d = gen_two_point(200)
        cfg = PatchConfig(pool=[UtilitySpec.top_class()], epsilon=0.01)
        seq = fit(d, cfg)
        out = transform(d, seq)
        assert uc_hat(out, UtilitySpec.top_class()).value <= 0.01
        assert seq.history[-1].brier_after < seq.history[0].brier_before
        C = 3
        for h in seq.history:
            assert h.brier_before - h.brier_after >= h.err**2 / C - 1e-10

    def test_one_theoretical_step_reduces_witnessed_violation(self):
        d = gen_two_point(20)
        witness, err = find_worst_witness(d, [UtilitySpec.top_class()])
        rec = PatchRecord(witness.spec, witness.lo, witness.hi, witness.sign, err / 3)
        patched = transform(d, PatchSequence((rec,), 3))
        assert (
            uc_hat(patched, UtilitySpec.top_class()).value
            < uc_hat(d, UtilitySpec.top_class()).value
        )

    def test_miscalibrated_comb_pool_converges(self):
        dist = random_dist(derive_rng(17), 4, 5)
        d, _ = gen_miscalibrated(dist, 2000, seed=1)
        cfg = PatchConfig(epsilon=0.02)
        seq = fit(d, cfg)
        briers = [h.brier_after for h in seq.history]
        assert all(a >= b for a, b in zip(briers, briers[1:]))
        out = transform(d, seq)
        assert max(uc_hat(out, s).value for s in comb_pool(5)) <= 0.02

    def test_termination_cap(self):
        d = gen_two_point(40)
        eps = 0.05
        seq = fit(d, PatchConfig(pool=[UtilitySpec.top_class()], epsilon=eps))
        assert len(seq.records) <= math.ceil(2 * 3 / eps**2) + 1

    def test_max_iters_respected(self):
        d = gen_two_point(40)
        seq = fit(d, PatchConfig(pool=[UtilitySpec.top_class()],
                                 epsilon=1e-6, max_iters=5))
        assert len(seq.records) == 5

    def test_armijo_descent(self):
        dist = random_dist(derive_rng(23), 3, 4)
        d, _ = gen_miscalibrated(dist, 1500, seed=2)
        seq = fit(d, PatchConfig(epsilon=0.02, step_rule="armijo"))
        briers = [h.brier_after for h in seq.history]
        assert all(a >= b for a, b in zip(briers, briers[1:]))
        out = transform(d, seq)
        assert max(uc_hat(out, s).value for s in comb_pool(4)) <= 0.02

    def test_augmented_pool_is_deterministic(self):
        d = gen_two_point(40)
        cfg = PatchConfig(
            epsilon=0.05,
            augment_families=("linear", "rank"),
            augment_count=8,
            augment_seed=3,
        )
        a = fit(d, cfg)
        b = fit(d, cfg)
        assert a.to_json_dict() == b.to_json_dict()

    def test_bad_epsilon(self):
        with pytest.raises(ConfigError):
            fit(perfect_predictor(), PatchConfig(epsilon=0.0))

    def test_bad_step_rule(self):
        with pytest.raises(ConfigError):
            fit(perfect_predictor(), PatchConfig(step_rule="fixed"))


class TestTransform:
    def test_empty_sequence_identity(self):
        d = gen_two_point(20)
        out = transform(d.probs, PatchSequence((), 3))
        assert np.array_equal(out, d.probs)

    def test_replay_matches_fit_bitwise(self):
        d = gen_two_point(200)
        seq = fit(d, PatchConfig(pool=[UtilitySpec.top_class()], epsilon=0.01))
        replayed = transform(d.probs, seq)
        assert brier(LabeledPredictions(replayed, d.labels)) == pytest.approx(
            seq.history[-1].brier_after, abs=1e-15
        )
        twice = transform(d.probs, seq)
        assert np.array_equal(replayed, twice)

    def test_rows_stay_on_simplex(self):
        dist = random_dist(derive_rng(5), 4, 6)
        d, _ = gen_miscalibrated(dist, 1000, seed=4)
        seq = fit(d, PatchConfig(epsilon=0.03))
        out = transform(d.probs, seq)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-9
        assert np.min(out) >= 0.0

    def test_dimension_mismatch(self):
        seq = PatchSequence((), 4)
        with pytest.raises(DomainError):
            transform(np.ones((3, 3)) / 3, seq)

    def test_generalization_to_held_out_split(self):
        # patch maps fitted on one half should reduce pool error on the other
        improved = 0
        seeds = 100
        for s in range(seeds):
            dist = random_dist(derive_rng(1000, s), 3, 3)
            data, _ = gen_miscalibrated(dist, 4000, seed=s)
            parts = split(data, 0.5, seed=s)
            seq = fit(parts.calibration, PatchConfig(epsilon=0.03))
            before = max(
                uc_hat(parts.test, u).value for u in comb_pool(3)
            )
            patched = transform(parts.test, seq)
            after = max(uc_hat(patched, u).value for u in comb_pool(3))
            improved += after < before
        assert improved >= 90


class TestPatchSequenceJson:
    def test_roundtrip(self, tmp_path):
        d = gen_two_point(40)
        seq = fit(d, PatchConfig(pool=[UtilitySpec.top_class()], epsilon=0.05))
        path = tmp_path / "seq.json"
        seq.save(path)
        again = PatchSequence.load(path)
        assert again.C == seq.C
        assert len(again.records) == len(seq.records)
        out_a = transform(d.probs, seq)
        out_b = transform(d.probs, again)
        assert np.array_equal(out_a, out_b)

    def test_json_field_names(self):
        rec = PatchRecord(UtilitySpec.top_class(), 0.1, 0.2, -1, 0.05)
        seq = PatchSequence((rec,), 3, (tuple()))
        d = seq.to_json_dict()
        assert set(d) == {"C", "records", "history"}
        assert set(d["records"][0]) == {"spec", "lo", "hi", "sign", "step"}
