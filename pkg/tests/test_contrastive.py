import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastlab.contrastive import (
    ContrastInstance,
    build_mixed_logits,
    build_mixed_targets,
    contrastive_loss,
    infonce_loss,
    mix_rows,
    mixed_query_loss,
    mixup_half_batch,
    simclr_contrastive_loss,
    total_loss,
)
from contrastlab.errors import ConfigurationError, ContractError
from contrastlab.numerics import finite_difference_check, l2_normalize_rows, seeded_rng
from oracles import infonce_direct, mixed_direct, simclr_direct


def unit_rows(rng, rows, cols):
    return l2_normalize_rows(rng.normal(size=(rows, cols)))


class TestMixup:
    def test_lambda_one_returns_first_row(self):
        x = np.arange(8.0).reshape(4, 2)
        mixed = mix_rows(x, [1.0, 1.0])
        assert np.array_equal(mixed, x[:2])

    def test_lambda_zero_returns_partner_row(self):
        x = np.arange(8.0).reshape(4, 2)
        mixed = mix_rows(x, [0.0, 0.0])
        assert np.array_equal(mixed, x[2:])

    def test_quarter_mix_hand_value(self):
        x = np.array([[1.0, 2.0], [0.0, 0.0], [5.0, 6.0], [0.0, 0.0]])
        mixed = mix_rows(x, [0.25, 0.5])
        assert np.array_equal(mixed[0], [0.25 * 1 + 0.75 * 5, 0.25 * 2 + 0.75 * 6])

    def test_rejects_odd_batch(self):
        with pytest.raises(ConfigurationError):
            mixup_half_batch(np.ones((3, 2)), seeded_rng(0))

    def test_lambdas_in_open_interval(self):
        rng = seeded_rng(1)
        mixed = mixup_half_batch(rng.normal(size=(64, 5)), rng)
        assert ((mixed.lambdas > 0.0) & (mixed.lambdas < 1.0)).all()

    @given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_mix_matches_definition_exactly(self, half, dim, seed):
        rng = seeded_rng(seed)
        x = rng.normal(size=(2 * half, dim))
        mixed = mixup_half_batch(x, seeded_rng(seed + 1))
        lam = mixed.lambdas[:, None]
        assert np.array_equal(mixed.x_mix, lam * x[:half] + (1.0 - lam) * x[half:])


class TestInfoNCE:
    def test_empty_queue_is_degenerate_zero(self):
        rng = seeded_rng(2)
        res = infonce_loss(unit_rows(rng, 3, 4), unit_rows(rng, 3, 4), np.zeros((0, 4)), 0.2)
        assert res.value == 0.0
        assert res.degenerate
        assert np.array_equal(res.grad, np.zeros((3, 4)))

    def test_uniform_logits_give_log_k_plus_one(self):
        # positive and negatives all score 1: loss = log(K+1)
        e1 = np.zeros((1, 3))
        e1[0, 0] = 1.0
        for k in (1, 3, 7):
            res = infonce_loss(e1, e1, np.repeat(e1, k, axis=0), 0.2)
            assert res.value == pytest.approx(math.log(k + 1), rel=0, abs=1e-12)

    def test_direct_summation_small_instance(self):
        queries = np.array([[1.0, 0.0], [0.0, 1.0]])
        keys = np.array([[0.6, 0.8], [1.0, 0.0]])
        queue = np.array([[0.0, -1.0], [-1.0, 0.0]])
        res = infonce_loss(queries, keys, queue, 0.2)
        assert res.value == pytest.approx(
            infonce_direct(queries, keys, queue, 0.2), rel=0, abs=1e-12
        )

    def test_oracle_equivalence_random_instances(self):
        rng = seeded_rng(3)
        for _ in range(25):
            b = int(rng.integers(1, 9))
            k = int(rng.integers(1, 9))
            c = int(rng.integers(1, 5))
            queries, keys = unit_rows(rng, b, c), unit_rows(rng, b, c)
            queue = unit_rows(rng, k, c)
            res = infonce_loss(queries, keys, queue, 0.2)
            assert res.value == pytest.approx(
                infonce_direct(queries, keys, queue, 0.2), rel=0, abs=1e-12
            )

    def test_queue_permutation_invariance(self):
        rng = seeded_rng(4)
        queries, keys = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)
        queue = unit_rows(rng, 6, 3)
        base = infonce_loss(queries, keys, queue, 0.2)
        shuffled = infonce_loss(queries, keys, queue[rng.permutation(6)], 0.2)
        assert shuffled.value == pytest.approx(base.value, rel=0, abs=1e-12)

    def test_rejects_bad_temperature(self):
        rng = seeded_rng(5)
        with pytest.raises(ConfigurationError):
            infonce_loss(unit_rows(rng, 2, 2), unit_rows(rng, 2, 2), unit_rows(rng, 2, 2), 0.0)

    def test_instance_validates_norms(self):
        rng = seeded_rng(6)
        with pytest.raises(ContractError):
            ContrastInstance(rng.normal(size=(2, 3)) * 2, unit_rows(rng, 2, 3),
                             unit_rows(rng, 2, 3), 0.2)

    def test_instance_wrapper_matches_core(self):
        rng = seeded_rng(7)
        inst = ContrastInstance(unit_rows(rng, 3, 4), unit_rows(rng, 3, 4),
                                unit_rows(rng, 5, 4), 0.2)
        assert contrastive_loss(inst).value == infonce_loss(
            inst.queries, inst.keys, inst.queue, 0.2
        ).value


class TestSimclr:
    def test_identical_views_on_orthonormal_basis(self):
        tau = 0.2
        v = np.eye(2)
        res = simclr_contrastive_loss(v, v, tau)
        sigma = math.exp(1 / tau) / (math.exp(1 / tau) + 1.0)
        assert res.value == pytest.approx(-math.log(sigma), rel=0, abs=1e-12)

    def test_all_rows_identical_gives_log_b(self):
        row = np.zeros((1, 3))
        row[0, 0] = 1.0
        for b in (2, 4, 6):
            v = np.repeat(row, b, axis=0)
            res = simclr_contrastive_loss(v, v, 0.5)
            assert res.value == pytest.approx(math.log(b), rel=0, abs=1e-12)

    def test_oracle_equivalence(self):
        rng = seeded_rng(8)
        for _ in range(25):
            b = int(rng.integers(2, 9))
            c = int(rng.integers(1, 5))
            queries, keys = unit_rows(rng, b, c), unit_rows(rng, b, c)
            res = simclr_contrastive_loss(queries, keys, 0.2)
            assert res.value == pytest.approx(simclr_direct(queries, keys, 0.2), rel=0, abs=1e-12)

    def test_gradient_check_both_sides(self):
        rng = seeded_rng(9)
        queries, keys = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)

        def f_queries(flat):
            res = simclr_contrastive_loss(np.reshape(flat, (4, 3)), keys, 0.2)
            return res.value, res.grad_queries.ravel()

        def f_keys(flat):
            res = simclr_contrastive_loss(queries, np.reshape(flat, (4, 3)), 0.2)
            return res.value, res.grad_keys.ravel()

        assert finite_difference_check(f_queries, queries.ravel()).max_relative_error < 1e-6
        assert finite_difference_check(f_keys, keys.ravel()).max_relative_error < 1e-6

    def test_rejects_singleton_batch(self):
        with pytest.raises(ConfigurationError):
            simclr_contrastive_loss(np.ones((1, 2)), np.ones((1, 2)), 0.2)


class TestMixedLogits:
    def test_empty_queue_shape(self):
        rng = seeded_rng(10)
        logits = build_mixed_logits(unit_rows(rng, 2, 3), unit_rows(rng, 4, 3),
                                    np.zeros((0, 3)), 0.05)
        assert logits.shape == (2, 4)

    def test_orthonormal_picks_single_column(self):
        keys = np.eye(4)[:4]
        mixed = keys[2:3].copy()
        logits = build_mixed_logits(mixed, keys, np.zeros((0, 4)), 1.0)
        expected = np.zeros((1, 4))
        expected[0, 2] = 1.0
        assert np.allclose(logits, expected, rtol=0, atol=1e-15)

    def test_matches_per_entry_dot_products(self):
        rng = seeded_rng(11)
        mixed = unit_rows(rng, 2, 5)
        keys = unit_rows(rng, 4, 5)
        queue = unit_rows(rng, 2, 5)
        logits = build_mixed_logits(mixed, keys, queue, 0.05)
        stacked = np.concatenate([keys, queue])
        for i in range(2):
            for j in range(6):
                expected = sum(mixed[i, d] * stacked[j, d] for d in range(5)) / 0.05
                assert logits[i, j] == pytest.approx(expected, rel=0, abs=1e-12)

    def test_rejects_bad_temperature(self):
        with pytest.raises(ConfigurationError):
            build_mixed_logits(np.ones((1, 2)), np.ones((2, 2)), np.zeros((0, 2)), -1.0)


class TestMixedTargets:
    def test_layout_weights_both_sources_and_zeroes_queue(self):
        targets = build_mixed_targets([0.3, 0.7], 4, 2)
        assert np.array_equal(targets[0], [0.3, 0.0, 1.0 - 0.3, 0.0, 0.0, 0.0])
        assert np.array_equal(targets[1], [0.0, 0.7, 0.0, 1.0 - 0.7, 0.0, 0.0])
        assert np.allclose(targets, [[0.3, 0, 0.7, 0, 0, 0], [0, 0.7, 0, 0.3, 0, 0]],
                           rtol=0, atol=1e-15)

    def test_no_queue_columns_when_empty(self):
        assert build_mixed_targets([0.5], 2, 0).shape == (1, 2)

    def test_rejects_endpoint_lambdas(self):
        with pytest.raises(ContractError):
            build_mixed_targets([0.0, 0.5], 4, 0)
        with pytest.raises(ContractError):
            build_mixed_targets([0.5, 1.0], 4, 0)

    @given(st.lists(st.floats(1e-6, 1.0 - 1e-6), min_size=1, max_size=8),
           st.integers(0, 16))
    @settings(max_examples=40, deadline=None)
    def test_rows_sum_to_exactly_one_with_two_nonzeros(self, lambdas, queue_size):
        targets = build_mixed_targets(lambdas, 2 * len(lambdas), queue_size)
        assert (targets.sum(axis=1) == 1.0).all()
        assert ((targets != 0.0).sum(axis=1) == 2).all()


class TestMixedQueryLoss:
    def test_near_one_lambda_reduces_to_contrastive_row(self):
        # as lambda -> 1 the loss approaches plain cross-entropy of each mixed
        # row against its first source key, with the full (B+K)-way denominator
        rng = seeded_rng(12)
        b, k, c = 4, 2, 3
        keys = unit_rows(rng, b, c)
        queue = unit_rows(rng, k, c)
        mixed = keys[: b // 2].copy()
        lam = np.full(b // 2, 1.0 - 1e-12)
        res = mixed_query_loss(mixed, keys, queue, lam, 0.2)
        stacked = np.concatenate([keys, queue])
        expected = 0.0
        for i in range(b // 2):
            logits = stacked @ mixed[i] / 0.2
            expected += -(logits[i] - math.log(np.exp(logits).sum()))
        assert res.value == pytest.approx(expected / (b // 2), rel=1e-9)

    def test_uniform_logits_give_log_b_plus_k_for_any_lambda(self):
        e1 = np.zeros((1, 3))
        e1[0, 0] = 1.0
        keys = np.repeat(e1, 4, axis=0)
        queue = np.repeat(e1, 4, axis=0)
        mixed = np.repeat(e1, 2, axis=0)
        for lam in ([0.5, 0.5], [0.123, 0.9], [0.999, 0.001]):
            res = mixed_query_loss(mixed, keys, queue, lam, 0.05)
            assert res.value == pytest.approx(math.log(8.0), rel=0, abs=1e-12)

    def test_direct_two_term_oracle(self):
        rng = seeded_rng(13)
        keys = unit_rows(rng, 4, 3)
        queue = unit_rows(rng, 2, 3)
        mixed = unit_rows(rng, 2, 3)
        lam = rng.uniform(0.1, 0.9, 2)
        res = mixed_query_loss(mixed, keys, queue, lam, 0.05)
        assert res.value == pytest.approx(
            mixed_direct(mixed, keys, queue, lam, 0.05), rel=0, abs=1e-12
        )

    def test_oracle_equivalence_random_instances(self):
        rng = seeded_rng(14)
        for _ in range(25):
            b = 2 * int(rng.integers(1, 5))
            k = int(rng.integers(0, 9))
            c = int(rng.integers(1, 5))
            keys = unit_rows(rng, b, c)
            queue = unit_rows(rng, k, c) if k else np.zeros((0, c))
            mixed = unit_rows(rng, b // 2, c)
            lam = rng.uniform(0.05, 0.95, b // 2)
            res = mixed_query_loss(mixed, keys, queue, lam, 0.05)
            assert res.value == pytest.approx(
                mixed_direct(mixed, keys, queue, lam, 0.05), rel=0, abs=1e-12
            )

    def test_gradient_check(self):
        rng = seeded_rng(15)
        keys = unit_rows(rng, 4, 3)
        queue = unit_rows(rng, 2, 3)
        mixed = unit_rows(rng, 2, 3)
        lam = rng.uniform(0.1, 0.9, 2)

        def f(flat):
            res = mixed_query_loss(np.reshape(flat, (2, 3)), keys, queue, lam, 0.05)
            return res.value, res.grad.ravel()

        assert finite_difference_check(f, mixed.ravel()).max_relative_error < 1e-6

    def test_kl_form_differs_by_mean_target_entropy_with_equal_grads(self):
        rng = seeded_rng(16)
        keys = unit_rows(rng, 6, 4)
        queue = unit_rows(rng, 6, 4)
        mixed = unit_rows(rng, 3, 4)
        lam = rng.uniform(0.05, 0.95, 3)
        ce = mixed_query_loss(mixed, keys, queue, lam, 0.05, form="soft_ce")
        kl = mixed_query_loss(mixed, keys, queue, lam, 0.05, form="kl")
        entropy = -np.mean(lam * np.log(lam) + (1 - lam) * np.log(1 - lam))
        assert ce.value - kl.value == pytest.approx(entropy, rel=0, abs=1e-10)
        assert np.abs(ce.grad - kl.grad).max() <= 1e-12

    def test_queue_permutation_invariance(self):
        rng = seeded_rng(17)
        keys = unit_rows(rng, 4, 3)
        queue = unit_rows(rng, 6, 3)
        mixed = unit_rows(rng, 2, 3)
        lam = rng.uniform(0.1, 0.9, 2)
        base = mixed_query_loss(mixed, keys, queue, lam, 0.05)
        shuffled = mixed_query_loss(mixed, keys, queue[rng.permutation(6)], lam, 0.05)
        assert shuffled.value == pytest.approx(base.value, rel=0, abs=1e-12)


class TestTotalLoss:
    def test_zero_weight_disables_mixed_term(self):
        assert total_loss(1.25, 7.5, 0.0) == 1.25

    def test_unit_weight_is_plain_sum(self):
        assert total_loss(1.25, 7.5, 1.0) == 1.25 + 7.5

    def test_half_weight(self):
        assert total_loss(1.0, 2.0, 0.5) == 2.0

    def test_rejects_negative_weight(self):
        with pytest.raises(ConfigurationError):
            total_loss(1.0, 1.0, -0.5)
