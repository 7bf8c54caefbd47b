"""Monte Carlo estimator tests against the exact closed forms."""

import numpy as np
import pytest

from passklab import (
    BanditConfig,
    DomainError,
    SuccessProfile,
    empirical_profile,
    grad_success_probs,
    mc_grad_pass1,
    mc_grad_passk,
    overlap_pair,
    sample_actions,
    sample_prompts,
    success_probs,
)
from passklab.conflict import assemble_passk_gradient
from passklab.interference import GradientTable
from passklab.mc import (
    PromptSamples,
    SampleSet,
    export_samples,
    import_samples,
    prompt_rng,
)


def make_samples(rewards, scores, pid="p"):
    rewards = np.asarray(rewards, dtype=float)
    return SampleSet(
        blocks=(
            PromptSamples(
                prompt_id=pid,
                actions=np.zeros(rewards.size, dtype=int),
                rewards=rewards,
                scores=np.asarray(scores, dtype=float),
            ),
        )
    )


class TestSampleSetValidation:
    def test_rejects_noninteger_rewards(self):
        with pytest.raises(DomainError):
            make_samples([0.5], [[1.0, 2.0]])

    def test_rejects_mixed_dimensions(self):
        a = PromptSamples("a", np.zeros(1, int), np.zeros(1), np.zeros((1, 2)))
        b = PromptSamples("b", np.zeros(1, int), np.zeros(1), np.zeros((1, 3)))
        with pytest.raises(DomainError):
            SampleSet(blocks=(a, b))

    def test_unknown_prompt(self):
        ss = make_samples([1.0], [[1.0, 2.0]])
        with pytest.raises(DomainError, match="unknown prompt"):
            mc_grad_pass1(ss, "nope")


class TestMcGradPass1:
    def test_all_rewards_zero(self):
        ss = make_samples([0, 0, 0], [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        np.testing.assert_array_equal(mc_grad_pass1(ss, "p"), [0.0, 0.0])

    def test_single_correct_sample(self):
        ss = make_samples([1], [[0.25, -0.5]])
        np.testing.assert_array_equal(mc_grad_pass1(ss, "p"), [0.25, -0.5])

    def test_large_sample_matches_closed_form(self):
        batch, theta = overlap_pair()
        ss = sample_actions(theta, batch, 200_000, seed=123)
        exact = grad_success_probs(theta, batch)
        for i, pid in enumerate(batch.ids):
            block = ss[pid]
            rs = block.rewards[:, None] * block.scores
            se = rs.std(axis=0, ddof=1) / np.sqrt(block.n)
            dev = np.abs(mc_grad_pass1(ss, pid) - exact[i])
            assert np.all(dev <= 3 * se + 1e-12)

    def test_unbiased_over_replications(self):
        # mean over 1000 seeded replications within 4 standard errors
        cfg = BanditConfig(seed=3)
        batch = sample_prompts(cfg, 5)
        theta = np.array([-0.5, 0.8])
        exact = grad_success_probs(theta, batch)
        reps = np.array(
            [
                [
                    mc_grad_pass1(sample_actions(theta, batch, 100, seed=5000 + r), pid)
                    for pid in batch.ids
                ]
                for r in range(1000)
            ]
        )
        mean = reps.mean(axis=0)
        se = reps.std(axis=0, ddof=1) / np.sqrt(reps.shape[0])
        assert np.all(np.abs(mean - exact) <= 4 * se)


class TestMcGradPassK:
    def test_k1_reduces_to_mean(self):
        batch, theta = overlap_pair()
        ss = sample_actions(theta, batch, 500, seed=9)
        prof = empirical_profile(ss)
        expected = np.zeros(2)
        for pid in batch.ids:
            expected += mc_grad_pass1(ss, pid) / len(batch)
        np.testing.assert_allclose(mc_grad_passk(ss, prof, 1), expected, rtol=1e-12)

    def test_all_success_zero_vector(self):
        ss = SampleSet(
            blocks=(
                PromptSamples("a", np.ones(3, int), np.ones(3), np.full((3, 2), 0.5)),
                PromptSamples("b", np.ones(3, int), np.ones(3), np.full((3, 2), 0.5)),
            )
        )
        prof = SuccessProfile.uniform([1.0, 1.0], ids=("a", "b"))
        np.testing.assert_array_equal(mc_grad_passk(ss, prof, 4), [0.0, 0.0])

    def test_matches_exact_gradient_with_exact_probs(self):
        batch, theta = overlap_pair()
        prof = SuccessProfile.uniform(success_probs(theta, batch), ids=batch.ids)
        ss = sample_actions(theta, batch, 200_000, seed=321)
        est = mc_grad_passk(ss, prof, 10)
        table = GradientTable.uniform(grad_success_probs(theta, batch), ids=batch.ids)
        exact = assemble_passk_gradient(table, prof, 10)
        # delta-method SE: weights are constants, only the per-prompt
        # gradient estimates fluctuate
        from passklab.objectives import wk_array

        w = wk_array(prof.probs, 10)
        var = np.zeros(2)
        for i, pid in enumerate(batch.ids):
            block = ss[pid]
            rs = block.rewards[:, None] * block.scores
            var += (prof.mass[i] * w[i]) ** 2 * rs.var(axis=0, ddof=1) / block.n
        se = np.sqrt(var)
        assert np.all(np.abs(est - exact) <= 3 * se + 1e-12)

    def test_misaligned_profile_rejected(self):
        batch, theta = overlap_pair()
        ss = sample_actions(theta, batch, 10, seed=1)
        prof = SuccessProfile.uniform([0.5, 0.5], ids=("x_h", "x_e"))
        with pytest.raises(DomainError):
            mc_grad_passk(ss, prof, 3)

    def test_inverse_sqrt_rate(self):
        # squared-error RMS over 50 seeds should halve when n quadruples
        batch, theta = overlap_pair()
        prof = SuccessProfile.uniform(success_probs(theta, batch), ids=batch.ids)
        table = GradientTable.uniform(grad_success_probs(theta, batch), ids=batch.ids)
        exact = assemble_passk_gradient(table, prof, 10)

        def rms_error(n):
            errs = [
                np.linalg.norm(
                    mc_grad_passk(sample_actions(theta, batch, n, seed=s), prof, 10)
                    - exact
                )
                ** 2
                for s in range(100, 150)
            ]
            return np.sqrt(np.mean(errs))

        ratio = rms_error(8000) / rms_error(2000)
        assert 0.4 <= ratio <= 0.625


class TestPluginWeightBias:
    def test_bias_positive_and_shrinking_in_n(self):
        # exact binomial enumeration of E[w_k(c/n)]: the plug-in weight is
        # biased upward (w_k convex in p) and the bias shrinks with n
        import math

        from passklab import wk

        p, k = 0.10, 10

        def exact_bias(n):
            mean = sum(
                math.comb(n, c) * p**c * (1 - p) ** (n - c) * wk(c / n, k)
                for c in range(n + 1)
            )
            return mean - wk(p, k)

        bias_small = exact_bias(20)
        bias_large = exact_bias(320)
        assert bias_small > 0
        assert bias_large > 0
        assert bias_large < bias_small / 4


class TestStreams:
    def test_streams_keyed_by_id_not_position(self):
        # the same prompt id yields the same draws regardless of batch makeup
        cfg = BanditConfig(seed=17)
        batch = sample_prompts(cfg, 6)
        theta = np.array([0.2, -0.2])
        full = sample_actions(theta, batch, 50, seed=99)
        from passklab.bandit import PromptBatch

        subset = PromptBatch(
            ids=batch.ids[2:4],
            features=batch.features[2:4],
            labels=batch.labels[2:4],
            correct_actions=batch.correct_actions[2:4],
        )
        partial = sample_actions(theta, subset, 50, seed=99)
        for pid in subset.ids:
            np.testing.assert_array_equal(full[pid].actions, partial[pid].actions)

    def test_prompt_rng_deterministic(self):
        a = prompt_rng(5, "abc").random(4)
        b = prompt_rng(5, "abc").random(4)
        np.testing.assert_array_equal(a, b)
        c = prompt_rng(5, "abd").random(4)
        assert not np.array_equal(a, c)


class TestSampleIO:
    def test_round_trip(self, tmp_path):
        batch, theta = overlap_pair()
        ss = sample_actions(theta, batch, 25, seed=77)
        path = tmp_path / "samples.jsonl"
        export_samples(ss, path)
        loaded = import_samples(path)
        assert loaded.ids == ss.ids
        for pid in ss.ids:
            np.testing.assert_array_equal(loaded[pid].actions, ss[pid].actions)
            np.testing.assert_array_equal(loaded[pid].rewards, ss[pid].rewards)
            np.testing.assert_allclose(loaded[pid].scores, ss[pid].scores, rtol=0)

    def test_bad_line_reported(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"prompt_id": "a", "action": 1}\n')
        with pytest.raises(DomainError, match="line 1"):
            import_samples(path)
