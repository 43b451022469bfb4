import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import geometric_mean_fusion
from touchid.fusion import (
    build_verification_trials,
    fuse_stroke_windows,
    fuse_strokes,
    fuse_windows,
    sample_fusion_groups,
)


def random_simplex(rng, n, k):
    x = rng.gamma(0.5, size=(n, k))
    return x / x.sum(axis=1, keepdims=True)


class TestFuseWindows:
    def test_single_window_identity(self):
        p = np.array([0.1, 0.7, 0.2])
        np.testing.assert_allclose(fuse_windows([p]), p, rtol=1e-15)

    def test_hand_computed_pair(self):
        # sqrt(0.48) / (sqrt(0.48) + sqrt(0.08)) and its complement
        out = fuse_windows([[0.8, 0.2], [0.6, 0.4]])
        np.testing.assert_allclose(out, [0.7101020514433644, 0.2898979485566356], rtol=1e-12)
        assert out[0] == pytest.approx(0.7101, abs=1e-4)

    def test_permutation_equivariance(self, rng):
        p = random_simplex(rng, 5, 6)
        perm = rng.permutation(6)
        np.testing.assert_allclose(fuse_windows(p[:, perm]), fuse_windows(p)[perm], rtol=1e-12)

    def test_order_invariance(self, rng):
        p = random_simplex(rng, 7, 4)
        np.testing.assert_allclose(fuse_windows(p[::-1]), fuse_windows(p), rtol=0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            fuse_windows(np.empty((0, 3)))

    def test_floor_handles_zeros(self):
        out = fuse_windows([[1.0, 0.0], [0.5, 0.5]])
        assert np.all(np.isfinite(out)) and out[0] > 0.99


class TestFuseStrokes:
    def test_n1_identity(self):
        p = np.array([0.25, 0.25, 0.5])
        np.testing.assert_allclose(fuse_strokes([p], 1), p, rtol=1e-15)

    def test_self_fusion_idempotent(self, rng):
        p = random_simplex(rng, 1, 5)[0]
        np.testing.assert_allclose(fuse_strokes([p] * 7, 7), p, rtol=1e-12)
        assert np.argmax(fuse_strokes([p] * 7, 7)) == np.argmax(p)

    def test_count_must_match(self):
        with pytest.raises(ValueError):
            fuse_strokes([[0.5, 0.5]] * 3, 4)

    def test_matches_direct_formula(self, rng):
        for _ in range(200):
            n, k = int(rng.integers(1, 10)), int(rng.integers(2, 12))
            p = random_simplex(rng, n, k)
            expected = geometric_mean_fusion(p.tolist())
            np.testing.assert_allclose(fuse_strokes(p, n), expected, rtol=1e-12, atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(2, 8)),
                  elements=st.floats(0, 1)))
    def test_simplex_preserved(self, raw):
        out = fuse_strokes(raw, len(raw))
        assert np.all((out >= 0) & (out <= 1))
        assert abs(out.sum() - 1) < 1e-6


def test_fuse_stroke_windows_groups_by_reference(rng):
    probs = random_simplex(rng, 12, 4)
    refs = np.array([5, 5, 5, 2, 2, 9, 9, 9, 9, 7, 7, 7])
    out_refs, fused = fuse_stroke_windows(probs, refs)
    assert out_refs.tolist() == [5, 2, 9, 7]
    for r, f in zip(out_refs, fused):
        np.testing.assert_allclose(f, fuse_windows(probs[refs == r]), rtol=1e-12)


class TestSampleGroups:
    def test_exact_fit(self):
        out = sample_fusion_groups({1: list(range(10))}, 10)
        assert len(out.groups) == 1 and sorted(out.groups[0][1]) == list(range(10))

    def test_insufficient(self):
        out = sample_fusion_groups({1: list(range(9))}, 10)
        assert out.groups == [] and out.skipped_users == 1

    def test_disjoint_single_user_groups(self, rng):
        data = {u: [(u, i) for i in range(int(rng.integers(0, 40)))] for u in range(8)}
        for n in range(1, 11):
            out = sample_fusion_groups(data, n, seed=3)
            seen = set()
            for user, group in out.groups:
                assert len(group) == n
                assert all(item[0] == user for item in group)
                assert seen.isdisjoint(group)
                seen.update(group)
            for u, items in data.items():
                got = sum(1 for user, _ in out.groups if user == u)
                assert got == len(items) // n
            assert out.skipped_users == sum(1 for items in data.values() if len(items) < n)

    def test_cap_and_determinism(self):
        data = {1: list(range(50)), 2: list(range(50))}
        a = sample_fusion_groups(data, 3, max_groups_per_user=4, seed=1)
        b = sample_fusion_groups(data, 3, max_groups_per_user=4, seed=1)
        c = sample_fusion_groups(data, 3, max_groups_per_user=4, seed=2)
        assert a == b and a != c
        assert len(a.groups) == 8

    def test_bad_n(self):
        with pytest.raises(ValueError):
            sample_fusion_groups({1: [1]}, 0)


class TestTrials:
    def test_construction(self):
        trials = build_verification_trials([(1, np.array([0.2, 0.5, 0.3]))])
        assert len(trials) == 3
        assert trials.genuine.tolist() == [False, True, False]
        assert trials.claimed.tolist() == [0, 1, 2]
        assert trials.scores.tolist() == [0.2, 0.5, 0.3]

    def test_degenerate_posterior(self):
        trials = build_verification_trials([(0, np.array([1.0, 0.0, 0.0, 0.0]))])
        assert trials.genuine_scores.tolist() == [1.0]
        assert trials.impostor_scores.tolist() == [0.0, 0.0, 0.0]

    def test_counts(self, rng):
        k, n = 7, 53
        probes = [(int(rng.integers(0, k)), p) for p in random_simplex(rng, n, k)]
        trials = build_verification_trials(probes, n_strokes=3)
        assert len(trials) == k * n
        assert int(trials.genuine.sum()) == n
        assert trials.n_strokes == 3
        for i, (y, p) in enumerate(probes):
            block = slice(i * k, (i + 1) * k)
            assert trials.claimed[block][trials.genuine[block]].tolist() == [y]
            np.testing.assert_array_equal(trials.scores[block], p)

    def test_empty(self):
        with pytest.raises(ValueError):
            build_verification_trials([])
