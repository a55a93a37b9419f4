import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from uck.autograd import Tensor, backward, numerical_gradient, relative_error
from uck.errors import NumericalError, ShapeError
from uck.projections import (ProjectionKind, project, rowwise_project, softmax_forward, sparsemax_forward,
                             sparsemax_jvp, sparsemax_rows)

scores = st.lists(st.floats(min_value=-10, max_value=10, allow_nan=False, allow_infinity=False),
                  min_size=1, max_size=32)


class TestSparsemaxForward:

    def test_uniform_pair(self):
        result = sparsemax_forward([0.0, 0.0])
        assert_array_equal(result.p, [0.5, 0.5])
        assert_array_equal(result.support, [0, 1])
        assert result.tau == pytest.approx(-0.5)

    def test_one_hot(self):
        result = sparsemax_forward([2.0, 0.0])
        assert_array_equal(result.p, [1.0, 0.0])
        assert_array_equal(result.support, [0])
        assert result.tau == pytest.approx(1.0)

    def test_simplex_point_is_fixed(self):
        result = sparsemax_forward([0.5, 0.3, 0.2])
        assert_allclose(result.p, [0.5, 0.3, 0.2], atol=1e-15)
        assert result.tau == pytest.approx(0.0, abs=1e-15)

    def test_single_entry(self):
        assert_array_equal(sparsemax_forward([-3.0]).p, [1.0])

    def test_empty_input(self):
        with pytest.raises(ShapeError):
            sparsemax_forward([])

    def test_non_finite_input(self):
        with pytest.raises(NumericalError):
            sparsemax_forward([0.0, np.inf])

    def test_ties_share_weight(self):
        result = sparsemax_forward([1.0, 1.0, -5.0])
        assert result.p[0] == result.p[1]
        assert result.p[2] == 0.0

    @settings(max_examples=1000, deadline=None)
    @given(scores)
    def test_simplex_membership(self, z):
        p = sparsemax_forward(z).p
        assert np.all(p >= 0.0)
        assert abs(p.sum() - 1.0) <= 1e-12

    @settings(max_examples=300, deadline=None)
    @given(scores)
    def test_exact_zeros_off_support(self, z):
        result = sparsemax_forward(z)
        off = np.setdiff1d(np.arange(len(z)), result.support)
        assert np.all(result.p[off] == 0.0)
        assert_allclose(result.p[result.support], np.asarray(z)[result.support] - result.tau, atol=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.integers(min_value=-80, max_value=80), min_size=1, max_size=16),
           st.integers(min_value=-64, max_value=64))
    def test_shift_invariance_is_bitwise(self, eighths, c):
        z = np.asarray(eighths, dtype=np.float64) / 8.0
        assert_array_equal(sparsemax_forward(z + c).p, sparsemax_forward(z).p)

    @settings(max_examples=300, deadline=None)
    @given(scores)
    def test_ordering_preserved(self, z):
        z = np.asarray(z)
        p = sparsemax_forward(z).p
        i, j = np.argmax(z), np.argmin(z)
        assert p[i] >= p[j]
        order = np.argsort(z)
        assert np.all(np.diff(p[order]) >= 0.0)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(min_value=1, max_value=32), st.integers(min_value=0, max_value=2 ** 16))
    def test_idempotent_on_simplex(self, n, seed):
        p = np.random.default_rng(seed).dirichlet(np.ones(n))
        assert_allclose(sparsemax_forward(p).p, p, atol=1e-12)


class TestSparsemaxJvp:

    def test_constant_upstream_gives_zero(self):
        result = sparsemax_forward([0.3, 0.1, 0.2])
        g = sparsemax_jvp(result.p, result.support, np.full(3, 4.0))
        assert_allclose(g, 0.0, atol=1e-15)

    def test_single_support(self):
        assert_array_equal(sparsemax_jvp([1.0, 0.0], [0], [3.0, 9.0]), [0.0, 0.0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 50:
            z = rng.normal(size=5)
            result = sparsemax_forward(z)
            if np.min(np.abs(z - result.tau)) < 1e-4:
                continue
            v = rng.normal(size=5)
            numeric = numerical_gradient(lambda x: float(v @ sparsemax_forward(x).p), z, eps=1e-7)
            analytic = sparsemax_jvp(result.p, result.support, v)
            assert relative_error(analytic, numeric) < 1e-6
            checked += 1


class TestSoftmax:

    def test_uniform_pair(self):
        assert_allclose(softmax_forward([0.0, 0.0]), [0.5, 0.5])

    def test_no_overflow(self):
        p = softmax_forward([1000.0, 0.0])
        assert_allclose(p, [1.0, 0.0], atol=1e-300)

    def test_shift_invariance(self, rng):
        z = rng.normal(size=6)
        assert_allclose(softmax_forward(z + 3.5), softmax_forward(z), rtol=1e-12)


class TestRowwiseProject:

    def test_rows_independent(self):
        out = rowwise_project(ProjectionKind.SPARSEMAX, Tensor([[2.0, 0.0], [0.0, 2.0]]))
        assert_array_equal(out.data, [[1.0, 0.0], [0.0, 1.0]])

    def test_uniform_rows(self):
        out = rowwise_project('sparsemax', Tensor(np.zeros((2, 2))))
        assert_array_equal(out.data, np.full((2, 2), 0.5))

    def test_softmax_strictly_positive(self):
        out = rowwise_project('softmax', Tensor([[2.0, 0.0], [0.0, 2.0]]))
        assert np.all(out.data > 0.0)

    @pytest.mark.parametrize('kind', ['sparsemax', 'softmax'])
    def test_masked_entries_exactly_zero(self, kind):
        mask = np.array([[True, False, True], [False, True, False]])
        out = rowwise_project(kind, Tensor([[0.1, 5.0, 0.2], [3.0, -1.0, 3.0]]), mask)
        assert np.all(out.data[~mask] == 0.0)
        assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)
        assert out.data[1, 1] == 1.0

    def test_fully_masked_row_rejected(self):
        with pytest.raises(ShapeError):
            rowwise_project('sparsemax', Tensor(np.zeros((2, 2))), np.array([[True, True], [False, False]]))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            rowwise_project('entmax', Tensor(np.zeros((1, 2))))

    @pytest.mark.parametrize('kind', ['sparsemax', 'softmax'])
    def test_backward_matches_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        while True:
            z = rng.normal(size=(3, 4))
            taus = sparsemax_rows(z)[1]
            if np.min(np.abs(z - taus[:, None])) > 1e-4:
                break
        weights = rng.normal(size=(3, 4))
        x = Tensor(z, requires_grad=True)
        analytic = backward((rowwise_project(kind, x) * Tensor(weights)).sum())[x]

        def f(values):
            return float((rowwise_project(kind, Tensor(values)).data * weights).sum())

        assert relative_error(analytic, numerical_gradient(f, z, eps=1e-7)) < 1e-6

    def test_vector_project(self):
        z = Tensor([2.0, 0.0], requires_grad=True)
        p = project('sparsemax', z)
        assert p.shape == (2,)
        assert_array_equal(p.data, [1.0, 0.0])
