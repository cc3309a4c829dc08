import math

import numpy as np
import pytest

import oracles
from helpers import projection_set, row_spec
from ncl import autograd as ag
from ncl.exceptions import ConfigError, NumericalError
from ncl.losses import LossSpec, ProjectionSet, contrastive_accuracy, loss_na, loss_ncl, loss_nd
from ncl.neighborhood import Masks, MetaArrays, NeighborhoodSpec, build_masks


def _oracle(method, inst, tau):
    if method == "cl":
        return oracles.cl_loss(inst["P"], inst["Q"], inst["partner"], tau)
    if method == "sacl":
        return oracles.sacl_loss(inst["P"], inst["Q"], inst["anchor"], inst["queue"], inst["partner"], tau)
    if method == "clocs":
        return oracles.clocs_loss(inst["P"], inst["Q"], inst["anchor"], inst["queue"], tau)
    return oracles.scl_loss(inst["P"], inst["Q"], inst["anchor_labels"], inst["queue_labels"], tau)


@pytest.mark.parametrize("method", ["cl", "sacl", "clocs", "scl"])
def test_table_rows_reduce_to_direct_formulas(method):
    spec = row_spec(method, tau=0.1)
    for seed in range(100):
        inst = oracles.random_instance(seed, n=6, extra=10)
        got = loss_ncl(projection_set(inst, spec.neighborhood), spec).item()
        assert abs(got - _oracle(method, inst, 0.1)) <= 1e-10


@pytest.mark.parametrize("alpha,w", [(0.3, 16), (0.5, 5), (0.0, 3), (1.0, 10)])
def test_ncl_matches_weighted_oracle(alpha, w):
    for seed in range(20):
        inst = oracles.random_instance(seed, n=8, extra=12, n_stays=2)
        spec = LossSpec(0.2, alpha, NeighborhoodSpec("window", w))
        neigh = oracles.window_neighbors(inst["anchor"], inst["queue"], w)
        na = oracles.na_loss(inst["P"], inst["Q"], neigh, 0.2)
        nd = oracles.nd_loss(inst["P"], inst["Q"], neigh, inst["partner"], 0.2)
        got = loss_ncl(projection_set(inst, spec.neighborhood), spec).item()
        assert got == pytest.approx(alpha * na + (1 - alpha) * nd, abs=1e-10)


def test_endpoints_equal_single_terms_exactly():
    inst = oracles.random_instance(3, n=6, extra=6)
    nb = NeighborhoodSpec("window", 8)
    ps = projection_set(inst, nb)
    assert loss_ncl(ps, LossSpec(0.1, 1.0, nb)).item() == loss_na(ps, LossSpec(0.1, 1.0, nb)).item()
    assert loss_ncl(ps, LossSpec(0.1, 0.0, nb)).item() == loss_nd(ps, LossSpec(0.1, 0.0, nb)).item()


def test_mean_reduction_divides_by_anchor_count():
    inst = oracles.random_instance(5, n=6, extra=4)
    spec = LossSpec(0.1, 0.3, NeighborhoodSpec("window", 12))
    ps = projection_set(inst, spec.neighborhood)
    assert loss_ncl(ps, spec, "mean").item() == pytest.approx(loss_ncl(ps, spec).item() / 6, rel=1e-14)


class TestClosedForms:
    def test_all_equal_vectors_give_log_candidates(self):
        # M queue entries, M' = M - 1 candidates once self is excluded
        n, extra = 4, 7
        v = [1.0, 0.0, 0.0]
        inst = oracles.random_instance(0, n=n, extra=extra, d=3)
        inst["P"] = [v] * n
        inst["Q"] = [v] * (n + extra)
        spec = row_spec("cl")
        ps = projection_set(inst, spec.neighborhood)
        per_anchor = loss_na(ps, spec, "mean").item()
        assert per_anchor == pytest.approx(math.log(n + extra - 1), abs=1e-12)

    def test_single_neighbor_nd_is_zero(self):
        inst = oracles.random_instance(1, n=4, extra=5)
        spec = row_spec("sacl")
        ps = projection_set(inst, NeighborhoodSpec("window", 0.0))
        assert loss_nd(ps, spec).item() == pytest.approx(0.0, abs=1e-12)

    def test_two_term_nd(self):
        anchors = MetaArrays(np.array([0, 0]), np.array([5, 5]), np.full(2, np.nan), np.array([0, 0]))
        queue = MetaArrays(np.array([0, 0, 0]), np.array([5, 5, 6]), np.full(3, np.nan), np.array([0, 0, 9]))
        masks = build_masks(anchors, queue, NeighborhoodSpec("window", 2))
        P = ag.Tensor([[1.0, 0.0], [1.0, 0.0]])
        Q = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        got = loss_nd(ProjectionSet(P, Q, masks), LossSpec(1.0, 0.0), "mean").item()
        assert abs(got - math.log(1 + math.exp(-1))) <= 1e-12
        assert abs(got - 0.31326168751822286) <= 1e-12


@pytest.mark.parametrize("fn", [loss_na, loss_nd, loss_ncl])
def test_loss_gradients_match_finite_differences(fn):
    worst = 0.0
    for seed in range(20):
        inst = oracles.random_instance(seed, n=6, extra=6, n_stays=2)
        spec = LossSpec(0.5, 0.3, NeighborhoodSpec("window", 10))
        ps = projection_set(inst, spec.neighborhood, requires_grad=True)
        worst = max(worst, ag.gradient_check(lambda: fn(ps, spec), ps.P, eps=1e-6))
    assert worst < 1e-4


def test_empty_neighborhood_row_raises():
    masks = Masks(np.zeros((2, 2), bool), np.array([1, 0]), np.eye(2, dtype=bool))
    ps = ProjectionSet(ag.Tensor(np.eye(2)), np.eye(2), masks)
    with pytest.raises(NumericalError):
        loss_na(ps, LossSpec())
    with pytest.raises(NumericalError):
        loss_nd(ps, LossSpec())


def test_lossspec_validation():
    with pytest.raises(ConfigError):
        LossSpec(tau=0.0)
    with pytest.raises(ConfigError):
        LossSpec(alpha=1.5)


def test_contrastive_accuracy_is_one_for_perfect_pairs():
    P = np.eye(4)
    v_index = np.array([2, 3, 0, 1])
    Q = np.zeros((8, 4))
    Q[v_index] = P  # each partner slot holds its anchor's direction
    masks = Masks(np.ones((4, 8), bool), v_index, np.eye(4, 8, dtype=bool))
    assert contrastive_accuracy(ProjectionSet(ag.Tensor(P), Q, masks)) == 1.0
    Q[v_index[0]] = -P[0]
    assert contrastive_accuracy(ProjectionSet(ag.Tensor(P), Q, masks)) == 0.75
