import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopvid import numcore as nc
from stopvid.encoders import InputError
from stopvid.numcore import ConfigError, ContractError, Tensor
from stopvid.objectives import (MetricsReport, acc_at_1, action_loss, cosine_similarity,
                                diagonal_ranks, is_degenerate, mean_rank, recall_at_k,
                                retrieval_loss, retrieval_metrics, similarity_matrix)

LN_1P_EINV = math.log(1 + math.exp(-1))  # 0.3133


def test_cosine_examples(rng):
    x = Tensor(rng.standard_normal(5))
    # the 1e-12 norm guard perturbs the result at the 1e-12 level
    assert abs(cosine_similarity(x, x).item() - 1) < 1e-11
    assert abs(cosine_similarity(x, Tensor(-x.data)).item() + 1) < 1e-11
    assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0


def test_cosine_zero_vector_guarded():
    z = Tensor(np.zeros(3))
    assert cosine_similarity(z, Tensor([1.0, 2.0, 3.0])).item() == 0.0
    assert is_degenerate(z) and not is_degenerate(Tensor([0.0, 1e-30]))


def test_similarity_entries_bounded(rng):
    c = similarity_matrix(Tensor(rng.standard_normal((6, 4)) * 1e3), Tensor(rng.standard_normal((5, 4)))).data
    assert np.all(np.abs(c) <= 1 + 1e-12)


# ---------------------------------------------------------------- action loss

def test_action_loss_uniform_is_log_k():
    v = Tensor(np.ones((3, 2)))
    s = Tensor(np.ones((4, 2)))
    assert abs(action_loss(v, s, [0, 1, 3], 0.07).item() - math.log(4)) < 1e-12


def test_action_loss_limit():
    v = Tensor([[1.0, 0.0]])
    s = Tensor([[1.0, 0.0], [-1.0, 0.0]])
    assert action_loss(v, s, [0], 0.01).item() < 1e-8


def test_action_loss_hand_value():
    v = Tensor([[1.0, 0.0]])
    s = Tensor([[1.0, 0.0], [0.0, 1.0]])
    assert abs(action_loss(v, s, [0], 1.0).item() - LN_1P_EINV) < 1e-12


def test_action_loss_bad_label():
    with pytest.raises(InputError):
        action_loss(Tensor(np.ones((1, 2))), Tensor(np.ones((2, 2))), [2], 0.07)


# ---------------------------------------------------------------- retrieval loss

def test_retrieval_loss_uniform():
    x = Tensor(np.ones((2, 3)))
    assert abs(retrieval_loss(x, x, 0.07).item() - math.log(2)) < 1e-12


def test_retrieval_loss_limit():
    e = Tensor(np.eye(3))
    assert retrieval_loss(e, e, 0.01).item() < 1e-6


def test_retrieval_loss_hand_value():
    e = Tensor(np.eye(2))
    assert abs(retrieval_loss(e, e, 1.0).item() - LN_1P_EINV) < 1e-12


def test_retrieval_loss_needs_negatives():
    with pytest.raises(ContractError):
        retrieval_loss(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2))), 0.07)


def test_retrieval_loss_matches_direct_formula(rng):
    s, v = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    sn = s / np.linalg.norm(s, axis=1, keepdims=True)
    vn = v / np.linalg.norm(v, axis=1, keepdims=True)
    c = sn @ vn.T / 0.5
    t2v = -np.mean([c[i, i] - np.log(np.exp(c[i]).sum()) for i in range(4)])
    v2t = -np.mean([c[i, i] - np.log(np.exp(c[:, i]).sum()) for i in range(4)])
    got = retrieval_loss(Tensor(s), Tensor(v), 0.5).item()
    assert abs(got - 0.5 * (t2v + v2t)) < 1e-10  # norm guard shifts cosines by ~1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative_and_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    s, v = r.standard_normal((5, 4)) * 10, r.standard_normal((5, 4))
    perm = r.permutation(5)
    a = retrieval_loss(Tensor(s), Tensor(v), 0.07).item()
    b = retrieval_loss(Tensor(s[perm]), Tensor(v[perm]), 0.07).item()
    assert a >= 0 and math.isfinite(a) and abs(a - b) < 1e-10
    k = action_loss(Tensor(v), Tensor(s[:3]), r.integers(0, 3, 5), 0.07).item()
    assert k >= 0 and math.isfinite(k)


def test_loss_gradients_match_fd(rng):
    s = Tensor(rng.standard_normal((4, 3)), grad_enabled=True)
    v = Tensor(rng.standard_normal((4, 3)), grad_enabled=True)
    labels = [0, 2, 1, 1]
    for f in (lambda: retrieval_loss(s, v, 0.3), lambda: action_loss(v, s, labels, 0.3)):
        grads = nc.backward(f())
        for t in (s, v):
            fd = nc.finite_diff_grad(f, t, 1e-6)
            assert nc.relative_error(grads[t.node_id].data, fd.data) < 1e-6


# ---------------------------------------------------------------- metrics

def test_acc_examples(rng):
    assert acc_at_1(np.eye(4), [0, 1, 2, 3]) == 1.0
    assert acc_at_1(np.fliplr(np.eye(4)), [0, 1, 2, 3]) == 0.0
    c = rng.standard_normal((4, 3))
    labels = [0, 2, 1, 1]
    brute = sum(max(range(3), key=lambda k: (c[i, k], -k)) == labels[i] for i in range(4)) / 4
    assert acc_at_1(c, labels) == brute


def test_acc_ties_take_lowest_index():
    assert acc_at_1(np.array([[0.5, 0.5]]), [0]) == 1.0
    assert acc_at_1(np.array([[0.5, 0.5]]), [1]) == 0.0


def test_recall_examples():
    c = np.array([[0.9, 0.1], [0.8, 0.2]])
    assert recall_at_k(c, 1) == 0.5
    assert recall_at_k(c, 2) == 1.0
    assert mean_rank(c) == 1.5
    assert recall_at_k(np.eye(5), 1) == 1.0 and mean_rank(np.eye(5)) == 1.0
    with pytest.raises(ConfigError):
        recall_at_k(c, 3)


def test_reversed_matrix_worst_rank():
    c = 1.0 - np.eye(3)
    assert mean_rank(c) == 3.0


def test_ranks_match_sort_oracle(rng):
    c = rng.integers(0, 3, (6, 6)).astype(float)  # many ties
    for i in range(6):
        order = sorted(range(6), key=lambda j: (-c[i, j], j))
        assert diagonal_ranks(c)[i] == order.index(i) + 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_invariant_under_row_rescaling(seed):
    r = np.random.default_rng(seed)
    c = r.standard_normal((6, 6))
    scaled = c * r.uniform(0.1, 10, (6, 1))
    m = retrieval_metrics(c)
    assert m == retrieval_metrics(scaled)
    assert m["R@1"] <= m["R@5"] and m["MnR"] >= 1
    labels = r.integers(0, 6, 6)
    assert acc_at_1(c, labels) == acc_at_1(scaled, labels)


def test_recall_at_b_is_one(rng):
    for b in (2, 5, 9):
        assert recall_at_k(rng.standard_normal((b, b)), b) == 1.0


def test_report_round_trip():
    rep = MetricsReport("retrieval", {"R@1": 0.25, "MnR": 3.5}, [2.0, 1.0, 0.5], 3, 7, {"config_hash": "ab12"})
    back = MetricsReport.from_text(rep.to_text())
    assert back.metrics == rep.metrics and back.extra == rep.extra
    assert back.loss_curve == [2.0, 0.5] and (back.steps, back.seed) == (3, 7)
