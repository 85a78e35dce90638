import numpy as np
import pytest

from docattr.core import AttributeLabelSet, DegenerateInputError, ValidationError
from docattr.voting import (
    PagePosterior,
    VotingContractError,
    classify_page,
    decisions_csv,
    mean_posterior,
    page_level_accuracy,
    predictions_csv,
    read_predictions,
    vote,
)

from oracles import argmax_first_loop, mean_rows_loop


def page(rows, task="font_type", pid="p"):
    return PagePosterior(pid, task, np.array(rows, dtype=np.float64))


def random_page(rng, n, k):
    return rng.dirichlet(np.full(k, rng.uniform(0.2, 3.0)), size=n)


def compensation_page(rng, n, k, true_class):
    """More than half the rows put >= 0.9 on the true class, the rest put <= 1/k on it."""
    m = int(rng.integers(n // 2 + 1, n + 1))
    rows = np.empty((n, k))
    for i in range(n):
        p_true = rng.uniform(0.9, 1.0) if i < m else rng.uniform(0.0, 1.0 / k)
        rest = rng.dirichlet(np.ones(k - 1)) * (1 - p_true)
        rows[i] = np.insert(rest, true_class, p_true)
    return rows[rng.permutation(n)]


def test_hand_mean():
    np.testing.assert_allclose(mean_posterior(page([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]])), [0.4, 0.4, 0.2],
                               atol=1e-15)


def test_single_and_identical_rows():
    row = [0.1, 0.7, 0.2]
    assert np.array_equal(mean_posterior(page([row])), row)
    np.testing.assert_allclose(mean_posterior(page([row] * 5)), row, atol=1e-15)


def test_hand_argmax_and_pmax():
    d = classify_page(page([[0.35, 0.55, 0.10]]))
    assert d.chosen["font_type"] == 1 and d.p_max["font_type"] == pytest.approx(0.55)


def test_compensation_example():
    d = classify_page(page([[0.4, 0.6], [0.9, 0.1], [0.8, 0.2]], task="font_size"))
    np.testing.assert_allclose(d.mean["font_size"], [0.7, 0.3], atol=1e-15)
    assert d.chosen["font_size"] == 0


def test_tie_goes_to_lowest_index():
    assert classify_page(page([[0.5, 0.5]])).chosen["font_type"] == 0
    assert classify_page(page([[0.2, 0.4, 0.4], [0.2, 0.4, 0.4]])).chosen["font_type"] == 1


def test_page_accuracy_counts():
    truth = {f"p{i}": AttributeLabelSet(i % 6, 0, 0, 0) for i in range(4)}
    decisions = [classify_page(page(np.eye(6)[[i % 6 if i != 3 else 0]], pid=f"p{i}")) for i in range(4)]
    assert page_level_accuracy(decisions, truth) == {"font_type": 0.75}
    assert page_level_accuracy(decisions[:3], truth) == {"font_type": 1.0}
    with pytest.raises(VotingContractError, match="p9"):
        page_level_accuracy([classify_page(page([[1, 0, 0, 0, 0, 0]], pid="p9"))], truth)


def test_invalid_posteriors():
    with pytest.raises(DegenerateInputError):
        page(np.zeros((0, 3)))
    with pytest.raises(ValidationError, match="row 1"):
        page([[0.5, 0.5], [0.5, 0.6]])
    with pytest.raises(ValidationError):
        page([[1.5, -0.5]])
    with pytest.raises(ValidationError):
        page([0.5, 0.5])


def test_matches_brute_force_on_random_pages():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, k = int(rng.integers(1, 51)), int(rng.integers(2, 7))
        rows = random_page(rng, n, k)
        if rng.random() < 0.1:
            rows[: n // 2 + 1] = rows[0]  # repeated rows make exact ties more likely
        p = page(rows)
        expected = mean_rows_loop(rows.tolist())
        got = mean_posterior(p)
        assert max(abs(a - b) for a, b in zip(got, expected)) <= 1e-12
        assert abs(got.sum() - 1) <= 1e-6
        assert classify_page(p).chosen["font_type"] == argmax_first_loop(expected)


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        rows = random_page(rng, int(rng.integers(1, 30)), int(rng.integers(2, 7)))
        a = classify_page(page(rows))
        b = classify_page(page(rows[rng.permutation(len(rows))]))
        assert a.chosen == b.chosen
        np.testing.assert_allclose(a.mean["font_type"], b.mean["font_type"], atol=1e-12)


def test_compensation_family():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        n, k = int(rng.integers(1, 51)), int(rng.integers(2, 7))
        c = int(rng.integers(k))
        assert classify_page(page(compensation_page(rng, n, k, c))).chosen["font_type"] == c


def test_adversarial_minority_can_outweigh_thin_majority():
    # 5 of 9 rows at 0.9 for class 1 and 4 rows all-in on class 0: the means tie at 0.5,
    # and the vote follows the mean (lowest index on ties), not the row majority.
    rows = [[0.1, 0.9]] * 5 + [[1.0, 0.0]] * 4
    d = classify_page(page(rows, task="font_size"))
    np.testing.assert_allclose(d.mean["font_size"], [0.5, 0.5], atol=1e-12)
    assert d.chosen["font_size"] == argmax_first_loop(mean_rows_loop(rows))


def test_vote_groups_by_page():
    probs = {"font_size": np.array([[0.2, 0.7, 0.1], [0.6, 0.3, 0.1], [0.1, 0.1, 0.8]])}
    decisions = vote(["a", "a", "b"], probs)
    assert [(d.page_id, d.chosen["font_size"]) for d in decisions] == [("a", 1), ("b", 2)]


def test_prediction_and_decision_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    gam = {"font_type": 6, "font_size": 3, "font_emphasis": 4, "scan_resolution": 3}
    probs = {t: rng.dirichlet(np.ones(g), size=5) for t, g in gam.items()}
    pids = ["x", "x", "y", "y", "y"]
    text = predictions_csv([f"c{i}" for i in range(5)], pids, probs)
    assert text.splitlines()[0] == "page_id,component_id,task,prob_0,prob_1,prob_2,prob_3,prob_4,prob_5"
    path = tmp_path / "pred.csv"
    path.write_text(text)
    posteriors = read_predictions(path)
    direct = vote(pids, probs)
    reread = [classify_page(posteriors[d.page_id]) for d in direct]
    for a, b in zip(direct, reread):
        assert a.chosen == b.chosen and a.p_max == b.p_max
    lines = decisions_csv(direct).splitlines()
    assert lines[0] == "page_id,task,chosen_class,p_max" and len(lines) == 1 + 2 * 4
