import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairdistill.oracle import (FixedPointInstance, OracleError, jensen_check, loss_value,
                                numerical_optimum, predicted_optimum, random_instance,
                                run_verification)


def inst(means, ratios, distance="mse", variant="vanilla"):
    return FixedPointInstance(np.asarray(means, float), np.asarray(ratios, float),
                              distance, variant)


# ------------------------------------------------------------------- predicted

def test_predicted_vanilla_mse_weighted_mean():
    pred = predicted_optimum(inst([[1, 0], [0, 1]], [0.9, 0.1]))
    assert np.allclose(pred.vector, [0.9, 0.1])
    assert pred.asserted and not pred.is_direction


def test_predicted_uniform_mse_arithmetic_mean():
    pred = predicted_optimum(inst([[1, 0], [0, 1]], [0.9, 0.1], variant="fairdd"))
    assert np.allclose(pred.vector, [0.5, 0.5])


def test_predicted_vanilla_cosine_direction():
    pred = predicted_optimum(inst([[1, 0], [0, 1]], [0.5, 0.5], distance="cosine"))
    assert pred.is_direction
    assert np.allclose(pred.vector, np.array([1, 1]) / np.sqrt(2))


def test_predicted_unasserted_cases_carry_caveats():
    mae = predicted_optimum(inst([[1, 0], [0, 1], [4, 4]], [0.2, 0.3, 0.5],
                                 distance="mae", variant="fairdd"))
    assert not mae.asserted and "median" in mae.caveat
    cos = predicted_optimum(inst([[1, 0], [0, 3]], [0.5, 0.5],
                                 distance="cosine", variant="fairdd"))
    assert not cos.asserted and cos.is_direction


# ------------------------------------------------------------------- numerical

@pytest.mark.parametrize("distance", ["mse", "mae"])
def test_numerical_vanilla_matches_weighted_mean(distance):
    rng = np.random.default_rng(0)
    for _ in range(25):
        instance = random_instance(rng, distance, "vanilla")
        m = numerical_optimum(instance, tol=1e-12)
        assert np.linalg.norm(m - predicted_optimum(instance).vector) < 1e-5


def test_numerical_uniform_mse_matches_arithmetic_mean():
    rng = np.random.default_rng(1)
    for _ in range(25):
        instance = random_instance(rng, "mse", "fairdd")
        m = numerical_optimum(instance)
        assert np.linalg.norm(m - predicted_optimum(instance).vector) < 1e-5


def test_numerical_uniform_mae_two_groups_mean_attains_minimum():
    rng = np.random.default_rng(2)
    for _ in range(25):
        instance = random_instance(rng, "mae", "fairdd", num_groups=2)
        m = numerical_optimum(instance, tol=1e-13)
        gap = abs(loss_value(instance, instance.means.mean(axis=0))
                  - loss_value(instance, m))
        assert gap < 1e-9


def test_numerical_uniform_mae_many_groups_prefers_median():
    # coordinate-wise median beats the arithmetic mean off the symmetric cases
    means = np.array([[0.0], [0.0], [10.0]])
    instance = inst(means, [1 / 3] * 3, distance="mae", variant="fairdd")
    m = numerical_optimum(instance, tol=1e-12)
    assert abs(m[0]) < 1e-6  # median is 0, mean would be 10/3
    assert loss_value(instance, m) < loss_value(instance, means.mean(axis=0)) - 1.0


def test_numerical_cosine_scale_free_direction():
    rng = np.random.default_rng(3)
    for _ in range(10):
        instance = random_instance(rng, "cosine", "vanilla")
        m = numerical_optimum(instance, tol=1e-8)
        direction = predicted_optimum(instance).vector
        cos_gap = 1 - float(np.dot(m, direction) / np.linalg.norm(m))
        assert cos_gap < 1e-4
        target = instance.ratios @ instance.means
        lam_defined = np.linalg.norm(m) / np.linalg.norm(target)
        lam_projected = float(m @ target / (target @ target))
        assert abs(lam_projected - lam_defined) < 1e-4 * max(1.0, lam_defined)


def test_numerical_optimum_reports_nonconvergence():
    instance = inst([[1, 0], [0, 1]], [0.5, 0.5])
    with pytest.raises(OracleError, match="step norms"):
        numerical_optimum(instance, lr=1e-9, tol=1e-13, max_steps=50)


def test_duplicate_group_shifts_arithmetic_mean_as_claimed():
    base = inst([[2, 0], [0, 2]], [0.5, 0.5], variant="fairdd")
    grown = inst([[2, 0], [0, 2], [0, 2]], [1 / 3] * 3, variant="fairdd")
    m_base = numerical_optimum(base)
    m_grown = numerical_optimum(grown)
    assert np.allclose(m_base, [1.0, 1.0], atol=1e-6)
    assert np.allclose(m_grown, [2 / 3, 4 / 3], atol=1e-6)


# ----------------------------------------------------------------- jensen bound

def test_jensen_worked_example():
    instance = inst([[1, 0], [0, 1]], [0.5, 0.5], variant="fairdd")
    margin = jensen_check(instance, np.zeros(2))
    # uniform loss 2.0, ratio-weighted loss 0.5
    assert margin == pytest.approx(1.5)


def test_jensen_margin_at_weighted_mean_is_uniform_loss():
    instance = inst([[1, 0], [0, 1]], [0.9, 0.1], variant="fairdd")
    m = np.array([0.9, 0.1])
    margin = jensen_check(instance, m)
    uniform = loss_value(inst([[1, 0], [0, 1]], [0.9, 0.1], variant="fairdd"), m)
    assert margin == pytest.approx(uniform)


def test_jensen_rejects_cosine():
    instance = inst([[1, 0], [0, 1]], [0.5, 0.5], distance="cosine", variant="fairdd")
    with pytest.raises(OracleError):
        jensen_check(instance, np.ones(2))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["mse", "mae"]))
def test_jensen_margin_never_negative(seed, distance):
    rng = np.random.default_rng(seed)
    instance = random_instance(rng, distance, "fairdd")
    m = rng.uniform(-3, 3, size=instance.dim)
    assert jensen_check(instance, m) >= -1e-9


# ------------------------------------------------------------------ validation

def test_instance_validation():
    with pytest.raises(OracleError):
        inst([[1, 0], [0, 1]], [0.5, 0.4])  # ratios must sum to 1
    with pytest.raises(OracleError):
        inst([[1, 0], [0, 1]], [1.1, -0.1])
    with pytest.raises(OracleError):
        inst([[0, 0], [0, 1]], [0.5, 0.5], distance="cosine")


def test_verification_summary_shape():
    summary = run_verification(instances=8, jensen_pairs=16, seed=3)
    names = {c["claim"] for c in summary["claims"]}
    assert "vanilla_mse_fixed_point" in names
    assert "fairdd_mae_general_mean_deviation" in names
    report_only = [c for c in summary["claims"] if not c["asserted"]]
    assert report_only and all(c["passed"] is None for c in report_only)
    assert summary["all_passed"] is True
