import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monoflow.errors import DomainError, NotMonotone, NumericOverflow, Unbounded
from monoflow.hfunctions import (
    F_KINDS,
    H_KINDS,
    NON_MONOTONE,
    FDivergenceSpec,
    HFunction,
    check_h_f_identity,
    conjugate_grid,
    convex_conjugate,
    default_r_grid,
    f_eval,
    f_prime,
    f_prime_inverse,
    f_second,
    flow_h,
    flow_rescaling,
    h_eval,
    h_prime,
    loss_h,
    monotone_registry,
    parse_h,
    reconstruct_f_from_h,
)

U_GRID = np.linspace(-10.0, 10.0, 1000)
ALL_H = [HFunction(k) for k in H_KINDS if k != "ShiftedVanilla"] + [HFunction("ShiftedVanilla", c) for c in (0, 1, 3, 5)]


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------- evaluation


def test_h_eval_examples():
    assert h_eval(HFunction("Identity"), 0.5) == 0.5
    assert h_eval(HFunction("Exp15"), 0.0) == 1.0
    assert h_eval(HFunction("Vanilla"), 0.0) == pytest.approx(np.log(2.0), abs=1e-15)


def test_h_prime_examples():
    assert h_prime(HFunction("Vanilla"), -5.0) == pytest.approx(1.0 / (1.0 + np.exp(5.0)), rel=1e-12)
    assert h_prime(HFunction("Vanilla"), -5.0) == pytest.approx(0.0066929, abs=1e-7)
    assert h_prime(HFunction("NonSaturated"), -5.0) == pytest.approx(0.993307, abs=1e-6)
    assert h_prime(HFunction("Arcsinh"), 0.0) == 1.0


def test_loss_h_is_negated_f():
    r = np.geomspace(0.05, 20.0, 50)
    for kind in F_KINDS:
        spec = FDivergenceSpec(kind)
        assert np.allclose(h_eval(loss_h(spec), np.log(r)), -np.asarray(f_eval(spec, r)), rtol=1e-12, atol=1e-12)


def test_shifted_vanilla_is_shifted_logistic():
    for c in (0.0, 1.0, 3.0, 5.0):
        h = HFunction("ShiftedVanilla", c)
        assert np.allclose(h_prime(h, U_GRID), sigmoid(U_GRID + c), rtol=1e-12)


def test_parse_h_forms():
    assert parse_h("Vanilla") == HFunction("Vanilla")
    assert parse_h("ShiftedVanilla(3)") == HFunction("ShiftedVanilla", 3.0)
    assert parse_h("ShiftedVanilla(C=3)") == HFunction("ShiftedVanilla", 3.0)
    with pytest.raises(ValueError):
        parse_h("Nope")


def test_overflow_raises():
    with pytest.raises(NumericOverflow):
        h_eval(HFunction("MLE"), 501.0)
    with pytest.raises(NumericOverflow):
        h_prime(HFunction("Identity"), np.nan)


# ---------------------------------------------------------------- monotonicity flags


@pytest.mark.parametrize("h", ALL_H, ids=lambda h: h.name)
def test_monotone_flag_matches_derivative_sign(h):
    hp = np.asarray(h_prime(h, U_GRID))
    if h.monotone:
        assert np.all(hp > 0)
    else:
        assert h.kind in NON_MONOTONE
        assert np.any(hp <= 0)


def test_registry_is_monotone_only():
    names = [h.name for h in monotone_registry()]
    assert "Identity" in names and "Exp15" in names
    assert all(h.monotone for h in monotone_registry())


@pytest.mark.parametrize("h", ALL_H, ids=lambda h: h.name)
def test_h_prime_matches_finite_difference(h):
    step = 1e-5
    fd = (np.asarray(h_eval(h, U_GRID + step)) - np.asarray(h_eval(h, U_GRID - step))) / (2 * step)
    hp = np.asarray(h_prime(h, U_GRID))
    scale = np.maximum(np.abs(hp), 1e-3)
    assert np.max(np.abs(fd - hp) / scale) < 1e-5


# ---------------------------------------------------------------- f-divergences


def test_f_at_one_vanishes_for_divergences():
    for kind in F_KINDS:
        value = f_eval(FDivergenceSpec(kind), 1.0)
        if kind == "Exp":
            # stored verbatim as -r**1.5; it is not normalized
            assert value == -1.0
        else:
            assert abs(value) < 1e-12


def test_f_examples():
    assert f_eval(FDivergenceSpec("ChiSquare"), 2.0) == 1.0
    assert f_eval(FDivergenceSpec("KL"), np.e) == pytest.approx(-1.0, abs=1e-15)


def test_f_convexity_flags():
    r = np.linspace(1e-3, 50.0, 2000)
    for kind in F_KINDS:
        f2 = np.asarray(f_second(FDivergenceSpec(kind), r))
        if kind == "Exp":
            assert np.all(f2 < 0)
        else:
            assert np.all(f2 > 0)


@pytest.mark.parametrize("kind", F_KINDS)
def test_f_derivatives_match_finite_difference(kind):
    spec = FDivergenceSpec(kind)
    r = np.geomspace(0.05, 20.0, 200)
    step = 1e-6 * r
    fd1 = (np.asarray(f_eval(spec, r + step)) - np.asarray(f_eval(spec, r - step))) / (2 * step)
    fd2 = (np.asarray(f_prime(spec, r + step)) - np.asarray(f_prime(spec, r - step))) / (2 * step)
    assert np.allclose(f_prime(spec, r), fd1, rtol=1e-6, atol=1e-8)
    assert np.allclose(f_second(spec, r), fd2, rtol=1e-6, atol=1e-8)


def test_f_rejects_nonpositive_ratio():
    with pytest.raises(DomainError):
        f_eval(FDivergenceSpec("KL"), 0.0)


def test_unknown_divergence():
    with pytest.raises(ValueError):
        FDivergenceSpec("Wasserstein")


# ---------------------------------------------------------------- matched flow rescaling


@pytest.mark.parametrize("kind", [k for k in F_KINDS if k != "Exp"])
def test_flow_h_rescaling_matches_r2_f2(kind):
    spec = FDivergenceSpec(kind)
    r = np.geomspace(0.1, 10.0, 500)
    want = np.asarray(flow_rescaling(spec, r))
    got = np.asarray(h_prime(flow_h(spec), np.log(r)))
    assert np.max(np.abs(got - want) / want) < 1e-5


def test_flow_h_rejects_concave_f():
    with pytest.raises(NotMonotone):
        flow_h(FDivergenceSpec("Exp"))


# ---------------------------------------------------------------- reconstruction


def test_default_grid_contains_one_and_is_fine():
    r = default_r_grid()
    assert np.any(r == 1.0)
    assert r[0] == pytest.approx(0.02) and r[-1] == pytest.approx(50.0)
    assert np.max(np.diff(np.log(r))) < 1e-3


def test_identity_reconstruction_is_hand_integral():
    table = reconstruct_f_from_h(HFunction("Identity"))
    r = table.r
    assert np.max(np.abs(table.f - (r - 1.0 - np.log(r)))) < 1e-6
    assert np.max(np.abs(table.f_prime - (1.0 - 1.0 / r))) < 1e-6
    assert check_h_f_identity(HFunction("Identity"), table) < 1e-6


def test_vanilla_identity_error_small():
    h = HFunction("Vanilla")
    assert check_h_f_identity(h, reconstruct_f_from_h(h)) < 1e-3


def test_mismatched_table_is_detected():
    table = reconstruct_f_from_h(HFunction("Identity"))
    assert check_h_f_identity(HFunction("Vanilla"), table) > 1e-2


def test_exp15_reconstruction_is_convex_representative():
    table = reconstruct_f_from_h(HFunction("Exp15"))
    r = table.r[::50]
    f2 = np.gradient(table.f_prime[::50], r)
    inner = slice(2, -2)
    assert np.allclose(f2[inner], 1.5 / np.sqrt(r[inner]), rtol=1e-3)


def test_non_monotone_reconstruction_raises():
    with pytest.raises(NotMonotone):
        reconstruct_f_from_h(HFunction("ForwardKL"))


@pytest.mark.parametrize("h", monotone_registry(), ids=lambda h: h.name)
def test_reconstruction_convex_and_consistent(h):
    table = reconstruct_f_from_h(h)
    assert check_h_f_identity(h, table) < 1e-3
    # strictly increasing f' is strict convexity of the tabulated f
    assert np.all(np.diff(table.f_prime) > 0)
    # divided differences increase: convexity on the non-uniform grid
    sub_r, sub_f = table.r[::100], table.f[::100]
    slopes = np.diff(sub_f) / np.diff(sub_r)
    assert np.all(np.diff(slopes) > 0)


# ---------------------------------------------------------------- conjugates


def test_conjugate_examples():
    assert convex_conjugate(FDivergenceSpec("ChiSquare"), 0.0) == 0.0
    assert convex_conjugate(FDivergenceSpec("KL"), -1.0) == pytest.approx(-1.0, abs=1e-15)
    assert convex_conjugate(FDivergenceSpec("ChiSquare"), 2.0) == pytest.approx(3.0, abs=1e-15)


def test_conjugate_unbounded_cases():
    with pytest.raises(Unbounded):
        convex_conjugate(FDivergenceSpec("KL"), 0.5)
    with pytest.raises(Unbounded):
        convex_conjugate(FDivergenceSpec("Exp"), 0.0)


@pytest.mark.parametrize("kind", ["KL", "ForwardKL", "ChiSquare", "Hellinger", "JensenShannon"])
@given(r_star=st.floats(0.05, 20.0))
def test_conjugate_matches_grid_search(kind, r_star):
    spec = FDivergenceSpec(kind)
    d = float(f_prime(spec, r_star))
    value = convex_conjugate(spec, d)
    grid_value, grid_arg = conjugate_grid(spec, d)
    assert value == pytest.approx(grid_value, rel=1e-8, abs=1e-8)
    assert grid_arg == pytest.approx(r_star, rel=1e-4)
    assert float(f_prime_inverse(spec, d)) == pytest.approx(r_star, rel=1e-10)


@pytest.mark.parametrize("kind", ["KL", "ForwardKL", "ChiSquare", "Hellinger", "JensenShannon"])
@given(r=st.floats(0.01, 100.0), d=st.floats(-5.0, 0.6))
def test_fenchel_young_inequality(kind, r, d):
    spec = FDivergenceSpec(kind)
    try:
        conj = convex_conjugate(spec, d)
    except (Unbounded, DomainError):
        return
    assert conj >= r * d - f_eval(spec, r) - 1e-9 * max(1.0, abs(conj))


def test_f_prime_inverse_domain():
    with pytest.raises(DomainError):
        f_prime_inverse(FDivergenceSpec("KL"), 0.1)
    with pytest.raises(Unbounded):
        f_prime_inverse(FDivergenceSpec("Exp"), -1.0)
