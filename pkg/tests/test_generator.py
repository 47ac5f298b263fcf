import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoflow.gaussian import log_density, log_ratio_and_grad, make_rng, toy_init, toy_target
from monoflow.generator import (
    DIVERGENCES,
    EXPECTED_GRID,
    GaussianGenerator,
    TrainConfig,
    detached_gradient,
    full_gradient,
    gan_bilevel_step,
    gan_generator_gradient,
    gen_sample,
    judge,
    loss_rescaling_profile,
    mc_cost,
    train,
)
from monoflow.hfunctions import FDivergenceSpec, HFunction, f_eval, h_eval, monotone_registry
from monoflow.neural import adam, default_discriminator, sgd

STEP = 1e-6


class OracleDiscriminator:
    """Stands in for a trained network: outputs the exact log-ratio and its gradient."""

    def __init__(self, p, q):
        self.p, self.q = p, q

    def forward_backward(self, x, upstream=None):
        u, g = log_ratio_and_grad(self.p, self.q, np.atleast_2d(x))
        return u, None, g


def random_generator(rng):
    return GaussianGenerator(0.5 * rng.standard_normal(2), np.eye(2) + 0.3 * rng.standard_normal((2, 2)))


def target_generator():
    return GaussianGenerator.from_gaussian(toy_target())


def fd_theta(cost, g):
    """Central differences of ``cost`` over the flattened (mu, s)."""
    theta = np.concatenate([g.mu, g.s.ravel()])
    out = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += STEP
        tm[i] -= STEP
        out[i] = (cost(GaussianGenerator(tp[:2], tp[2:].reshape(2, 2)))
                  - cost(GaussianGenerator(tm[:2], tm[2:].reshape(2, 2)))) / (2 * STEP)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


# ---------------------------------------------------------------- sampling


def test_zero_noise_gives_mean():
    g = random_generator(make_rng(0))
    assert np.array_equal(gen_sample(g, np.zeros((4, 2))), np.tile(g.mu, (4, 1)))


def test_identity_scale_passes_noise_through():
    z = make_rng(1).standard_normal((5, 2))
    assert np.array_equal(gen_sample(GaussianGenerator(np.zeros(2), np.eye(2)), z), z)


def test_sample_covariance_is_s_transpose_s():
    g = random_generator(make_rng(2))
    x = gen_sample(g, make_rng(3).standard_normal((100_000, 2)))
    assert np.linalg.norm(np.cov(x.T) - g.s.T @ g.s) < 0.02


@given(st.integers(0, 2**31), st.floats(-3, 3))
def test_sample_is_linear_in_noise(seed, a):
    rng = make_rng(seed)
    g = random_generator(rng)
    z1, z2 = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    lhs = gen_sample(g, z1 + a * z2) - g.mu
    rhs = (gen_sample(g, z1) - g.mu) + a * (gen_sample(g, z2) - g.mu)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_from_gaussian_reproduces_covariance():
    g = target_generator()
    assert np.allclose(g.cov, toy_target().cov, atol=1e-14)


# ---------------------------------------------------------------- gradient oracles


@pytest.mark.parametrize("seed", range(10))
def test_full_gradient_matches_crn_finite_differences(seed):
    rng = make_rng(seed)
    g = random_generator(rng)
    z = rng.standard_normal((64, 2))
    p = toy_target()
    spec = FDivergenceSpec(DIVERGENCES[seed % len(DIVERGENCES)])

    def cost(gg):
        x = gen_sample(gg, z)
        return float(np.mean(f_eval(spec, np.exp(log_density(p, x) - log_density(gg.gaussian(), x)))))

    assert rel_err(full_gradient(g, spec, p, z).flat(), fd_theta(cost, g)) < 1e-3
    assert mc_cost(g, spec, p, z) == pytest.approx(cost(g), rel=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_detached_gradient_matches_frozen_density_differences(seed):
    rng = make_rng(100 + seed)
    g = random_generator(rng)
    z = rng.standard_normal((64, 2))
    p = toy_target()
    frozen = g.gaussian()
    h = monotone_registry()[seed % len(monotone_registry())]

    def cost(gg):
        x = gen_sample(gg, z)
        return -float(np.mean(h_eval(h, log_density(p, x) - log_density(frozen, x))))

    assert rel_err(detached_gradient(g, h, p, z).flat(), fd_theta(cost, g)) < 1e-3


def test_detached_is_contracted_monoflow_field():
    rng = make_rng(7)
    g, p = random_generator(rng), toy_target()
    z = rng.standard_normal((32, 2))
    h = HFunction("Vanilla")
    x = gen_sample(g, z)
    u, grad_u = log_ratio_and_grad(p, g.gaussian(), x)
    field = (1.0 / (1.0 + np.exp(-u)))[:, None] * grad_u
    want_mu = -field.mean(axis=0)
    want_s = -np.einsum("ni,nj->ij", z, field) / len(z)
    got = detached_gradient(g, h, p, z)
    assert np.allclose(got.mu, want_mu, atol=1e-12)
    assert np.allclose(got.s, want_s, atol=1e-12)


def test_identity_matches_kl_detached_exactly():
    for seed in range(5):
        rng = make_rng(seed)
        g = random_generator(rng)
        z = rng.standard_normal((128, 2))
        a = detached_gradient(g, HFunction("Identity"), toy_target(), z).flat()
        b = detached_gradient(g, FDivergenceSpec("KL"), toy_target(), z).flat()
        assert np.max(np.abs(a - b)) < 1e-10


def test_detached_zero_at_target():
    g = target_generator()
    z = make_rng(0).standard_normal((256, 2))
    for rescale in (HFunction("Vanilla"), FDivergenceSpec("ChiSquare")):
        assert np.max(np.abs(detached_gradient(g, rescale, toy_target(), z).flat())) < 1e-10


# ---------------------------------------------------------------- optimum stationarity


@pytest.mark.parametrize("kind", [k for k in DIVERGENCES if k != "Exp"])
def test_full_gradient_stationary_at_target(kind):
    g = target_generator()
    z = make_rng(1).standard_normal((4096, 2))
    grad = full_gradient(g, FDivergenceSpec(kind), toy_target(), z)
    assert np.all(np.abs(grad.flat()) <= 5 * grad.stderr() + 1e-12)


def test_gan_gradient_stationary_with_oracle_at_target():
    g = target_generator()
    z = make_rng(2).standard_normal((4096, 2))
    grad = gan_generator_gradient(g, OracleDiscriminator(toy_target(), g.gaussian()), HFunction("Vanilla"), z)
    assert np.all(np.abs(grad.flat()) <= 5 * grad.stderr() + 1e-12)


# ---------------------------------------------------------------- pathway equivalence


def _pooled_difference(grad_a, grad_b, seeds):
    """Mean over seeds of per-batch gradient differences, with its standard error."""
    diffs = np.array([grad_a(s) - grad_b(s) for s in seeds])
    return diffs.mean(axis=0), diffs.std(axis=0, ddof=1) / np.sqrt(len(seeds))


def test_kl_full_and_detached_agree_in_expectation():
    g = GaussianGenerator.from_gaussian(toy_init())
    spec = FDivergenceSpec("KL")
    p = toy_target()

    def full(seed):
        return full_gradient(g, spec, p, make_rng(seed).standard_normal((256, 2))).flat()

    def detached(seed):
        return detached_gradient(g, spec, p, make_rng(10_000 + seed).standard_normal((256, 2))).flat()

    mean, se = _pooled_difference(full, detached, range(50))
    assert np.all(np.abs(mean) <= 3 * se)


def test_chi_square_full_and_detached_differ():
    # a shifted copy of the target keeps r^2 integrable so the errors are finite
    g = GaussianGenerator(np.array([0.3, 0.3]), target_generator().s)
    spec = FDivergenceSpec("ChiSquare")
    z = make_rng(0).standard_normal((20_000, 2))
    a = full_gradient(g, spec, toy_target(), z)
    b = detached_gradient(g, spec, toy_target(), z)
    assert np.max(np.abs(a.flat() - b.flat()) / np.hypot(a.stderr(), b.stderr())) > 5


def test_oracle_gan_equals_detached():
    g = GaussianGenerator.from_gaussian(toy_init())
    p = toy_target()
    h = HFunction("Vanilla")
    oracle = OracleDiscriminator(p, g.gaussian())
    z = make_rng(0).standard_normal((256, 2))
    # same batch: identical up to rounding
    assert np.allclose(gan_generator_gradient(g, oracle, h, z).flat(), detached_gradient(g, h, p, z).flat(),
                       atol=1e-12)

    def gan(seed):
        return gan_generator_gradient(g, oracle, h, make_rng(seed).standard_normal((256, 2))).flat()

    def det(seed):
        return detached_gradient(g, h, p, make_rng(20_000 + seed).standard_normal((256, 2))).flat()

    mean, se = _pooled_difference(gan, det, range(50))
    assert np.all(np.abs(mean) <= 3 * se)


def test_gan_step_zero_generator_rate():
    rng = make_rng(3)
    g = GaussianGenerator.from_gaussian(toy_init())
    disc = default_discriminator(rng, width=16)
    before = [p.copy() for p in disc.params]
    data = rng.standard_normal((64, 2))
    z = rng.standard_normal((64, 2))
    g2, disc, _ = gan_bilevel_step(g, disc, HFunction("Identity"), data, z, sgd(0.0), adam(1e-3))
    assert np.array_equal(g2.mu, g.mu) and np.array_equal(g2.s, g.s)
    assert any(not np.array_equal(a, b) for a, b in zip(before, disc.params))


# ---------------------------------------------------------------- judgment and config


def test_judge_is_pure():
    mu = [1.0] * 50 + [0.05] * 100
    cov = [1.0] * 50 + [0.1] * 100
    snapshot = (list(mu), list(cov))
    assert judge(mu, cov, 0.1, 0.15, 100) is True
    assert judge(mu, cov, 0.1, 0.15, 100) is True
    assert (mu, cov) == snapshot
    assert judge(mu, cov, 0.01, 0.15, 100) is False
    assert judge(mu[:50], cov[:50], 0.1, 0.15, 100) is False
    assert judge(mu[:-1] + [np.nan], cov, 0.1, 0.15, 100) is False


@pytest.mark.parametrize("field,value", [("steps", 0), ("batch", 0), ("tail_window", 0), ("tol_mean", 0.0),
                                         ("tol_cov", -1.0), ("divergence", "TV"), ("ratio_model", "Exact")])
def test_train_config_validation(field, value):
    with pytest.raises(ValueError):
        TrainConfig(**{field: value})


def test_expected_grid_pattern():
    full = [EXPECTED_GRID[d][0] for d in DIVERGENCES]
    assert full == [True, True, True, True, True, False]
    for d in DIVERGENCES:
        assert EXPECTED_GRID[d][1] == EXPECTED_GRID[d][2] == (d in ("KL", "Exp"))


# ---------------------------------------------------------------- training


def test_train_kl_full_converges():
    report = train(TrainConfig("KL", "Full"))
    assert report.converged and report.status == "ok"
    assert len(report.loss) == 5000


def test_train_chi_square_detached_fails():
    report = train(TrainConfig("ChiSquare", "Detached"))
    assert not report.converged


def test_train_exp_full_fails_without_crashing():
    report = train(TrainConfig("Exp", "Full"))
    assert not report.converged
    assert report.status == "ok" or report.status.startswith("diverged at step")


def test_train_deterministic_and_csv(tmp_path):
    cfg = TrainConfig("KL", "Detached", steps=50, tail_window=10)
    a, b = train(cfg), train(cfg)
    assert a.mu_dist == b.mu_dist
    a.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,loss,mu_dist,cov_dist" and len(lines) == 51


def test_converged_is_function_of_traces():
    report = train(TrainConfig("KL", "Detached", steps=300, tail_window=50))
    assert report.converged == judge(report.mu_dist, report.cov_dist, 0.1, 0.15, 50)


# ---------------------------------------------------------------- loss profile


def test_loss_rescaling_ordering():
    names = ["Vanilla", "NonSaturated", "MLE", "Logit", "Arcsinh"]
    hs = [HFunction(k) for k in names] + [HFunction("ShiftedVanilla", c) for c in (0, 1, 3, 5)]
    d = np.linspace(-10, 10, 401)
    prof = loss_rescaling_profile(hs, d)
    at = lambda name, v: float(prof[name][1][np.argmin(np.abs(d - v))])  # noqa: E731
    assert at("Vanilla", -5) == pytest.approx(0.00669, abs=1e-5)
    assert at("Arcsinh", -5) == pytest.approx(1 / np.sqrt(26), abs=1e-12)
    assert at("NonSaturated", -5) == pytest.approx(0.993307, abs=1e-6)
    assert at("Vanilla", -5) < at("Arcsinh", -5) < at("NonSaturated", -5)
    assert np.all(prof["Logit"][1] == 1.0)
    shifted = np.array([prof[HFunction("ShiftedVanilla", c).name][1] for c in (0, 1, 3, 5)])
    assert np.all(np.diff(shifted, axis=0) > 0)


@settings(max_examples=30)
@given(st.floats(-30, 30), st.floats(0, 10), st.floats(0.01, 5))
def test_shifted_vanilla_increases_with_shift(d, c, dc):
    lo = loss_rescaling_profile([HFunction("ShiftedVanilla", c)], [d])
    hi = loss_rescaling_profile([HFunction("ShiftedVanilla", c + dc)], [d])
    assert list(hi.values())[0][1][0] >= list(lo.values())[0][1][0]
