"""Integer ambiguity resolution: factorization, decorrelation, searches,
acceptance statistics, and partial fixing.

The brute-force enumerator below is the oracle for every search test: it
scans an integer box around the floats and ranks candidates by the exact
objective, with no pruning and no cleverness.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdgps.iar import (
    AmbiguityDistribution,
    ConstraintContext,
    SingularGeometryError,
    bootstrap,
    candidate_baseline,
    classical_ils_search,
    constrained_search,
    decorrelate,
    discrimination_test,
    inverse_transform,
    ldl_decompose,
    partial_resolve,
    penalty_cost,
    round_half_away,
    search_width,
    success_rate,
)

RNG = np.random.default_rng


def random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T + n * np.eye(n))


def brute_force_two_best(dist, radius=6, cost_fn=None):
    """Enumerate an integer box around the floats, rank by exact cost."""
    if cost_fn is None:
        cost_fn = dist.mahalanobis
    center = np.round(dist.floats).astype(np.int64)
    axes = [np.arange(c - radius, c + radius + 1) for c in center]
    grids = np.meshgrid(*axes, indexing="ij")
    cands = np.stack([g.ravel() for g in grids], axis=-1)
    costs = np.array([cost_fn(c) for c in cands])
    order = np.argsort(costs, kind="stable")
    return cands[order[0]], cands[order[1]], costs[order[0]], costs[order[1]]


# ---------------------------------------------------------------------------
# Rounding and factorization
# ---------------------------------------------------------------------------

def test_round_half_away_from_zero():
    x = np.array([0.5, -0.5, 1.5, -1.5, 2.49, -2.49, 0.0])
    np.testing.assert_array_equal(round_half_away(x), [1, -1, 2, -2, 2, -2, 0])


def test_ldl_reconstructs_and_is_unit_lower():
    rng = RNG(7)
    for n in (1, 2, 5, 12):
        q = random_spd(rng, n)
        lower, diag = ldl_decompose(q)
        np.testing.assert_allclose((lower * diag) @ lower.T, q, rtol=1e-12, atol=1e-10)
        np.testing.assert_allclose(np.diag(lower), 1.0, atol=1e-14)
        assert np.all(np.triu(lower, 1) == 0.0)
        assert np.all(diag > 0.0)


def test_ldl_rejects_indefinite():
    with pytest.raises(np.linalg.LinAlgError):
        ldl_decompose(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_mahalanobis_matches_direct_inverse():
    rng = RNG(3)
    q = random_spd(rng, 4)
    f = rng.normal(size=4)
    d = AmbiguityDistribution(f, q)
    cand = np.round(f) + np.array([1, 0, -2, 1])
    r = cand - f
    expected = r @ np.linalg.inv(q) @ r
    assert math.isclose(d.mahalanobis(cand), expected, rel_tol=1e-10)


# ---------------------------------------------------------------------------
# Decorrelation
# ---------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=10_000))
def test_decorrelate_properties(n, seed):
    rng = RNG(seed)
    q = random_spd(rng, n, scale=0.1)
    f = rng.normal(scale=30.0, size=n)
    dist = AmbiguityDistribution(f, q)
    dz = decorrelate(dist)

    z = dz.z_matrix
    # Unimodular integer transform.
    assert z.dtype.kind in "iu"
    assert abs(round(np.linalg.det(z.astype(float)))) == 1
    # Consistent float and covariance transforms.
    np.testing.assert_allclose(dz.floats, z.T @ f, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(dz.covariance, z.T @ q @ z, rtol=1e-9, atol=1e-9)
    # Volume (determinant) is preserved.
    assert math.isclose(np.linalg.det(dz.covariance), np.linalg.det(q),
                        rel_tol=1e-6)
    # Off-diagonal conditional couplings are reduced to at most 1/2.
    assert np.max(np.abs(np.tril(dz.lower, -1))) <= 0.5 + 1e-9
    # Bootstrapping the transformed problem is never less likely to succeed:
    # each swap rebalances a pair of conditional variances at constant
    # product, which can only raise the success product.
    assert success_rate(dz.diag) >= success_rate(dist.diag) * (1.0 - 1e-10)


def test_decorrelate_improves_bootstrap_success():
    # Near-singular correlated pair: the raw conditional variances give a
    # 34% success product; after the integer transform the probability
    # reaches the global optimum over all unimodular transforms (verified by
    # brute force over a +-60 coefficient box: 0.62727...).
    q = np.array([[1.0, 0.99], [0.99, 0.9802]])
    dist = AmbiguityDistribution([0.2, -0.3], q)
    p_before = success_rate(dist.diag)
    dz = decorrelate(dist)
    p_after = success_rate(dz.diag)
    assert p_before == pytest.approx(0.342787, abs=1e-5)
    assert p_after == pytest.approx(0.627271, abs=1e-5)


def test_inverse_transform_roundtrip():
    rng = RNG(11)
    for seed in range(20):
        rng2 = RNG(seed)
        q = random_spd(rng2, 4, scale=0.2)
        dist = AmbiguityDistribution(rng2.normal(size=4), q)
        dz = decorrelate(dist)
        v = rng2.integers(-50, 50, size=4)
        fwd = dz.z_matrix.T @ v
        np.testing.assert_array_equal(inverse_transform(dz.z_matrix, fwd), v)


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

def test_bootstrap_exact_on_integer_floats():
    rng = RNG(5)
    q = random_spd(rng, 5, scale=0.01)
    truth = rng.integers(-20, 20, size=5)
    dist = AmbiguityDistribution(truth.astype(float), q)
    np.testing.assert_array_equal(bootstrap(dist), truth)


def test_bootstrap_uses_conditioning_not_plain_rounding():
    # One fully known component drags a correlated neighbour to the right
    # integer even though plain rounding of the float would be wrong.
    q = np.array([[0.01, 0.0095], [0.0095, 0.0101]])
    # Truth (0, 0); floats shifted along the correlated direction.
    dist = AmbiguityDistribution([0.45, 0.44], q)
    plain = round_half_away(dist.floats)
    boot = bootstrap(dist)
    assert plain[1] == 0 or plain[0] == 0  # sanity: rounding alone is ambivalent
    # The conditional step pulls the second component with the first.
    assert boot[1] == boot[0]


def test_bootstrap_beats_rounding_monte_carlo():
    # 1e4 trials on a correlated 3x3 case; bootstrapping on the decorrelated
    # problem must succeed at least as often as plain rounding of the raw
    # floats, within two binomial standard errors.
    rng = RNG(2024)
    q = np.array([
        [0.120, 0.095, 0.045],
        [0.095, 0.155, 0.074],
        [0.045, 0.074, 0.100],
    ])
    chol = np.linalg.cholesky(q)
    n_trials = 10_000
    noise = rng.normal(size=(n_trials, 3)) @ chol.T
    base = AmbiguityDistribution(np.zeros(3), q)
    dz = decorrelate(base)

    hits_round = 0
    hits_boot = 0
    for e in noise:
        hits_round += np.array_equal(round_half_away(e), np.zeros(3))
        shifted = AmbiguityDistribution(dz.z_matrix.T @ e, dz.covariance,
                                        z_matrix=dz.z_matrix,
                                        lower=dz.lower, diag=dz.diag)
        hits_boot += np.array_equal(bootstrap(shifted), np.zeros(3))

    p_round = hits_round / n_trials
    p_boot = hits_boot / n_trials
    se = 2.0 * math.sqrt(max(p_round * (1 - p_round), 1e-9) / n_trials)
    assert p_boot >= p_round - se
    # Exact sequential-rounding probability (product of erf terms over the
    # conditional standard deviations) must track the Monte Carlo rate.
    def phi(x):
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    p_exact = 1.0
    for var in dz.diag:
        p_exact *= 2.0 * phi(0.5 / math.sqrt(var)) - 1.0
    assert abs(p_boot - p_exact) < 3.0 * math.sqrt(p_exact * (1 - p_exact) / n_trials) + 0.01


# ---------------------------------------------------------------------------
# Success rate and discrimination
# ---------------------------------------------------------------------------

def test_success_rate_frozen_single_channel():
    # Oracle: sqrt(1 - exp(-1 / (8 * 0.289^2))) evaluated independently.
    assert math.isclose(success_rate([0.289]), 0.8809747618395151, rel_tol=1e-9)


def test_success_rate_frozen_ten_channels():
    # Ten equal channels whose squared diagonal entry is 0.0835; each
    # contributes sqrt(1 - exp(-1/(8 * 0.0835))) and the product is ~0.28.
    d = np.full(10, math.sqrt(0.0835))
    assert math.isclose(success_rate(d), 0.28175419208861663, rel_tol=1e-9)


def test_success_rate_bounds_and_monotonicity():
    d = np.array([0.05, 0.1, 0.2])
    p = success_rate(d)
    assert 0.0 < p < 1.0
    # Larger variances lower the probability.
    assert success_rate(2 * d) < p
    # More channels lower the probability.
    assert success_rate(d, subset_size=2) > p
    # Zero variance contributes certainty.
    assert success_rate(np.array([0.0])) == 1.0
    assert success_rate(np.concatenate([[0.0], d])) == pytest.approx(p)


def test_success_rate_evidence_factor():
    d = np.array([0.11, 0.21])
    plain = success_rate(d)
    # S = 1 reduces to the plain statistic exactly.
    assert success_rate(d, s_coefficient=1.0, gamma=0.5) == pytest.approx(plain, abs=1e-12)
    # The statistic is monotone nondecreasing in S.
    values = [success_rate(d, s_coefficient=s, gamma=0.5)
              for s in (0.05, 0.2, 0.5, 0.9, 1.0)]
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))
    # Out-of-range S is clamped.
    assert success_rate(d, s_coefficient=7.0) == pytest.approx(plain, abs=1e-12)


def test_discrimination_test():
    assert discrimination_test(1.0, 3.5)
    assert not discrimination_test(1.0, 2.9)
    assert not discrimination_test(0.0, 0.0)   # degenerate tie is untrusted
    assert discrimination_test(0.0, 0.5)       # exact best, distinct runner-up
    with pytest.raises(ValueError):
        discrimination_test(2.0, 1.0)


# ---------------------------------------------------------------------------
# Classical search vs brute force
# ---------------------------------------------------------------------------

def test_classical_search_matches_brute_force():
    rng = RNG(99)
    agree = 0
    trials = 200
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        q = random_spd(rng, n, scale=float(rng.uniform(0.01, 0.3)))
        f = rng.normal(scale=3.0, size=n)
        dist = AmbiguityDistribution(f, q)
        res = classical_ils_search(dist)
        bf_best, bf_second, bf_c1, bf_c2 = brute_force_two_best(dist)
        boot_cost = dist.mahalanobis(bootstrap(dist))
        # Never worse than bootstrap, never better than the true optimum.
        assert res.cost_best <= boot_cost + 1e-9
        assert res.cost_best >= bf_c1 - 1e-9
        if np.array_equal(res.best, bf_best) and math.isclose(
                res.cost_best, bf_c1, rel_tol=1e-9, abs_tol=1e-12):
            agree += 1
    assert agree >= 0.95 * trials


def test_classical_search_two_best_ordering():
    rng = RNG(17)
    q = random_spd(rng, 3, scale=0.05)
    dist = AmbiguityDistribution(rng.normal(scale=2.0, size=3), q)
    res = classical_ils_search(dist)
    assert res.cost_best <= res.cost_second
    assert not np.array_equal(res.best, res.second_best)
    # Costs are the exact objective values of the reported candidates.
    assert math.isclose(res.cost_best, dist.mahalanobis(res.best), rel_tol=1e-12)
    assert math.isclose(res.cost_second, dist.mahalanobis(res.second_best), rel_tol=1e-12)


def test_search_width_is_bootstrap_cost():
    rng = RNG(31)
    q = random_spd(rng, 4, scale=0.1)
    dist = AmbiguityDistribution(rng.normal(size=4), q)
    assert math.isclose(search_width(dist), dist.mahalanobis(bootstrap(dist)),
                        rel_tol=1e-12)


# ---------------------------------------------------------------------------
# Baseline from a candidate, penalty, constrained search
# ---------------------------------------------------------------------------

def make_geometry_problem(rng, n_rows=4, truth=None, baseline=None,
                          wavelength=0.19029367):
    """Synthesize a consistent (geometry, phases, truth, baseline) problem."""
    if baseline is None:
        baseline = rng.normal(scale=200.0, size=3)
    g = rng.normal(size=(n_rows, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if truth is None:
        truth = rng.integers(-30, 30, size=n_rows)
    phases = (g @ baseline) / wavelength + truth
    return g, phases, truth, baseline


def test_candidate_baseline_recovers_truth():
    rng = RNG(4)
    g, phases, truth, baseline = make_geometry_problem(rng)
    est = candidate_baseline(g, phases, truth, 0.19029367)
    np.testing.assert_allclose(est, baseline, atol=1e-8)


def test_candidate_baseline_singular_geometry():
    g = np.array([[1.0, 0, 0], [0.9, 0.1, 0], [0.8, 0.2, 0]])
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    # All rows lie in the z=0 plane: rank 2.
    with pytest.raises(SingularGeometryError):
        candidate_baseline(g, np.zeros(3), np.zeros(3), 0.19)
    with pytest.raises(SingularGeometryError):
        candidate_baseline(g[:2], np.zeros(2), np.zeros(2), 0.19)


def test_penalty_cost_zero_at_observations():
    ctx = ConstraintContext(observed_range=1000.0, observed_azimuth=0.01,
                            observed_elevation=-0.02,
                            sigma_range=5.0, sigma_azimuth=1e-3,
                            sigma_elevation=1e-3)
    assert penalty_cost(1000.0, 0.01, -0.02, ctx) == 0.0
    # One-sigma range residual costs 1.
    assert penalty_cost(1005.0, 0.01, -0.02, ctx) == pytest.approx(1.0)
    # Angle residuals are range-weighted.
    c = penalty_cost(1000.0, 0.01 + 1e-3, -0.02, ctx)
    assert c == pytest.approx(1.0 / 1000.0)


def test_penalty_cost_disabled_sensors():
    ctx = ConstraintContext(observed_range=1000.0, observed_azimuth=0.0,
                            observed_elevation=0.0, sigma_range=5.0,
                            sigma_azimuth=1e-3, sigma_elevation=1e-3,
                            range_enabled=False, fallback_range=500.0)
    # Range term absent; angles weighted by the fallback range.
    c = penalty_cost(1234.0, 1e-3, 0.0, ctx)
    assert c == pytest.approx(1.0 / 500.0)
    ctx2 = ConstraintContext(range_enabled=False, bearing_enabled=False)
    assert penalty_cost(999.0, 1.0, 1.0, ctx2) == 0.0


def build_constrained_problem(seed, sigma_float=0.08, n_rows=4,
                              range_sigma=0.5, angle_sigma=500e-6):
    """Full constrained-search fixture: floats near truth, consistent sensor
    observations of the true baseline."""
    rng = RNG(seed)
    wavelength = 0.19029367
    g, phases, truth, baseline = make_geometry_problem(rng, n_rows=n_rows,
                                                       wavelength=wavelength)
    q = random_spd(rng, n_rows, scale=sigma_float ** 2 / n_rows)
    floats = truth + rng.normal(scale=sigma_float, size=n_rows)
    dist = AmbiguityDistribution(floats, q)
    rng_obs = np.linalg.norm(baseline)
    az = math.asin(baseline[1] / rng_obs)
    el = math.atan2(baseline[0], baseline[2])
    ctx = ConstraintContext(
        observed_range=rng_obs, observed_azimuth=az, observed_elevation=el,
        sigma_range=range_sigma, sigma_azimuth=angle_sigma,
        sigma_elevation=angle_sigma,
        geometry=g, ddcp_phases=phases,
        dcm_eci_to_sensor=np.eye(3), wavelength=wavelength,
    )
    return dist, ctx, truth


def test_constrained_search_finds_truth():
    dist, ctx, truth = build_constrained_problem(100)
    dz = decorrelate(dist)
    ctx_res = constrained_search(dz, ctx)
    recovered = inverse_transform(dz.z_matrix, ctx_res.best)
    np.testing.assert_array_equal(recovered, truth)
    assert ctx_res.cost_best <= ctx_res.cost_second


def test_constrained_search_without_sensors_is_classical_descent():
    rng = RNG(8)
    q = random_spd(rng, 3, scale=0.02)
    dist = AmbiguityDistribution(rng.normal(scale=1.5, size=3), q)
    dz = decorrelate(dist)
    res = constrained_search(dz, None)
    # Pure pattern search on the covariance objective can do no better than
    # the exact search, and no worse than its own start.
    exact = classical_ils_search(dz)
    assert res.cost_best >= exact.cost_best - 1e-12
    assert res.cost_best <= res.cost_init + 1e-12


def test_constrained_search_beats_classical_when_floats_are_bad():
    # Many trials with badly biased floats: the sensor-steered search must
    # recover the truth substantially more often than the float-only search.
    hits_constrained = 0
    hits_classical = 0
    trials = 30
    for seed in range(trials):
        rng = RNG(10_000 + seed)
        wavelength = 0.19029367
        g, phases, truth, baseline = make_geometry_problem(
            rng, n_rows=4, wavelength=wavelength)
        # Floats biased by most of a cycle: classical rounding is hopeless.
        floats = truth + rng.normal(scale=0.45, size=4)
        q = random_spd(rng, 4, scale=0.05 ** 2)
        dist = AmbiguityDistribution(floats, q)
        rng_obs = np.linalg.norm(baseline)
        ctx = ConstraintContext(
            observed_range=rng_obs,
            observed_azimuth=math.asin(baseline[1] / rng_obs),
            observed_elevation=math.atan2(baseline[0], baseline[2]),
            sigma_range=0.05, sigma_azimuth=100e-6, sigma_elevation=100e-6,
            geometry=g, ddcp_phases=phases, dcm_eci_to_sensor=np.eye(3),
            wavelength=wavelength)
        dz = decorrelate(dist)
        res_c = constrained_search(dz, ctx)
        res_u = classical_ils_search(dz)
        hits_constrained += np.array_equal(
            inverse_transform(dz.z_matrix, res_c.best), truth)
        hits_classical += np.array_equal(
            inverse_transform(dz.z_matrix, res_u.best), truth)
    assert hits_constrained > hits_classical


def test_constrained_search_degenerate_flag():
    # Floats exactly on integers with tiny covariance: no move improves, the
    # runner-up equals the start and the result is flagged degenerate.
    q = 1e-6 * np.eye(2)
    dist = AmbiguityDistribution([4.0, -2.0], q)
    res = constrained_search(dist, None)
    assert res.degenerate_search
    np.testing.assert_array_equal(res.best, [4, -2])
    assert res.discrimination_ratio == 1.0


# ---------------------------------------------------------------------------
# Partial resolution
# ---------------------------------------------------------------------------

def test_partial_resolve_orders_by_conditional_variance():
    # Two precise channels, one terrible one: exactly the two precise
    # channels are fixed.
    q = np.diag([1e-4, 4.0, 9e-5])
    dist = AmbiguityDistribution([1.02, 5.4, -2.99], q)
    res = classical_ils_search(dist)
    fix = partial_resolve(dist, res)
    assert fix.subset_size == 2
    assert set(fix.indices.tolist()) == {0, 2}
    np.testing.assert_array_equal(np.sort(fix.values), [-3, 1])
    assert fix.success_prob > 0.99


def test_partial_resolve_all_or_nothing_extremes():
    # All channels precise: everything fixes.
    q = 1e-6 * np.eye(3)
    dist = AmbiguityDistribution([1.0001, -0.9999, 2.0], q)
    res = classical_ils_search(dist)
    fix = partial_resolve(dist, res)
    assert fix.subset_size == 3
    # All channels hopeless: nothing fixes.
    q2 = 4.0 * np.eye(3)
    dist2 = AmbiguityDistribution([0.3, 0.4, -0.2], q2)
    res2 = classical_ils_search(dist2)
    fix2 = partial_resolve(dist2, res2)
    assert fix2.subset_size == 0
    assert fix2.values.size == 0


def test_partial_resolve_shrink_factor_tightens_acceptance():
    # A candidate whose cost barely improved on the bootstrap start carries
    # S close to 1; a big improvement carries small S which lowers the
    # modified statistic and can veto a subset that plain bootstrap passes.
    q = np.diag([0.02, 0.03]) ** 2
    dist = AmbiguityDistribution([0.1, -0.1], q)
    res = classical_ils_search(dist)
    assert res.cost_init > 0.0
    fix = partial_resolve(dist, res)
    assert fix.shrink_factor <= 1.0
    # Plain statistic with S = 1 bounds the modified one from above.
    for m in (1, 2):
        plain = success_rate(np.sort(dist.diag), subset_size=m)
        mod = success_rate(np.sort(dist.diag), subset_size=m,
                           s_coefficient=fix.shrink_factor, gamma=1.0 / m)
        assert mod <= plain + 1e-12


def test_partial_resolve_zero_init_cost():
    # Floats exactly integer: cost_init = 0 must behave as S = 1, not crash.
    q = np.diag([1e-4, 1e-4])
    dist = AmbiguityDistribution([3.0, -7.0], q)
    res = classical_ils_search(dist)
    assert res.cost_init == pytest.approx(0.0, abs=1e-15)
    fix = partial_resolve(dist, res)
    assert fix.shrink_factor == 1.0
    assert fix.subset_size == 2


def test_partial_resolve_discrimination_veto():
    # Two candidates nearly tied over a subset block the fix even when the
    # success statistic is high.
    q = np.diag([0.01, 0.0101]) ** 2
    dist = AmbiguityDistribution([0.5, 0.0], q)  # first channel exactly split
    res = classical_ils_search(dist)
    # Runner-up differs from best in the split channel with near-equal cost.
    fix = partial_resolve(dist, res)
    split_channel_fixed = 0 in set(
        np.asarray(fix.indices).tolist()) and fix.subset_size >= 1
    # The split channel cannot be in any accepted subset ordered first...
    # its conditional variance ties with the other, so just assert the
    # overall fix excludes a confidently wrong decision:
    if split_channel_fixed:
        # if it were fixed, discrimination must have passed, which requires
        # a 3x cost gap -- impossible for a 0.5 float; so it must not be.
        ratio = res.cost_second / max(res.cost_best, 1e-300)
        assert ratio > 3.0
    else:
        assert fix.subset_size <= 1
