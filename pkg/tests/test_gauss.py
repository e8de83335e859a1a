import math
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.stats import norm

from boundselect.errors import BracketError, TruncationMassError, ValidationError
from boundselect.gauss import (
    TruncatedNormal,
    max_gauss_quantile,
    solve_location,
    solve_location_hybrid,
    tn_cdf,
)


def test_symmetric_window_half():
    assert tn_cdf(0.0, TruncatedNormal(0.0, 1.0, -1.0, 1.0)) == pytest.approx(0.5)


def test_untruncated_matches_normal_cdf():
    t = 1.959963985
    assert tn_cdf(t, TruncatedNormal(0.0, 1.0)) == pytest.approx(0.975, abs=1e-9)
    # scipy as an independent oracle across a grid
    for z in (-3.0, -0.7, 0.0, 0.9, 2.5, 4.0):
        assert tn_cdf(z, TruncatedNormal(0.0, 1.0)) == pytest.approx(norm.cdf(z), abs=1e-12)


def test_boundary_values_exact():
    tn = TruncatedNormal(0.0, 1.0, 0.0, math.inf)
    assert tn_cdf(0.0, tn) == 0.0
    assert tn_cdf(1e9, tn) == 1.0
    tn2 = TruncatedNormal(2.0, 4.0, -1.0, 5.0)
    assert tn_cdf(-1.0, tn2) == 0.0
    assert tn_cdf(5.0, tn2) == 1.0


def test_monotone_grid():
    rng = np.random.default_rng(20240601)
    for _ in range(1000):
        mu = rng.normal(scale=3.0)
        sd = math.exp(rng.normal(scale=0.7))
        lo = mu + sd * rng.uniform(-25.0, 15.0)
        hi = lo + sd * rng.uniform(0.5, 12.0)
        tn = TruncatedNormal(mu, sd * sd, lo, hi)
        ts = np.linspace(lo, hi, 17)
        vals = [tn_cdf(t, tn) for t in ts]
        assert all(b - a >= -1e-12 for a, b in zip(vals, vals[1:]))
        # strictly decreasing in mu at an interior point
        t_mid = 0.5 * (lo + hi)
        f1 = tn_cdf(t_mid, TruncatedNormal(mu - 0.3 * sd, sd * sd, lo, hi))
        f2 = tn_cdf(t_mid, TruncatedNormal(mu + 0.3 * sd, sd * sd, lo, hi))
        assert f1 > f2


def test_deep_tail_finite_monotone():
    # windows 20 sigma and beyond into a tail stay finite and ordered
    for shift in (20.0, 30.0, 38.0):
        tn = TruncatedNormal(0.0, 1.0, shift, shift + 2.0)
        vals = [tn_cdf(shift + x, tn) for x in (0.25, 0.5, 1.0, 1.75)]
        assert all(math.isfinite(v) for v in vals)
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_mass_underflow_error_names_window():
    with pytest.raises(TruncationMassError) as err:
        tn_cdf(60.0005, TruncatedNormal(0.0, 1.0, 60.0, 60.001))
    assert "60.0" in str(err.value)


def test_truncated_normal_validation():
    with pytest.raises(ValidationError):
        TruncatedNormal(0.0, -1.0)
    with pytest.raises(ValidationError):
        TruncatedNormal(0.0, 1.0, 2.0, 1.0)


def test_solve_location_inverse_normal_oracle():
    mu = solve_location(0.0, 0.975, 1.0, -math.inf, math.inf)
    assert mu == pytest.approx(-1.959963985, abs=1e-6)
    assert mu == pytest.approx(-norm.ppf(0.975), abs=1e-6)


def test_solve_location_symmetry():
    # symmetric window centered at t with target .5 pins mu at t
    mu = solve_location(1.3, 0.5, 4.0, 1.3 - 3.0, 1.3 + 3.0)
    assert mu == pytest.approx(1.3, abs=1e-7)


def test_solve_location_roundtrips():
    rng = np.random.default_rng(7)
    for i in range(1000):
        sd = math.exp(rng.normal(scale=0.5))
        if i % 5 == 0:
            # window deep in a tail, 20 sigma out
            lo = 20.0 * sd
            hi = lo + rng.uniform(0.5, 4.0) * sd
        else:
            lo = rng.uniform(-6.0, 2.0) * sd
            hi = lo + rng.uniform(0.3, 10.0) * sd
        t = lo + (hi - lo) * rng.uniform(0.05, 0.95)
        target = rng.uniform(0.01, 0.99)
        mu = solve_location(t, target, sd * sd, lo, hi)
        resid = abs(tn_cdf(t, TruncatedNormal(mu, sd * sd, lo, hi)) - target)
        assert resid <= 1e-8


def test_solve_location_requires_interior_t():
    with pytest.raises(BracketError):
        solve_location(0.0, 0.5, 1.0, 0.0, 3.0)
    with pytest.raises(ValidationError):
        solve_location(1.0, 1.5, 1.0, 0.0, 3.0)


def test_hybrid_infinite_offset_reduces_to_plain():
    mu_plain = solve_location(1.2, 0.93, 1.0, -3.0, 4.0)
    mu_hyb = solve_location_hybrid(1.2, 0.93, 1.0, -3.0, 4.0, math.inf, "lower")
    assert mu_hyb == pytest.approx(mu_plain, abs=1e-9)


def test_hybrid_zero_offset_still_solves():
    mu = solve_location_hybrid(1.2, 0.1, 1.0, -3.0, 4.0, 0.0, "lower")
    assert math.isfinite(mu) and mu > 1.2


def test_hybrid_lower_never_below_projection_bound():
    rng = np.random.default_rng(11)
    for _ in range(200):
        sd = math.exp(rng.normal(scale=0.4))
        lo = rng.uniform(-8.0, 0.0) * sd
        hi = lo + rng.uniform(1.0, 14.0) * sd
        t = lo + (hi - lo) * rng.uniform(0.1, 0.9)
        offset = rng.uniform(0.5, 4.0) * sd
        target = rng.uniform(0.05, 0.98)
        mu = solve_location_hybrid(t, target, sd * sd, lo, hi, offset, "lower")
        assert mu >= t - offset - 1e-9 * (1 + abs(t))
        # grid-search oracle: the solved mu really attains the target
        f = _hybrid_cdf_oracle(t, mu, sd, lo, hi, offset, "lower")
        assert f == pytest.approx(target, abs=1e-7)


def test_hybrid_upper_never_above_projection_bound():
    mu = solve_location_hybrid(-0.4, 0.05, 1.0, -5.0, 6.0, 2.0, "upper")
    assert mu <= -0.4 + 2.0 + 1e-9


def _hybrid_cdf_oracle(t, mu, sd, lo, hi, offset, side):
    # independent of the kernel: scipy normal CDFs on the mu-dependent window
    if side == "lower":
        top = min(hi, mu + offset)
        lo_eff = lo
    else:
        top = hi
        lo_eff = max(lo, mu - offset)
    if t >= top:
        return 1.0
    if t <= lo_eff:
        return 0.0
    num = norm.cdf((t - mu) / sd) - norm.cdf((lo_eff - mu) / sd)
    den = norm.cdf((top - mu) / sd) - norm.cdf((lo_eff - mu) / sd)
    return num / den


def test_hybrid_wide_window_matches_adjusted_conditional():
    # with a large offset the moving cap stops binding and the hybrid solve
    # approaches the plain solve at target (1-a)/(1-b) mapped to level
    # (a-b)/(1-b)
    alpha, beta = 0.05, 0.005
    t, sd = 0.7, 1.3
    target = (1 - alpha) / (1 - beta)
    mu_h = solve_location_hybrid(t, target, sd * sd, -math.inf, math.inf, 5.5 * sd, "lower")
    adj = (alpha - beta) / (1 - beta)
    mu_c = solve_location(t, 1 - adj, sd * sd, -math.inf, math.inf)
    assert abs(mu_h - mu_c) <= 1e-4 * sd


def test_max_gauss_quantile_one_dim_oracle():
    crit = max_gauss_quantile(np.array([[2.0]]), 0.95, draws=200_000, seed=1)
    assert crit == pytest.approx(1.6449, abs=0.01)


def test_max_gauss_quantile_duplicated_coordinate():
    c1 = max_gauss_quantile(np.array([[3.0]]), 0.95, draws=100_000, seed=5)
    c2 = max_gauss_quantile(np.full((2, 2), 3.0), 0.95, draws=100_000, seed=5)
    assert c2 == pytest.approx(c1, abs=0.02)


def test_max_gauss_quantile_independent_pair_oracle():
    # product rule: P(max of 2 iid <= c) = Phi(c)^2
    crit = max_gauss_quantile(np.eye(2), 0.95, draws=200_000, seed=3)
    assert crit == pytest.approx(norm.ppf(math.sqrt(0.95)), abs=0.01)


def test_max_gauss_quantile_scale_invariance():
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    base = max_gauss_quantile(cov, 0.9, draws=20_000, seed=9)
    assert max_gauss_quantile(4.0 * cov, 0.9, draws=20_000, seed=9) == base
    assert max_gauss_quantile(0.25 * cov, 0.9, draws=20_000, seed=9) == base
    assert max_gauss_quantile(3.0 * cov, 0.9, draws=20_000, seed=9) == pytest.approx(base, abs=1e-10)


def test_max_gauss_quantile_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        max_gauss_quantile(np.array([[1.0, 2.0], [2.0, 1.0]]), 0.95, draws=1000, seed=0)
    with pytest.raises(ValidationError):
        max_gauss_quantile(np.array([[0.0]]), 0.95, draws=1000, seed=0)
    with pytest.raises(ValidationError):
        max_gauss_quantile(np.eye(2), 1.5, draws=1000, seed=0)


def test_numpy_fallback_agrees_with_numba():
    # run a small kernel probe in a subprocess with the fallback flag set and
    # compare against the in-process (numba) values
    probe = (
        "import json, math;"
        "from boundselect import _kernels as K;"
        "from boundselect.gauss import TruncatedNormal, tn_cdf, solve_location;"
        "vals = [tn_cdf(0.3, TruncatedNormal(0.0, 1.0, -1.0, 2.0)),"
        " tn_cdf(20.5, TruncatedNormal(0.0, 1.0, 20.0, 22.0)),"
        " solve_location(0.0, 0.975, 1.0, -math.inf, math.inf)];"
        "print(json.dumps({'numba': K.USING_NUMBA, 'vals': vals}))"
    )
    env = dict(os.environ, BOUNDSELECT_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", probe], env=env, capture_output=True, text=True, check=True
    )
    import json

    doc = json.loads(out.stdout)
    assert doc["numba"] is False
    expected = [
        tn_cdf(0.3, TruncatedNormal(0.0, 1.0, -1.0, 2.0)),
        tn_cdf(20.5, TruncatedNormal(0.0, 1.0, 20.0, 22.0)),
        solve_location(0.0, 0.975, 1.0, -math.inf, math.inf),
    ]
    for got, want in zip(doc["vals"], expected):
        assert got == pytest.approx(want, abs=1e-10)
