"""Integer ambiguity resolution for double-differenced carrier phase.

Float ambiguity estimates pulled from a navigation filter are decorrelated
with a unimodular integer transform, bootstrapped by conditional rounding,
refined by an integer search (either a classical shrinking-radius ILS search
or a pattern search whose cost is augmented with external range/bearing
constraints), screened with success-rate and discrimination tests, and
finally resolved partially: the largest well-determined subset is fixed while
the remainder stays float.

All ambiguities are in units of carrier cycles; covariances in cycles^2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AmbiguityDistribution",
    "IntegerSearchResult",
    "ConstraintContext",
    "PartialFix",
    "SingularGeometryError",
    "ldl_decompose",
    "decorrelate",
    "bootstrap",
    "search_width",
    "round_half_away",
    "classical_ils_search",
    "constrained_search",
    "penalty_cost",
    "candidate_baseline",
    "success_rate",
    "discrimination_test",
    "partial_resolve",
]

# Acceptance thresholds: minimum bootstrap success probability and minimum
# second-best/best cost ratio for a fix to be trusted.
KAPPA_SUCCESS = 0.99
KAPPA_DISCRIMINATION = 3.0


class SingularGeometryError(ValueError):
    """Raised when fewer than three independent lines of sight are available."""


def round_half_away(x):
    """Round to nearest integer with ties away from zero (not banker's)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5))
    return out.astype(np.int64)


@dataclass
class AmbiguityDistribution:
    """Gaussian description of a float ambiguity vector.

    Attributes
    ----------
    floats : ndarray, shape (n,)
        Float ambiguity estimates [cycles].
    covariance : ndarray, shape (n, n)
        Symmetric positive definite covariance [cycles^2].
    z_matrix : ndarray of int, shape (n, n)
        Unimodular transform already applied to this distribution; the
        decorrelated floats are ``z_matrix.T @ original_floats``.  Identity
        for an untransformed distribution.
    lower : ndarray, shape (n, n)
        Unit lower-triangular factor of ``covariance = L diag(d) L^T``.
    diag : ndarray, shape (n,)
        Conditional variances ``d`` of the factorization [cycles^2].
    """

    floats: np.ndarray
    covariance: np.ndarray
    z_matrix: np.ndarray = None
    lower: np.ndarray = None
    diag: np.ndarray = None

    def __post_init__(self):
        self.floats = np.atleast_1d(np.asarray(self.floats, dtype=float))
        self.covariance = np.asarray(self.covariance, dtype=float)
        n = self.floats.size
        if self.covariance.shape != (n, n):
            raise ValueError("covariance shape does not match float vector")
        if self.z_matrix is None:
            self.z_matrix = np.eye(n, dtype=np.int64)
        if self.lower is None or self.diag is None:
            self.lower, self.diag = ldl_decompose(self.covariance)

    @property
    def size(self) -> int:
        return self.floats.size

    def mahalanobis(self, candidate) -> float:
        """Squared covariance-weighted distance of ``candidate`` from the floats."""
        r = np.asarray(candidate, dtype=float) - self.floats
        # Solve L y = r, then chi = sum(y_i^2 / d_i); avoids forming Q^-1.
        y = np.linalg.solve(self.lower, r)
        return float(np.sum(y * y / self.diag))

    def search_width(self) -> float:
        return search_width(self)


@dataclass
class IntegerSearchResult:
    """Outcome of an integer candidate search.

    ``best``/``second_best`` live in the same space as the distribution that
    was searched (decorrelated space if the distribution carried a non-trivial
    ``z_matrix``).  ``cost_init`` is the cost of the bootstrapped start point.
    """

    best: np.ndarray
    second_best: np.ndarray
    cost_best: float
    cost_second: float
    cost_init: float
    success_prob: float
    discrimination_ratio: float
    accepted_subset_size: int = 0
    degenerate_search: bool = False


@dataclass
class ConstraintContext:
    """External sensor evidence used to steer the integer search.

    Attributes
    ----------
    observed_range : float
        Measured inter-satellite range [m] (ignored if range disabled).
    observed_azimuth, observed_elevation : float
        Measured bearing angles [rad] in the sensor frame (ignored when the
        bearing sensor is disabled).
    sigma_range, sigma_azimuth, sigma_elevation : float
        One-sigma accuracies of the three observables [m, rad, rad].
    geometry : ndarray, shape (k, 3)
        Double-difference line-of-sight geometry rows (ECI).
    ddcp_phases : ndarray, shape (k,)
        Double-differenced carrier phases [cycles].  Rows beyond the searched
        set (``free_rows``) must already have their known integers removed.
    dcm_eci_to_sensor : ndarray, shape (3, 3)
        Attitude rotation taking ECI vectors into the sensor frame.
    wavelength : float
        Carrier wavelength [m].
    range_enabled, bearing_enabled : bool
        Which external observables participate in the penalty.
    fallback_range : float
        Range used to weight the angle penalties when the ranging sensor is
        disabled (e.g. the filter's current estimate) [m].
    free_rows : ndarray of int or None
        Indices of geometry rows whose ambiguities are being searched; the
        remaining rows are treated as known (integer already subtracted).
        ``None`` means every row is searched.
    """

    observed_range: float = 0.0
    observed_azimuth: float = 0.0
    observed_elevation: float = 0.0
    sigma_range: float = 1.0
    sigma_azimuth: float = 1.0
    sigma_elevation: float = 1.0
    geometry: np.ndarray = None
    ddcp_phases: np.ndarray = None
    dcm_eci_to_sensor: np.ndarray = None
    wavelength: float = 0.19029367
    range_enabled: bool = True
    bearing_enabled: bool = True
    fallback_range: float = None
    free_rows: np.ndarray = None

    @property
    def any_enabled(self) -> bool:
        return bool(self.range_enabled or self.bearing_enabled)


@dataclass
class PartialFix:
    """Subset of decorrelated ambiguities accepted for fixing."""

    indices: np.ndarray          # indices into the decorrelated vector
    values: np.ndarray           # integers for those indices
    subset_size: int
    success_prob: float
    shrink_factor: float         # cost-ratio evidence factor in (0, 1]


# ---------------------------------------------------------------------------
# Factorization and decorrelation
# ---------------------------------------------------------------------------

def ldl_decompose(cov):
    """Factor a symmetric positive definite matrix as ``L diag(d) L^T``.

    Parameters
    ----------
    cov : ndarray, shape (n, n)

    Returns
    -------
    lower : ndarray, shape (n, n)
        Unit lower-triangular factor.
    diag : ndarray, shape (n,)
        Strictly positive conditional variances.

    Raises
    ------
    np.linalg.LinAlgError
        If the matrix is not positive definite.
    """
    cov = np.asarray(cov, dtype=float)
    chol = np.linalg.cholesky(0.5 * (cov + cov.T))
    s = np.diag(chol).copy()
    lower = chol / s[np.newaxis, :]
    return lower, s * s


def _gauss_reduce(lower, transform, floats):
    """Make all strictly-lower entries of ``lower`` at most 1/2 in magnitude.

    Applies integer row combinations; mirrors them on the accumulated
    transform and the float vector.  Works in place, returns True if any
    entry changed.
    """
    n = lower.shape[0]
    changed = False
    for i in range(1, n):
        for j in range(i - 1, -1, -1):
            mu = int(round_half_away(lower[i, j]))
            if mu != 0:
                lower[i, : j + 1] -= mu * lower[j, : j + 1]
                transform[i, :] -= mu * transform[j, :]
                floats[i] -= mu * floats[j]
                changed = True
    return changed


def decorrelate(dist: AmbiguityDistribution) -> AmbiguityDistribution:
    """Apply an integer unimodular transform that nearly diagonalizes the
    ambiguity covariance.

    Alternates integer Gauss reductions of the lower factor with symmetric
    swaps of adjacent components whenever the swap lowers the leading
    conditional variance of the pair, until no swap helps.  The returned
    distribution satisfies ``floats_z = Z^T floats`` and
    ``cov_z = Z^T cov Z`` and never has a larger worst-case off-diagonal
    correlation than the input.

    Parameters
    ----------
    dist : AmbiguityDistribution

    Returns
    -------
    AmbiguityDistribution
        Transformed distribution with ``z_matrix`` recording the accumulated
        transform (composed with any transform already present on input).
    """
    n = dist.size
    lower = dist.lower.copy()
    diag = dist.diag.copy()
    floats = dist.floats.copy()
    # Rows of `zt` accumulate Z^T so that floats_z = zt @ floats_original.
    zt = np.eye(n, dtype=np.int64)

    max_sweeps = 10000
    for _ in range(max_sweeps):
        _gauss_reduce(lower, zt, floats)
        # Find the first adjacent pair whose swap lowers the pair's leading
        # conditional variance: new_d[j] = d[j+1] + l^2 d[j] < d[j].
        swapped = False
        for j in range(n - 1):
            lj = lower[j + 1, j]
            new_lead = diag[j + 1] + lj * lj * diag[j]
            if new_lead < diag[j] * (1.0 - 1e-12):
                perm = np.arange(n)
                perm[j], perm[j + 1] = j + 1, j
                zt = zt[perm, :]
                floats = floats[perm]
                # Re-factor the permuted covariance of the current stage.
                cov_z = (lower * diag) @ lower.T
                cov_z = cov_z[np.ix_(perm, perm)]
                lower, diag = ldl_decompose(cov_z)
                swapped = True
                break
        if not swapped:
            break
    else:  # pragma: no cover - safety stop
        raise RuntimeError("decorrelation did not converge")

    cov_z = (lower * diag) @ lower.T
    z_total = (zt @ dist.z_matrix.T).T  # compose with any prior transform
    return AmbiguityDistribution(
        floats=floats,
        covariance=0.5 * (cov_z + cov_z.T),
        z_matrix=z_total,
        lower=lower,
        diag=diag,
    )


def inverse_transform(z_matrix, vector):
    """Map integers from decorrelated space back to the original space.

    The transform is unimodular, so the inverse is exactly integer; the
    float inverse is rounded and verified.
    """
    z_matrix = np.asarray(z_matrix)
    inv = np.linalg.inv(z_matrix.T.astype(float))
    inv_int = round_half_away(inv)
    if not np.allclose(inv_int.astype(float) @ z_matrix.T.astype(float), np.eye(z_matrix.shape[0])):
        raise ValueError("transform is not unimodular")
    return inv_int @ np.asarray(vector, dtype=np.int64)


# ---------------------------------------------------------------------------
# Bootstrapping and acceptance statistics
# ---------------------------------------------------------------------------

def bootstrap(dist: AmbiguityDistribution) -> np.ndarray:
    """Fix ambiguities by sequential conditional rounding.

    The first component is rounded outright; every later component is first
    corrected for the already-committed residuals through the lower factor,
    then rounded.

    Returns
    -------
    ndarray of int, shape (n,)
    """
    cond = dist.floats.astype(float).copy()
    fixed = np.zeros(dist.size, dtype=np.int64)
    lower = dist.lower
    for i in range(dist.size):
        fixed[i] = round_half_away(cond[i])
        resid = cond[i] - fixed[i]
        if i + 1 < dist.size:
            cond[i + 1 :] -= lower[i + 1 :, i] * resid
    return fixed


def search_width(dist: AmbiguityDistribution, fixed=None) -> float:
    """Covariance-weighted squared distance of the bootstrapped integers
    from the floats; used to size the candidate region of the search."""
    if fixed is None:
        fixed = bootstrap(dist)
    return dist.mahalanobis(fixed)


def success_rate(diag, subset_size=None, s_coefficient=1.0, gamma=1.0) -> float:
    """Probability that conditional rounding of the leading subset is correct.

    Evaluates ``prod_i sqrt(1 - exp(-S**gamma / (8 d_i**2)))`` over the first
    ``subset_size`` conditional variances.  With ``s_coefficient = 1`` this is
    the plain bootstrap success probability; an external-evidence factor
    ``S < 1`` tightens the effective variances and lowers the probability,
    scaled by ``gamma`` (typically ``1/m`` for a subset of size ``m``).

    Parameters
    ----------
    diag : array_like
        Conditional variances [cycles^2]; the caller is responsible for any
        desired ordering (ascending for partial resolution).
    subset_size : int, optional
        Number of leading entries to include (default: all).
    s_coefficient : float
        Evidence factor in (0, 1].  Values outside are clamped.
    gamma : float
        Exponent applied to ``s_coefficient``.

    Returns
    -------
    float in [0, 1]
    """
    d = np.asarray(diag, dtype=float)
    if subset_size is None:
        subset_size = d.size
    d = d[:subset_size]
    s = min(max(float(s_coefficient), 1e-300), 1.0)
    numer = s ** gamma
    prob = 1.0
    for di in d:
        if di <= 0.0:
            continue  # already-exact component contributes certainty
        prob *= math.sqrt(max(1.0 - math.exp(-numer / (8.0 * di * di)), 0.0))
    return prob


def discrimination_test(cost_best, cost_second, kappa=KAPPA_DISCRIMINATION) -> bool:
    """True when the runner-up candidate is sufficiently worse than the best.

    The ratio ``cost_second / cost_best`` must exceed ``kappa``.  A degenerate
    tie at zero cost (both candidates sit exactly on the floats) cannot be
    discriminated and is rejected.
    """
    if cost_best < 0.0 or cost_second < cost_best:
        raise ValueError("costs must satisfy 0 <= cost_best <= cost_second")
    if cost_best == 0.0:
        return cost_second > 0.0 and not math.isclose(cost_second, 0.0)
    return (cost_second / cost_best) > kappa


# ---------------------------------------------------------------------------
# Classical integer least-squares search
# ---------------------------------------------------------------------------

def classical_ils_search(dist: AmbiguityDistribution, extra_width=2.0) -> IntegerSearchResult:
    """Depth-first conditional search for the two best integer vectors.

    Minimizes the covariance-weighted squared distance from the floats.  The
    search radius starts at the bootstrap cost plus ``extra_width`` and
    shrinks as better pairs are found, so the enumeration is exact: for small
    problems the result matches brute-force enumeration of the candidate box.

    Returns
    -------
    IntegerSearchResult
        ``degenerate_search`` is set if the region contained only the
        bootstrapped vector.
    """
    n = dist.size
    lower = dist.lower
    diag = dist.diag
    floats = dist.floats

    boot = bootstrap(dist)
    cost_boot = dist.mahalanobis(boot)

    # Two best candidates found so far (cost, tuple).
    best: list[tuple[float, tuple]] = []
    bound = cost_boot

    def consider(cand, cost):
        nonlocal bound
        best.append((cost, tuple(cand)))
        best.sort(key=lambda t: t[0])
        del best[2:]
        if len(best) == 2:
            bound = best[1][0]

    cand = np.zeros(n, dtype=np.int64)

    def descend(level, partial_cost, corrections):
        # Conditional center at this level, given the committed residuals of
        # shallower levels: residuals equal the forward-substitution variable
        # y = L^-1 (cand - floats), so cost accumulates y_i^2 / d_i exactly.
        center = floats[level] + corrections[level]
        base = int(round_half_away(center))
        frac = center - base
        toward = 1 if frac >= 0.0 else -1
        # Enumerate base, base+t, base-t, base+2t, base-2t, ... which is
        # sorted by |cand - center| when t points toward the fractional side,
        # so the first bound violation prunes the whole remainder exactly.
        rank = 0
        while True:
            step = (rank + 1) // 2
            cand_i = base + toward * (step if rank % 2 == 1 else -step)
            rank += 1
            resid = cand_i - center
            cost_here = partial_cost + resid * resid / diag[level]
            if cost_here > bound + 1e-12:
                break
            cand[level] = cand_i
            if level == n - 1:
                consider(cand, cost_here)
            else:
                new_corr = corrections.copy()
                new_corr[level + 1 :] += lower[level + 1 :, level] * resid
                descend(level + 1, cost_here, new_corr)

    # Widen the admission radius until at least two candidates fall inside
    # (the bootstrap vector always does), then the shrinking bound keeps the
    # enumeration exact.
    width = float(extra_width)
    for _ in range(60):
        best.clear()
        bound = cost_boot + width
        descend(0, 0.0, np.zeros(n))
        if len(best) >= 2:
            break
        width = 2.0 * width + 1.0

    if len(best) == 0:  # pragma: no cover - bootstrap always admissible
        best = [(cost_boot, tuple(boot))]
    if len(best) == 1:
        b = np.array(best[0][1], dtype=np.int64)
        return IntegerSearchResult(
            best=b, second_best=b.copy(),
            cost_best=best[0][0], cost_second=best[0][0], cost_init=cost_boot,
            success_prob=success_rate(diag),
            discrimination_ratio=1.0, degenerate_search=True,
        )
    (c1, v1), (c2, v2) = best
    ratio = (c2 / c1) if c1 > 0.0 else np.inf
    return IntegerSearchResult(
        best=np.array(v1, dtype=np.int64),
        second_best=np.array(v2, dtype=np.int64),
        cost_best=c1, cost_second=c2, cost_init=cost_boot,
        success_prob=success_rate(diag),
        discrimination_ratio=float(ratio),
    )


# ---------------------------------------------------------------------------
# Sensor-constrained search
# ---------------------------------------------------------------------------

def candidate_baseline(geometry, ddcp_phases, candidate, wavelength):
    """Relative position implied by a double-difference integer candidate.

    Solves the overdetermined linear system ``G rho = lambda (phi - N)`` in
    the least-squares sense.

    Parameters
    ----------
    geometry : ndarray, shape (k, 3)
        Differenced line-of-sight rows (ECI).
    ddcp_phases : ndarray, shape (k,)
        Double-differenced phases [cycles].
    candidate : ndarray, shape (k,)
        Integer ambiguities for each row [cycles].
    wavelength : float
        Carrier wavelength [m].

    Returns
    -------
    ndarray, shape (3,)
        Baseline vector in the geometry frame [m].

    Raises
    ------
    SingularGeometryError
        If the rows span fewer than three directions.
    """
    g = np.asarray(geometry, dtype=float)
    if g.ndim != 2 or g.shape[1] != 3:
        raise ValueError("geometry must be (k, 3)")
    rhs = float(wavelength) * (np.asarray(ddcp_phases, dtype=float) - np.asarray(candidate, dtype=float))
    gram = g.T @ g
    if g.shape[0] < 3 or np.linalg.matrix_rank(gram, tol=1e-10 * max(np.trace(gram), 1e-30)) < 3:
        raise SingularGeometryError("need three independent lines of sight")
    return np.linalg.solve(gram, g.T @ rhs)


def penalty_cost(computed_range, computed_azimuth, computed_elevation,
                 ctx: ConstraintContext) -> float:
    """Cost of violating the external range/bearing observations.

    Angle residuals are weighted by the inter-satellite range so that the
    angular terms compare on a length-like footing; the range residual is
    weighted by its own variance only.  Disabled observables contribute
    nothing; when ranging is disabled the angle weighting falls back to
    ``ctx.fallback_range``.
    """
    cost = 0.0
    if ctx.range_enabled:
        weight_range = max(ctx.observed_range, 1e-9)
        dr = ctx.observed_range - computed_range
        cost += dr * dr / (ctx.sigma_range ** 2)
    else:
        weight_range = max(ctx.fallback_range if ctx.fallback_range is not None else computed_range, 1e-9)
    if ctx.bearing_enabled:
        da = ctx.observed_azimuth - computed_azimuth
        de = ctx.observed_elevation - computed_elevation
        cost += da * da / (weight_range * ctx.sigma_azimuth ** 2)
        cost += de * de / (weight_range * ctx.sigma_elevation ** 2)
    return cost


def _constraint_cost(dist, ctx, cand_z):
    """Penalty contribution of a decorrelated candidate, via its baseline."""
    if ctx is None or not ctx.any_enabled:
        return 0.0
    cand_orig = inverse_transform(dist.z_matrix, cand_z)
    k = ctx.ddcp_phases.shape[0]
    full = np.zeros(k)
    if ctx.free_rows is None:
        full[:] = cand_orig
    else:
        full[np.asarray(ctx.free_rows)] = cand_orig
    baseline_eci = candidate_baseline(ctx.geometry, ctx.ddcp_phases, full, ctx.wavelength)
    rho = ctx.dcm_eci_to_sensor @ baseline_eci
    rng = float(np.linalg.norm(rho))
    if rng < 1e-12:
        az = 0.0
        el = 0.0
    else:
        az = math.asin(np.clip(rho[1] / rng, -1.0, 1.0))
        el = math.atan2(rho[0], rho[2])
    return penalty_cost(rng, az, el, ctx)


def constrained_search(dist: AmbiguityDistribution, ctx: ConstraintContext = None,
                       step: int = 2) -> IntegerSearchResult:
    """Best-neighbour pattern search over integer candidates with an
    external-sensor penalty added to the ambiguity cost.

    Starting from the bootstrapped vector, each sweep tries displacing every
    component, and every pair of components, by the current stride in each
    sign combination, committing the best improving move (the displaced
    vector becomes the incumbent, the previous incumbent becomes the
    runner-up).  When a sweep yields no improvement the stride shrinks by
    one; the walk ends at stride zero.

    The walk alone can stall: an external observable carves a curved valley
    into the cost surface (all candidates whose implied baseline matches the
    measured range form a shell crossing the lattice obliquely), and cells on
    that shell can beat every probed neighbour without being the minimum.
    Since the penalty is non-negative, any candidate beating the incumbent
    must keep its pure covariance-weighted distance below the incumbent's
    total cost, so the search finishes with a conditional-tree enumeration
    over that shrinking ellipsoid, which makes the returned minimum exact
    (up to a leaf-count safety cap).  With every external observable
    disabled the cost reduces to the classical objective and the result
    matches exhaustive enumeration.

    Parameters
    ----------
    dist : AmbiguityDistribution
        Typically decorrelated; candidates are produced in its space.
    ctx : ConstraintContext, optional
        External evidence.  ``None`` disables the penalty.
    step : int
        Initial stride [cycles], default 2.

    Returns
    -------
    IntegerSearchResult

    Raises
    ------
    SingularGeometryError
        If the penalty is enabled but the geometry cannot support a
        baseline solution; callers should fall back to
        :func:`classical_ils_search`.
    """
    n = dist.size

    def total_cost(cand):
        return dist.mahalanobis(cand) + _constraint_cost(dist, ctx, cand)

    incumbent = bootstrap(dist)
    cost_incumbent = total_cost(incumbent)
    cost_init = cost_incumbent
    runner = incumbent.copy()
    cost_runner = cost_incumbent

    axes_groups = [(i,) for i in range(n)]
    axes_groups += [(i, j) for i in range(n) for j in range(i + 1, n)]
    stride = int(step)
    while stride > 0:
        base = incumbent.copy()
        improved = False
        for axes in axes_groups:
            best_move = None
            best_move_cost = np.inf
            for signs in itertools.product((-stride, stride), repeat=len(axes)):
                cand = incumbent.copy()
                for ax, delta in zip(axes, signs):
                    cand[ax] += delta
                c = total_cost(cand)
                if c < best_move_cost:
                    best_move_cost = c
                    best_move = cand
            if best_move_cost < cost_incumbent:
                runner, cost_runner = incumbent, cost_incumbent
                incumbent, cost_incumbent = best_move, best_move_cost
                improved = True
        if improved:
            # Acceleration move: repeat the net displacement of the whole
            # sweep, so the walk can track a valley floor that runs obliquely
            # to every probed axis pair.
            pattern = incumbent + (incumbent - base)
            cost_pattern = total_cost(pattern)
            if cost_pattern < cost_incumbent:
                runner, cost_runner = incumbent, cost_incumbent
                incumbent, cost_incumbent = pattern, cost_pattern
        else:
            stride -= 1

    # Exact finish: enumerate every candidate whose covariance-weighted
    # distance stays below the best total cost seen (pruned by the runner-up
    # bound so the second best is exact too, where the budget allows).
    lower = dist.lower
    diag = dist.diag
    floats = dist.floats
    leaf_budget = 20_000

    def consider_total(vec, total):
        nonlocal incumbent, cost_incumbent, runner, cost_runner
        if np.array_equal(vec, incumbent) or (
                total >= cost_runner and not np.array_equal(vec, runner)):
            return
        if np.array_equal(vec, runner):
            cost_runner = min(cost_runner, total)
        elif total < cost_incumbent:
            runner, cost_runner = incumbent, cost_incumbent
            incumbent, cost_incumbent = vec.copy(), total
        else:
            runner, cost_runner = vec.copy(), total
        if cost_runner < cost_incumbent:
            incumbent, cost_incumbent, runner, cost_runner = (
                runner, cost_runner, incumbent, cost_incumbent)

    cand = np.zeros(n, dtype=np.int64)

    def descend(level, partial_cost, corrections):
        nonlocal leaf_budget
        center = floats[level] + corrections[level]
        base = int(round_half_away(center))
        frac = center - base
        toward = 1 if frac >= 0.0 else -1
        rank = 0
        while leaf_budget > 0:
            step_k = (rank + 1) // 2
            cand_i = base + toward * (step_k if rank % 2 == 1 else -step_k)
            rank += 1
            resid = cand_i - center
            cost_here = partial_cost + resid * resid / diag[level]
            if cost_here > max(cost_runner, cost_incumbent) + 1e-12:
                break
            cand[level] = cand_i
            if level == n - 1:
                leaf_budget -= 1
                consider_total(cand, cost_here + _constraint_cost(dist, ctx, cand))
            else:
                new_corr = corrections.copy()
                new_corr[level + 1:] += lower[level + 1:, level] * resid
                descend(level + 1, cost_here, new_corr)

    descend(0, 0.0, np.zeros(n))

    degenerate = bool(np.array_equal(incumbent, runner))
    ratio = (cost_runner / cost_incumbent) if cost_incumbent > 0.0 else (
        np.inf if cost_runner > 0.0 else 1.0)
    return IntegerSearchResult(
        best=incumbent,
        second_best=runner,
        cost_best=float(cost_incumbent),
        cost_second=float(cost_runner),
        cost_init=float(cost_init),
        success_prob=success_rate(dist.diag),
        discrimination_ratio=float(ratio if not degenerate else 1.0),
        degenerate_search=degenerate,
    )


# ---------------------------------------------------------------------------
# Partial resolution
# ---------------------------------------------------------------------------

def _prefix_cost(dist, order, m, vector):
    """Covariance-weighted distance of a candidate restricted to a subset.

    Uses the marginal covariance of the ``m`` leading components in the given
    order.
    """
    idx = order[:m]
    sub = dist.covariance[np.ix_(idx, idx)]
    r = np.asarray(vector, dtype=float)[idx] - dist.floats[idx]
    return float(r @ np.linalg.solve(sub, r))


def partial_resolve(dist: AmbiguityDistribution, result: IntegerSearchResult,
                    kappa_success=KAPPA_SUCCESS,
                    kappa_discrimination=KAPPA_DISCRIMINATION,
                    use_shrink=True) -> PartialFix:
    """Select the largest well-determined prefix of ambiguities to fix.

    Components are ordered by ascending conditional variance.  The subset is
    grown one component at a time; each size ``m`` must pass the modified
    success test (with evidence factor ``S = cost_best / cost_init`` raised
    to ``1/m``) and a discrimination test on the subset (runner-up must be at
    least ``kappa_discrimination`` times worse over the subset components,
    unless the two candidates agree there).  Growth stops at the first size
    that fails; the previous size is returned.

    With ``use_shrink=False`` the evidence factor is pinned to one (the
    plain acceptance test), appropriate when the search ran without
    external-sensor constraints.

    Returns
    -------
    PartialFix
        ``subset_size`` zero means nothing was accepted.  Component indices
        refer to the distribution's own (decorrelated) ordering.  Also
        mirrors the accepted size onto ``result.accepted_subset_size``.
    """
    n = dist.size
    order = np.argsort(dist.diag, kind="stable")

    if use_shrink and result.cost_init > 0.0:
        shrink = min(max(result.cost_best / result.cost_init, 1e-300), 1.0)
    else:
        shrink = 1.0

    accepted = 0
    for m in range(1, n + 1):
        gamma = 1.0 / m
        prob = success_rate(dist.diag[order], subset_size=m,
                            s_coefficient=shrink, gamma=gamma)
        if prob <= kappa_success:
            break
        if not np.array_equal(result.best[order[:m]], result.second_best[order[:m]]):
            cb = _prefix_cost(dist, order, m, result.best)
            cs = _prefix_cost(dist, order, m, result.second_best)
            lo, hi = min(cb, cs), max(cb, cs)
            if not discrimination_test(lo, hi, kappa_discrimination):
                break
        accepted = m

    result.accepted_subset_size = accepted
    idx = order[:accepted]
    return PartialFix(
        indices=np.asarray(idx, dtype=np.int64),
        values=np.asarray(result.best, dtype=np.int64)[idx],
        subset_size=accepted,
        success_prob=success_rate(dist.diag[order], subset_size=accepted,
                                  s_coefficient=shrink,
                                  gamma=(1.0 / accepted) if accepted else 1.0),
        shrink_factor=shrink,
    )
