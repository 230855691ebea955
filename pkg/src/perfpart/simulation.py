"""Monte Carlo oracle for the closed forms.

Paths are exact lognormal (no discretization bias). Normals come from
counter-based Philox streams, one stream per block of ``BLOCK`` base paths,
derived from ``(seed, block index)``. Every block writes to its own slice of
the output, so results are bit-identical for any thread count.

With antithetic variates the first half of the paths uses ``Z`` and the
second half ``-Z``; path ``j`` and path ``j + n/2`` form a pair and standard
errors are computed over pair averages.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ValidationError
from .market import MarketParams, SingleAssetMarket, log_expected_power_s1
from .moments import MAX_ORDER, MomentVector, central_moments
from .strategies import StrategySpec, terminal_value

BLOCK = 1 << 15
THREADS_ENV = "PERFPART_THREADS"
DEFAULT_PATHS = 1_000_000


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def block_generator(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox stream for one block of paths."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def map_blocks(fn, n_items: int, threads: int | None = None, block: int = BLOCK):
    """Run ``fn(block_index, start, stop)`` over fixed-size blocks, in parallel."""
    n_blocks = -(-n_items // block)
    jobs = [(b, b * block, min((b + 1) * block, n_items)) for b in range(n_blocks)]
    threads = default_threads() if threads is None else threads
    if threads <= 1 or n_blocks <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=min(threads, n_blocks)) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Sampled asset prices.

    ``s1``/``s2`` hold terminal prices and ``brownian`` the terminal values
    ``W(T)`` of the two driving Brownian motions, shape ``(n_paths, 2)``. For a single-asset market ``s1`` is the
    cash account ``exp(r*t)`` and ``s2`` the risky asset. ``s1_path`` and
    ``s2_path`` have shape ``(n_steps + 1, n_paths)`` when stepwise states
    were kept.
    """

    n_paths: int
    n_steps: int
    seed: int
    T: float
    s1_0: float
    s2_0: float
    s1: np.ndarray
    s2: np.ndarray
    antithetic: bool
    s1_path: np.ndarray | None = None
    s2_path: np.ndarray | None = None
    weights: np.ndarray | None = None
    brownian: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_paths: int


def _loadings(market):
    """Drift of log-prices and the volatility matrix, for both market types."""
    if isinstance(market, MarketParams):
        drift = np.array([market.mu1 - 0.5 * market.sigma1**2, market.mu2 - 0.5 * market.sigma2**2])
        return drift, market.sigma_matrix
    if isinstance(market, SingleAssetMarket):
        drift = np.array([market.r, market.mu - 0.5 * market.sigma**2])
        return drift, np.array([[0.0, 0.0], [market.sigma, 0.0]])
    raise TypeError(f"unsupported market type {type(market).__name__}")


def sample_paths(
    market: MarketParams | SingleAssetMarket,
    s1_0: float,
    s2_0: float,
    T: float,
    n_steps: int = 1,
    n_paths: int = DEFAULT_PATHS,
    seed: int = 0,
    antithetic: bool = True,
    keep_steps: bool = False,
    threads: int | None = None,
    tilt=None,
    stream: int = 0,
) -> PathBatch:
    """Exact correlated-GBM paths on an equidistant grid of ``n_steps`` steps.

    For a :class:`SingleAssetMarket`, ``s1_0`` is the initial cash balance
    and ``s2_0`` the initial risky price.

    ``tilt`` (two numbers, in units of the standard normal per unit
    sqrt-time) shifts the mean of the driving Brownian motion for importance
    sampling. The batch then carries likelihood-ratio ``weights``;
    antithetic partners reflect around the shifted mean. ``stream`` selects
    an independent family of random streams for the same ``seed``.
    """
    if n_steps < 1 or n_paths < 1:
        raise ValidationError("need n_steps >= 1 and n_paths >= 1")
    if antithetic and n_paths % 2:
        raise ValidationError("antithetic sampling needs an even number of paths")
    if not (s1_0 > 0 and s2_0 > 0 and T > 0):
        raise ValidationError("need positive initial prices and horizon")
    drift, sig = _loadings(market)
    dt = T / n_steps
    n_base = n_paths // 2 if antithetic else n_paths
    log0 = np.log([s1_0, s2_0])
    s1_T = np.empty(n_paths)
    s2_T = np.empty(n_paths)
    p1 = np.empty((n_steps + 1, n_paths)) if keep_steps else None
    p2 = np.empty((n_steps + 1, n_paths)) if keep_steps else None
    signs = (1.0, -1.0) if antithetic else (1.0,)
    theta = None if tilt is None else np.asarray(tilt, dtype=float) * math.sqrt(dt)
    weights = None if theta is None else np.empty(n_paths)
    w_T = np.empty((n_paths, 2))

    def work(b, start, stop):
        eps = block_generator(seed, b, stream).standard_normal((n_steps, stop - start, 2))
        for h, sgn in enumerate(signs):
            sl = slice(start + h * n_base, stop + h * n_base)
            z = sgn * eps if theta is None else theta + sgn * eps
            if theta is not None:
                log_lr = -(z @ theta).sum(axis=0) + 0.5 * n_steps * float(theta @ theta)
                weights[sl] = np.exp(log_lr)
            w_T[sl] = z.sum(axis=0) * math.sqrt(dt)
            incr = drift * dt + z @ sig.T * math.sqrt(dt)
            if keep_steps:
                logs = log0 + np.cumsum(incr, axis=0)
                p1[0, sl], p2[0, sl] = s1_0, s2_0
                p1[1:, sl] = np.exp(logs[..., 0])
                p2[1:, sl] = np.exp(logs[..., 1])
                s1_T[sl], s2_T[sl] = p1[-1, sl], p2[-1, sl]
            else:
                logs = log0 + incr.sum(axis=0)
                s1_T[sl] = np.exp(logs[:, 0])
                s2_T[sl] = np.exp(logs[:, 1])

    map_blocks(work, n_base, threads)
    return PathBatch(
        n_paths, n_steps, seed, T, float(s1_0), float(s2_0), s1_T, s2_T, antithetic, p1, p2, weights, w_T
    )


def radon_nikodym_weights(batch: PathBatch, params: MarketParams, k: int) -> np.ndarray:
    """Density ``S1(T)**k / E[S1(T)**k]`` of the measure P~_k, per path."""
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    if k == 0:
        return np.ones(batch.n_paths)
    log_norm = log_expected_power_s1(params, batch.s1_0, k, batch.T)
    return np.exp(k * np.log(batch.s1) - log_norm)


def with_weights(batch: PathBatch, params: MarketParams, k: int) -> PathBatch:
    from dataclasses import replace

    return replace(batch, weights=radon_nikodym_weights(batch, params, k))


def _discrete_values(spec, market, batch: PathBatch, n_rebalance: int, derisk_on_breach: bool):
    if batch.s1_path is None:
        raise ValidationError("discrete rebalancing needs stepwise paths (keep_steps=True)")
    if batch.n_steps % n_rebalance:
        raise ValidationError(
            f"n_steps={batch.n_steps} is not a multiple of the rebalance count {n_rebalance}"
        )
    stride = batch.n_steps // n_rebalance
    s1 = batch.s1_path[::stride]
    s2 = batch.s2_path[::stride]
    if spec.kind == "cppp":
        floor_units = spec.alpha
        v = np.full(batch.n_paths, spec.v0)
    elif spec.kind == "cppi":
        # The floor alpha*v0*exp(-r(T-t)) is a fixed number of cash-account units.
        floor_units = spec.alpha * spec.v0 * math.exp(-market.r * spec.T) / batch.s1_0
        v = np.full(batch.n_paths, spec.v0)
    else:
        raise ValidationError("discrete rebalancing is defined for CPPP/CPPI")
    for i in range(n_rebalance):
        cushion = v - floor_units * s1[i]
        if derisk_on_breach:
            cushion = np.maximum(cushion, 0.0)
        e2 = spec.m * cushion
        phi2 = e2 / s2[i]
        phi1 = (v - e2) / s1[i]
        v = phi1 * s1[i + 1] + phi2 * s2[i + 1]
    return v


def simulate_strategy(
    spec: StrategySpec,
    market: MarketParams | SingleAssetMarket,
    batch: PathBatch,
    rebalance: Literal["continuous"] | int = "continuous",
    derisk_on_breach: bool = True,
) -> np.ndarray:
    """Terminal strategy values on every path of ``batch``.

    ``rebalance="continuous"`` evaluates the closed-form terminal value on the
    terminal prices. An integer ``n`` rebalances a CPPP/CPPI ``n`` times at
    equidistant dates, holding share counts fixed in between. With
    ``derisk_on_breach`` a negative cushion is floored at zero, which leaves
    the portfolio entirely in the reserve asset; without it the exposure
    follows the signed cushion.
    """
    if rebalance == "continuous":
        if spec.kind in ("obpp", "cppp"):
            return terminal_value(spec, market, batch.s1, batch.s2)
        return terminal_value(spec, market, batch.s2)
    if isinstance(rebalance, int) and rebalance >= 1:
        return _discrete_values(spec, market, batch, rebalance, derisk_on_breach)
    raise ValidationError(f"rebalance must be 'continuous' or a positive int, got {rebalance!r}")


def payoff_exponents(spec: StrategySpec, k: int) -> list[tuple[float, float]]:
    """Exponents ``(a, b)`` of the monomials ``S1**a * S2**b`` that make up
    the ``k``-th power of the terminal payoff (up to constant factors).

    For the single-asset strategies ``S1`` is the cash account and ``S2``
    the risky asset.
    """
    if spec.kind == "obpp":
        return [(k, 0.0), (0.0, k)]
    if spec.kind == "cppp":
        return [(k - spec.m * j, spec.m * j) for j in range(k + 1)]
    if spec.kind == "obpi":
        return [(0.0, 0.0), (0.0, k)]
    return [(0.0, spec.m * j) for j in range(k + 1)]


def mixture_tilts(spec: StrategySpec, market, k: int) -> np.ndarray:
    """One Brownian drift per payoff monomial, centring the sampler on it."""
    _, sig = _loadings(market)
    return np.array([sig.T @ np.asarray(w, dtype=float) for w in payoff_exponents(spec, k)])


def estimate_raw_moment_tilted(
    spec: StrategySpec,
    market: MarketParams | SingleAssetMarket,
    k: int,
    n_paths: int = DEFAULT_PATHS,
    seed: int = 0,
    antithetic: bool = True,
    threads: int | None = None,
) -> McEstimate:
    """``E[V(T)**k]`` by importance sampling from a mixture of tilted measures.

    Plain sampling breaks down for heavy-tailed payoffs: with a large CPPP
    multiplier the sample of ``V**4`` never reaches the region that carries
    its mean, and the sample standard error is off by orders of magnitude.
    Here ``n_paths`` are split evenly over one exponentially tilted measure
    per payoff monomial (see :func:`payoff_exponents`) and reweighted with
    the balance heuristic ``dP/dQ = 1 / mean_j dQ_j/dP``, which keeps every
    weight bounded on the region its own monomial dominates. Components are
    treated as strata for the standard error.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    thetas = mixture_tilts(spec, market, k)
    n_comp = len(thetas)
    n_each = n_paths // n_comp
    if antithetic:
        n_each -= n_each % 2
    if n_each < 4:
        raise ValidationError(f"n_paths={n_paths} is too small for {n_comp} mixture components")
    T = spec.T
    if isinstance(market, MarketParams):
        s1_0, s2_0 = spec.s1_start, spec.s2_start
    else:
        s1_0, s2_0 = 1.0, market.s0
    half_sq = 0.5 * np.einsum("ij,ij->i", thetas, thetas) * T
    means, variances = [], []
    for j, theta in enumerate(thetas):
        b = sample_paths(
            market, s1_0, s2_0, T, n_paths=n_each, seed=seed, antithetic=antithetic,
            threads=threads, tilt=theta, stream=j + 1,
        )
        log_lr = b.brownian @ thetas.T - half_sq
        lmax = log_lr.max(axis=1, keepdims=True)
        w = np.exp(-lmax[:, 0]) * n_comp / np.exp(log_lr - lmax).sum(axis=1)
        u = _units(simulate_strategy(spec, market, b) ** k * w, antithetic)
        means.append(u.mean())
        variances.append(u.var(ddof=1) / u.size)
    value = float(np.mean(means))
    se = math.sqrt(math.fsum(variances)) / n_comp
    return McEstimate(value, se, n_each * n_comp)


def _units(x: np.ndarray, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return x
    n = x.shape[0]
    if n % 2:
        raise ValidationError("antithetic samples come in pairs; got an odd count")
    return 0.5 * (x[: n // 2] + x[n // 2 :])


def mc_mean(x, antithetic: bool = True) -> McEstimate:
    x = np.asarray(x, dtype=float)
    u = _units(x, antithetic)
    if u.size < 2:
        raise ValidationError("need at least two independent units")
    return McEstimate(float(u.mean()), float(u.std(ddof=1) / math.sqrt(u.size)), x.size)


def _stats_from_raw(m):
    """(mean, std, skewness, raw kurtosis) from raw moments; complex-safe."""
    m1, m2, m3, m4 = (list(m) + [0.0] * 4)[:4]
    mu2 = m2 - m1 * m1
    mu3 = m3 - 3 * m1 * m2 + 2 * m1**3
    mu4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1**4
    return m1, mu2**0.5, mu3 / mu2**1.5, mu4 / mu2**2


def estimate_moments(
    payoffs,
    K: int = 4,
    v0: float | None = None,
    dimension: Literal["value", "return"] = "value",
    antithetic: bool = True,
    weights=None,
) -> MomentVector:
    """Sample raw moments ``m_1..m_K`` with standard errors.

    Raw moments are plain sample means of ``x**k`` (unbiased). Standard errors
    of the raw moments come from the sample covariance of the per-unit powers;
    those of mean, std, skewness and kurtosis from the delta method, with
    gradients taken by complex step. ``std_errors`` keys are ``"m1".."mK"``
    and ``"mean"``, ``"std"``, ``"skewness"``, ``"kurtosis"`` (in the
    requested dimension). ``weights`` multiply each sample, for estimating
    expectations under a reweighted measure.
    """
    x = np.asarray(payoffs, dtype=float)
    if not 1 <= K <= MAX_ORDER:
        raise ValidationError(f"K must lie in [1, {MAX_ORDER}], got {K}")
    if x.size < 2:
        raise ValidationError("need at least two samples")
    powers = np.stack([x**k for k in range(1, K + 1)], axis=1)
    if weights is not None:
        powers = powers * np.asarray(weights, dtype=float)[:, None]
    u = _units(powers, antithetic)
    n = u.shape[0]
    raw = u.mean(axis=0)
    cov = np.atleast_2d(np.cov(u, rowvar=False)) / n
    errors = {f"m{k}": float(math.sqrt(max(cov[k - 1, k - 1], 0.0))) for k in range(1, K + 1)}
    if K < 2:
        return MomentVector((float(raw[0]),), (), float(raw[0]), math.nan, math.nan, math.nan, "value", v0, True, errors)
    mv = central_moments(raw, v0=v0, dimension=dimension)
    if not mv.degenerate:
        scale = (1.0 / v0) if dimension == "return" else 1.0
        names = ("mean", "std", "skewness", "kurtosis")
        kk = min(K, 4)
        for j, name in enumerate(names[: 2 if kk < 3 else kk]):
            grad = np.zeros(kk)
            for i in range(kk):
                h = 1e-20 * max(abs(raw[i]), 1e-300)
                mc = raw[:kk].astype(complex)
                mc[i] += 1j * h
                grad[i] = _stats_from_raw(mc)[j].imag / h
            var = float(grad @ cov[:kk, :kk] @ grad)
            se = math.sqrt(max(var, 0.0))
            errors[name] = se * scale if name in ("mean", "std") else se
    return MomentVector(
        raw=mv.raw,
        central=mv.central,
        mean=mv.mean,
        std=mv.std,
        skewness=mv.skewness,
        kurtosis=mv.kurtosis,
        dimension=mv.dimension,
        v0=v0,
        degenerate=mv.degenerate,
        std_errors=errors,
    )


@dataclass(frozen=True)
class ConventionVerdict:
    """Outcome of matching reported kurtosis figures against MC estimates.

    ``convention`` is ``"raw"``, ``"excess"`` or ``"undetermined"``.
    ``resolved`` lists the columns whose MC standard error is small enough
    to tell the two conventions apart (they differ by exactly 3).
    """

    convention: str
    resolved: tuple[int, ...]
    z_raw: tuple[float, ...]
    z_excess: tuple[float, ...]


def kurtosis_convention(reported, estimates, z: float = 3.0) -> ConventionVerdict:
    """Decide whether reported kurtosis figures are raw ``mu4/mu2**2`` or excess.

    A column is resolved when ``2 * z * SE < 3``. Each convention is accepted
    when every resolved column lies within ``z`` standard errors of it; the
    verdict is undetermined when neither, or both, survive or no column is
    resolved.
    """
    z_raw, z_exc, resolved = [], [], []
    for i, (rep, est) in enumerate(zip(reported, estimates)):
        se = est.std_errors.get("kurtosis", math.nan)
        zr = (est.kurtosis - rep) / se if se > 0 else math.inf
        ze = (est.kurtosis - 3.0 - rep) / se if se > 0 else math.inf
        z_raw.append(zr)
        z_exc.append(ze)
        if se > 0 and 2 * z * se < 3.0:
            resolved.append(i)
    raw_ok = bool(resolved) and all(abs(z_raw[i]) <= z for i in resolved)
    exc_ok = bool(resolved) and all(abs(z_exc[i]) <= z for i in resolved)
    verdict = "raw" if raw_ok and not exc_ok else "excess" if exc_ok and not raw_ok else "undetermined"
    return ConventionVerdict(verdict, tuple(resolved), tuple(z_raw), tuple(z_exc))
