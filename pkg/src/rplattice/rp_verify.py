"""Reflection-positivity verification engines.

The object under test is always a Gram matrix

    M[m, n] = (characteristic function of the measure)(phi_m - theta phi_n)

over a finite family of positive-time test functions: the measure is
reflection positive exactly when every such matrix is positive semidefinite.
Three estimators produce GramReports:

* exact Gaussian entries from the covariance quadratic form,
* a direct Monte Carlo average of exp[i T(phi_m - theta phi_n)] weighted by
  exp of the interaction density, and
* a two-level factorized estimator that integrates partial averages H_m over
  the independent half-draw against the shared draw. With shared inner
  samples every outer draw contributes a rank-one Hermitian matrix, so the
  estimate is positive semidefinite by construction at the price of an
  O(1/n_inner) bias; with independent inner samples the entries are
  unbiased products but the structural guarantee is lost.

Verdicts are three-valued. An estimate passes when its smallest eigenvalue
clears -tol - 5 * eig_error_bound, where eig_error_bound is the coarse
Frobenius-type bound K * max entrywise standard error. Below the gate the
verdict is a fail only when the sign survives a bootstrap over sample
chunks; otherwise the run is inconclusive. Estimates are never divided by
the weight sum: the weighted measure is a finite measure, not a probability
measure, and its total mass is part of what the Gram matrix encodes.
"""

import math
from dataclasses import dataclass

import numpy as np

from .density import eval_potential_batch
from .gaussian import (
    char_fn,
    check_theta_invariance,
    covariance_factor,
    decompose_pq,
    iter_sample_chunks,
)
from .lattice import embed_plus, positive_support, reflect, restrict_plus
from .streams import NS_BOOTSTRAP, NS_FACTORIZED, NS_TESTFN, substream

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

DEFAULT_GRAM_TOL = 1e-10

_OUTER_CHUNK = 64
_N_BOOTSTRAP = 200
_STABLE_FRACTION = 0.99


class IllConditionedWeightsError(RuntimeError):
    """exp of the density overflowed; the importance weights are unusable."""


@dataclass(frozen=True)
class PsdCheck:
    verdict: str
    min_eigenvalue: float
    threshold: float


@dataclass(frozen=True)
class McParams:
    """Sample counts and seed for the Monte Carlo estimators."""

    n_samples: int
    seed: int
    n_outer: int = 10_000
    n_inner: int = 1_000
    share_inner: bool = True

    def __post_init__(self):
        for name in ("n_samples", "n_outer", "n_inner"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class GramReport:
    """Gram estimate with statistical error and a PSD verdict.

    matrix is the hermitized estimate; hermiticity_gap records the max
    entrywise deviation before symmetrization, a self-consistency
    diagnostic. stderr combines the standard errors of the real and
    imaginary parts per entry and is identically zero for exact entries.
    """

    matrix: np.ndarray
    stderr: np.ndarray
    min_eigenvalue: float
    eig_error_bound: float
    verdict: str
    n_samples: int
    seed: int | None
    estimator_kind: str
    effective_sample_size: float | None
    hermiticity_gap: float
    tol: float

    def to_json_dict(self):
        return {
            "matrix_re": self.matrix.real.tolist(),
            "matrix_im": self.matrix.imag.tolist(),
            "stderr": self.stderr.tolist(),
            "min_eigenvalue": self.min_eigenvalue,
            "eig_error_bound": self.eig_error_bound,
            "verdict": self.verdict,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "estimator_kind": self.estimator_kind,
            "effective_sample_size": self.effective_sample_size,
        }


def psd_check(matrix, tol, eig_error_bound=0.0):
    """Gate the smallest eigenvalue of a (hermitized) matrix.

    Passes when min eig >= -tol - 5 * eig_error_bound, fails otherwise;
    estimators may downgrade a fail to inconclusive via bootstrap.
    """
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    h = (m + np.conj(m.T)) / 2.0
    min_eig = float(np.linalg.eigvalsh(h).min()) if h.size else 0.0
    threshold = -float(tol) - 5.0 * float(eig_error_bound)
    verdict = PASS if min_eig >= threshold else FAIL
    return PsdCheck(verdict, min_eig, threshold)


def schur_product(a, b):
    """Entrywise product of two equally shaped square matrices.

    Preserves positive semidefiniteness; the test battery checks that
    property against an eigensolver rather than assuming it.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def random_test_functions(lattice, count, seed):
    """count standard-normal vectors on the positive half plus the zero vector.

    Deterministic given seed. The zero vector is a legal test function and
    calibrates the normalization entry of the Gram matrix.
    """
    rng = substream(seed, NS_TESTFN, 0)
    block = rng.standard_normal((int(count), lattice.n_plus))
    phis = [embed_plus(lattice, row) for row in block]
    phis.append(np.zeros(lattice.site_count))
    return phis


def _require_positive_support(lattice, phis):
    for i, phi in enumerate(phis):
        if not positive_support(lattice, phi):
            raise ValueError(f"test function {i} is not supported on positive times")


def small_lambda_probe(cov, lattice, phi, lambdas):
    """Second-difference probe of the Gram form that tends to theta_inner.

    probe(s) = [cf(s*(phi - theta phi)) - 2 cf(s*phi) + 1] / s^2 for the
    Gaussian characteristic function cf; the error is O(s^2).
    """
    phi = np.asarray(phi, dtype=np.float64)
    _require_positive_support(lattice, [phi])
    diff = phi - reflect(lattice, phi)
    out = []
    for lam in lambdas:
        lam = float(lam)
        if lam <= 0:
            raise ValueError(f"probe scale must be positive, got {lam}")
        value = (char_fn(cov, lam * diff) - 2.0 * char_fn(cov, lam * phi) + 1.0) / lam**2
        out.append(value)
    return out


def gram_exact_gaussian(cov, lattice, phis, tol=DEFAULT_GRAM_TOL):
    """Exact Gaussian Gram matrix; entries are closed-form, stderr is zero."""
    _require_positive_support(lattice, phis)
    inv = check_theta_invariance(cov, lattice)
    if not inv.passed:
        import warnings

        warnings.warn(
            f"covariance is not reflection invariant (deviation {inv.deviation:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    k = len(phis)
    thetas = [reflect(lattice, phi) for phi in phis]
    m = np.zeros((k, k), dtype=np.complex128)
    for i in range(k):
        for j in range(k):
            d = np.asarray(phis[i], dtype=np.float64) - thetas[j]
            m[i, j] = char_fn(cov, d)
    check = psd_check(m, tol)
    return GramReport(
        matrix=(m + np.conj(m.T)) / 2.0,
        stderr=np.zeros((k, k)),
        min_eigenvalue=check.min_eigenvalue,
        eig_error_bound=0.0,
        verdict=check.verdict,
        n_samples=0,
        seed=None,
        estimator_kind="exact-gaussian",
        effective_sample_size=None,
        hermiticity_gap=0.0,
        tol=float(tol),
    )


def _stable_below(chunk_counts_arr, chunk_sums, threshold, seed):
    """Bootstrap over chunk sums: does the failing sign persist?"""
    counts = np.asarray(chunk_counts_arr, dtype=np.float64)
    sums = np.stack(chunk_sums)
    n_chunks = counts.shape[0]
    rng = substream(seed, NS_BOOTSTRAP, 0)
    idx = rng.integers(0, n_chunks, size=(_N_BOOTSTRAP, n_chunks))
    below = 0
    for row in idx:
        m = sums[row].sum(axis=0) / counts[row].sum()
        m = (m + np.conj(m.T)) / 2.0
        if float(np.linalg.eigvalsh(m).min()) < threshold:
            below += 1
    return below >= math.ceil(_STABLE_FRACTION * _N_BOOTSTRAP)


def _finish_mc_report(
    raw, sum_re2, sum_im2, n, tol, seed, kind, ess, chunk_n, chunk_sums
):
    k = raw.shape[0]
    mean = raw / n
    var_re = np.maximum(sum_re2 - n * mean.real**2, 0.0) / max(n - 1, 1)
    var_im = np.maximum(sum_im2 - n * mean.imag**2, 0.0) / max(n - 1, 1)
    stderr = np.sqrt((var_re + var_im) / n)
    herm_gap = float(np.abs(mean - np.conj(mean.T)).max())
    matrix = (mean + np.conj(mean.T)) / 2.0
    eig_error_bound = float(k * stderr.max()) if stderr.size else 0.0
    min_eig = float(np.linalg.eigvalsh(matrix).min())
    threshold = -float(tol) - 5.0 * eig_error_bound
    if min_eig >= threshold:
        verdict = PASS
    elif _stable_below(chunk_n, chunk_sums, threshold, seed):
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    return GramReport(
        matrix=matrix,
        stderr=stderr,
        min_eigenvalue=min_eig,
        eig_error_bound=eig_error_bound,
        verdict=verdict,
        n_samples=int(n),
        seed=int(seed),
        estimator_kind=kind,
        effective_sample_size=ess,
        hermiticity_gap=herm_gap,
        tol=float(tol),
    )


def gram_mc_direct(cov, lattice, f, phis, params, tol=DEFAULT_GRAM_TOL):
    """Direct Monte Carlo Gram estimate for the density-weighted measure.

    M[m, n] = (1/n) sum_k exp[i T_k(phi_m) - i T_k(theta phi_n) + F(T_k)]
    over field draws T_k from the Gaussian base measure. The weights
    w = exp F are used raw (no normalization); their effective sample size
    sum(w)/max(w) is reported as a degeneracy diagnostic.
    """
    _require_positive_support(lattice, phis)
    k = len(phis)
    phi_mat = np.stack([np.asarray(p, dtype=np.float64) for p in phis], axis=1)
    theta_mat = np.stack([reflect(lattice, p) for p in phis], axis=1)

    raw = np.zeros((k, k), dtype=np.complex128)
    sum_re2 = np.zeros((k, k))
    sum_im2 = np.zeros((k, k))
    chunk_n = []
    chunk_sums = []
    w_sum = 0.0
    w_max = 0.0
    for _, block in iter_sample_chunks(cov, params.n_samples, params.seed):
        a = block @ phi_mat
        b = block @ theta_mat
        with np.errstate(over="ignore"):
            w = np.exp(eval_potential_batch(f, block))
        if not np.all(np.isfinite(w)):
            raise IllConditionedWeightsError(
                "exp of the density overflowed while weighting samples"
            )
        contrib = w[:, np.newaxis, np.newaxis] * np.exp(1j * (a[:, :, np.newaxis] - b[:, np.newaxis, :]))
        s = contrib.sum(axis=0)
        raw += s
        sum_re2 += (contrib.real**2).sum(axis=0)
        sum_im2 += (contrib.imag**2).sum(axis=0)
        chunk_n.append(block.shape[0])
        chunk_sums.append(s)
        w_sum += float(w.sum())
        w_max = max(w_max, float(w.max()))
    ess = w_sum / w_max if w_max > 0 else 0.0
    return _finish_mc_report(
        raw,
        sum_re2,
        sum_im2,
        params.n_samples,
        tol,
        params.seed,
        "mc-direct",
        ess,
        chunk_n,
        chunk_sums,
    )


def gram_mc_factorized(cov, lattice, g, phis, params, tol=DEFAULT_GRAM_TOL):
    """Two-level Gram estimate through the half-lattice factorization.

    Outer draws L come from the shared covariance c_q, inner draws T from
    the independent covariance c_p; the partial averages

        H_m(L) = inner mean of exp[-i (T + L) . h_m + G(T + L)]

    pair into M[m, n] = outer mean of conj(H_m) H_n, where h_m is phi_m
    restricted to the positive half and G is the half-density. Requires a
    reflection-positive covariance: both decomposition blocks must be PSD,
    otherwise the factorization does not exist and the call fails fast.
    n_samples on the report counts outer draws.
    """
    _require_positive_support(lattice, phis)
    pq = decompose_pq(cov, lattice)
    if not pq.both_psd:
        raise ValueError(
            "factorized estimator needs a reflection-positive covariance: "
            f"decomposition eigenvalue floors are {pq.report_p.min_eigenvalue:.3e} (independent) "
            f"and {pq.report_q.min_eigenvalue:.3e} (shared)"
        )
    nh = lattice.n_plus
    for t in g.terms:
        for site, _ in t.factors:
            if site >= nh:
                raise ValueError(
                    f"half-density site index {site} out of range for {nh} positive-time sites"
                )

    k = len(phis)
    h_mat = np.stack([restrict_plus(lattice, p) for p in phis], axis=1)
    factor_p = covariance_factor(pq.c_p, cov.psd_tolerance)
    factor_q = covariance_factor(pq.c_q, cov.psd_tolerance)

    n_outer, n_inner = params.n_outer, params.n_inner
    raw = np.zeros((k, k), dtype=np.complex128)
    sum_re2 = np.zeros((k, k))
    sum_im2 = np.zeros((k, k))
    chunk_n = []
    chunk_sums = []
    w_sum = 0.0
    w_max = 0.0

    def partial_averages(rng, shared, count):
        nonlocal w_sum, w_max
        z = rng.standard_normal((count, n_inner, nh))
        s = shared[:, np.newaxis, :] + z @ factor_p.T
        with np.errstate(over="ignore"):
            weights = np.exp(
                eval_potential_batch(g, s.reshape(-1, nh)).reshape(count, n_inner)
            )
        if not np.all(np.isfinite(weights)):
            raise IllConditionedWeightsError(
                "exp of the half-density overflowed while weighting samples"
            )
        w_sum += float(weights.sum())
        w_max = max(w_max, float(weights.max()))
        vals = weights[:, :, np.newaxis] * np.exp(-1j * (s @ h_mat))
        return vals.mean(axis=1)

    done = 0
    chunk_index = 0
    while done < n_outer:
        count = min(_OUTER_CHUNK, n_outer - done)
        rng = substream(params.seed, NS_FACTORIZED, chunk_index)
        shared = rng.standard_normal((count, nh)) @ factor_q.T
        h1 = partial_averages(rng, shared, count)
        h2 = h1 if params.share_inner else partial_averages(rng, shared, count)
        y = np.conj(h1)[:, :, np.newaxis] * h2[:, np.newaxis, :]
        s = y.sum(axis=0)
        raw += s
        sum_re2 += (y.real**2).sum(axis=0)
        sum_im2 += (y.imag**2).sum(axis=0)
        chunk_n.append(count)
        chunk_sums.append(s)
        done += count
        chunk_index += 1

    ess = w_sum / w_max if w_max > 0 else 0.0
    kind = "mc-factorized-shared" if params.share_inner else "mc-factorized-independent"
    return _finish_mc_report(
        raw, sum_re2, sum_im2, n_outer, tol, params.seed, kind, ess, chunk_n, chunk_sums
    )
