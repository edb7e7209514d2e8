"""Run-length models, Poisson likelihood fits and Laplace evidence.

Three families describe the expected count ``lambda(k)`` of bracketed runs
``RC^kR``:

* ``nEXP``: ``sum_i A_i exp(-b_i k)``, the generic finite-state form;
* ``CS`` (collective state): survival ``S(k) = A prod_{i<=k} (1 - p / i^alpha)``
  with ``lambda(k) = S(k) - S(k+1) = A p (k+1)^-alpha prod_{i<=k}(1 - p/i^alpha)``;
* ``limit-CS``: the ``p = 1`` member with the ``i = 1`` factor dropped,
  ``S(k) = A prod_{2<=i<=k} (1 - 1/i^alpha)``.

Amplitudes are in expected-count units, so no normalisation constraint ties
``lambda`` to the number of runs.  Counts ``N(RC^kR)`` for ``k = 1..k_max``
are treated as independent Poisson variables.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.stats import qmc

from .runstats import MODE_R, RunHistogram

CS = "CS"
NEXP = "nEXP"
LIMIT_CS = "limit-CS"
FAMILIES = (CS, NEXP, LIMIT_CS)

P_MAX = 0.995
B_MIN, B_MAX = 1.0 / 200, 1.0
ALPHA_MAX = 3.0
N_MAX_COMPONENTS = 6
LOG_SPACE_K = 100
# min eigenvalue of the correlation-normalised curvature for a usable Laplace step
LAPLACE_CONDITION = 1e-6

# integral_0^0.995 dp / (1 - p) = ln 200
CS_NORMALIZATION_INTEGRAL = integrate.quad(lambda p: 1.0 / (1.0 - p), 0.0, P_MAX, epsabs=1e-13)[0]
# area under the alpha(p) upper limit of the CS prior; the limit curve itself is not
# available in closed form, so the area enters as a fixed constant
CS_ALPHA_AREA = 1.28841


class ModelDomainError(ValueError):
    pass


class FitError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# -- parameter types ----------------------------------------------------------

@dataclass(frozen=True)
class CSParams:
    A: float
    p: float
    alpha: float

    def __post_init__(self):
        # any hazard scale up to 1 is a valid process; P_MAX bounds the fit and prior box
        if not (self.A > 0 and 0 <= self.p <= 1 and self.alpha >= 0):
            raise ModelDomainError(f"CS parameters out of range: {self}")

    def as_vector(self):
        return np.array([self.A, self.p, self.alpha])


@dataclass(frozen=True)
class NExpParams:
    amplitudes: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.amplitudes)
        b = tuple(float(x) for x in self.rates)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "rates", b)
        if len(a) != len(b) or not a:
            raise ModelDomainError("need equal, non-zero numbers of amplitudes and rates")
        if any(x < 0 for x in a):
            raise ModelDomainError("amplitudes must be non-negative")
        if any(not (B_MIN <= x <= B_MAX) for x in b):
            raise ModelDomainError(f"decay rates must lie in [{B_MIN}, {B_MAX}]")
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ModelDomainError("decay rates must be strictly increasing")

    @property
    def n(self) -> int:
        return len(self.amplitudes)

    def as_vector(self):
        return np.array(self.amplitudes + self.rates)


@dataclass(frozen=True)
class LimitCSParams:
    A: float
    alpha: float

    def __post_init__(self):
        if not (self.A > 0 and self.alpha >= 0):
            raise ModelDomainError(f"limit-CS parameters out of range: {self}")

    def as_vector(self):
        return np.array([self.A, self.alpha])


# -- closed forms -------------------------------------------------------------

def _log_factors(p, alpha, k_max, start=1):
    """``log(1 - p / i^alpha)`` for ``i = 1..k_max`` (zero below ``start``)."""
    i = np.arange(1, k_max + 1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.log1p(-p * i ** (-alpha))
    f[: start - 1] = 0.0
    return f


def _cs_log_survival(p, alpha, k_max, start=1):
    """``out[k] = log prod_{start<=i<=k}(1 - p/i^alpha)`` for ``k = 0..k_max``."""
    out = np.zeros(k_max + 1)
    if k_max:
        out[1:] = np.cumsum(_log_factors(p, alpha, k_max, start))
    return out


def _direct_product(p, alpha, k, start=1):
    prod = 1.0
    for i in range(start, k + 1):
        prod *= 1.0 - p / i**alpha
    return prod


def cs_survival(params: CSParams, k: int) -> float:
    """``P_CS(C^k | R) = A prod_{i=1}^k (1 - p / i^alpha)``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > LOG_SPACE_K:
        return params.A * math.exp(_cs_log_survival(params.p, params.alpha, k)[k])
    return params.A * _direct_product(params.p, params.alpha, k)


def cs_hazard(params: CSParams, k: int) -> float:
    """Probability a run of ``k - 1`` Cs ends at the next symbol: ``p / k^alpha``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return params.p / k**params.alpha


def cs_run_pmf(params: CSParams, k: int) -> float:
    """``lambda(k) = A p / (k+1)^alpha * prod_{i=1}^k (1 - p / i^alpha)``."""
    return cs_survival(params, k) * cs_hazard(params, k + 1)


def nexp_run_pmf(params: NExpParams, k) -> float:
    return float(sum(a * math.exp(-b * k) for a, b in zip(params.amplitudes, params.rates)))


def limit_cs_survival(params: LimitCSParams, k: int) -> float:
    """``A prod_{i=2}^k (1 - 1/i^alpha)``; the product is empty for ``k <= 1``."""
    if k > LOG_SPACE_K:
        return params.A * math.exp(_cs_log_survival(1.0, params.alpha, k, start=2)[k])
    return params.A * _direct_product(1.0, params.alpha, k, start=2)


def limit_cs_run_pmf(params: LimitCSParams, k: int) -> float:
    """``S(k) - S(k+1) = S(k) / (k+1)^alpha`` for ``k >= 1``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return limit_cs_survival(params, k) / (k + 1) ** params.alpha


# -- vectorised intensities and Jacobians on k = 1..k_max -----------------------

class _Family:
    """Natural-parameter evaluation of ``log lambda`` and its Jacobian."""

    name: str
    timescales: int

    def names(self) -> list[str]:
        raise NotImplementedError

    def log_intensity(self, theta, k_max) -> np.ndarray:
        raise NotImplementedError

    def log_intensity_jac(self, theta, k_max) -> np.ndarray:
        """``d log lambda(k) / d theta``, shape ``(len(theta), k_max)``."""
        raise NotImplementedError

    def amplitude_mask(self) -> np.ndarray:
        raise NotImplementedError

    def to_params(self, theta):
        raise NotImplementedError


class _CSFamily(_Family):
    name = CS
    n = None
    timescales = 1

    def names(self):
        return ["A", "p", "alpha"]

    def log_intensity(self, theta, k_max):
        A, p, alpha = theta
        k = np.arange(1, k_max + 1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.log(A) + np.log(p) - alpha * np.log(k + 1)
                    + _cs_log_survival(p, alpha, k_max)[1:])

    def log_intensity_jac(self, theta, k_max):
        A, p, alpha = theta
        i = np.arange(1, k_max + 1, dtype=float)
        x = i ** (-alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = 1.0 - p * x
            dp_terms = np.cumsum(-x / denom)
            da_terms = np.cumsum(p * x * np.log(i) / denom)
        jac = np.empty((3, k_max))
        jac[0] = 1.0 / A
        jac[1] = 1.0 / p + dp_terms
        jac[2] = -np.log(i + 1) + da_terms
        return jac

    def amplitude_mask(self):
        return np.array([True, False, False])

    def to_params(self, theta):
        return CSParams(*map(float, theta))


class _LimitCSFamily(_Family):
    name = LIMIT_CS
    n = None
    timescales = 1

    def names(self):
        return ["A", "alpha"]

    def log_intensity(self, theta, k_max):
        A, alpha = theta
        k = np.arange(1, k_max + 1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(A) - alpha * np.log(k + 1) + _cs_log_survival(1.0, alpha, k_max, 2)[1:]

    def log_intensity_jac(self, theta, k_max):
        A, alpha = theta
        i = np.arange(1, k_max + 1, dtype=float)
        x = i ** (-alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = x * np.log(i) / (1.0 - x)
        t[0] = 0.0
        jac = np.empty((2, k_max))
        jac[0] = 1.0 / A
        jac[1] = -np.log(i + 1) + np.cumsum(t)
        return jac

    def amplitude_mask(self):
        return np.array([True, False])

    def to_params(self, theta):
        return LimitCSParams(*map(float, theta))


class _NExpFamily(_Family):
    name = NEXP

    def __init__(self, n):
        if not 1 <= n <= N_MAX_COMPONENTS:
            raise ModelDomainError(f"nEXP supports 1 <= n <= {N_MAX_COMPONENTS}")
        self.n = n
        self.timescales = n

    def names(self):
        return [f"A{i + 1}" for i in range(self.n)] + [f"b{i + 1}" for i in range(self.n)]

    def _terms(self, theta, k_max):
        a, b = np.asarray(theta[: self.n]), np.asarray(theta[self.n:])
        k = np.arange(1, k_max + 1, dtype=float)
        return a[:, None] * np.exp(-np.outer(b, k)), k

    def log_intensity(self, theta, k_max):
        terms, _ = self._terms(theta, k_max)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(terms.sum(axis=0))

    def log_intensity_jac(self, theta, k_max):
        terms, k = self._terms(theta, k_max)
        lam = terms.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            d_a = np.exp(-np.outer(theta[self.n:], k)) / lam
            d_b = -k * terms / lam
        return np.vstack([d_a, d_b])

    def amplitude_mask(self):
        return np.array([True] * self.n + [False] * self.n)

    def to_params(self, theta):
        a, b = np.asarray(theta[: self.n]), np.asarray(theta[self.n:])
        order = np.argsort(b)
        return NExpParams(tuple(a[order]), tuple(np.clip(b[order], B_MIN, B_MAX)))


def family(name: str, n: int | None = None) -> _Family:
    if name == CS:
        return _CSFamily()
    if name == LIMIT_CS:
        return _LimitCSFamily()
    if name == NEXP:
        return _NExpFamily(1 if n is None else n)
    raise ModelDomainError(f"unknown model family {name!r}")


def _family_of(params) -> _Family:
    if isinstance(params, CSParams):
        return _CSFamily()
    if isinstance(params, LimitCSParams):
        return _LimitCSFamily()
    if isinstance(params, NExpParams):
        return _NExpFamily(params.n)
    raise TypeError(f"not a model parameter object: {params!r}")


# -- likelihood ------------------------------------------------------------------

def _count_vector(hist: RunHistogram, k_max: int | None):
    fc = hist.fit_counts()
    if k_max is None:
        k_max = max(fc) if fc else 0
    n = np.zeros(k_max)
    for k, v in fc.items():
        if k <= k_max:
            n[k - 1] = v
    return n, k_max


def _loglike(counts, log_lam) -> float:
    lam = np.exp(log_lam)
    if np.isnan(log_lam).any():
        return -math.inf
    pos = counts > 0
    if (~np.isfinite(log_lam[pos])).any():
        return -math.inf
    return float(np.dot(counts[pos], log_lam[pos]) - lam.sum())


def poisson_loglike(hist: RunHistogram, model, k_max: int | None = None) -> float:
    """``sum_{k=1}^{k_max} N_k log lambda(k) - lambda(k)`` (model-free constants dropped).

    ``model`` is a parameter object or any callable ``k -> lambda(k)``.
    Returns ``-inf`` (with a warning) when ``lambda`` vanishes on an observed bin.
    """
    counts, k_max = _count_vector(hist, k_max)
    if callable(model):
        lam = np.array([model(k) for k in range(1, k_max + 1)], dtype=float)
        with np.errstate(divide="ignore"):
            log_lam = np.log(lam)
    else:
        log_lam = _family_of(model).log_intensity(model.as_vector(), k_max)
    value = _loglike(counts, log_lam)
    if value == -math.inf:
        warnings.warn("impossible fit: lambda(k) = 0 where counts are positive",
                      RuntimeWarning, stacklevel=2)
    return value


def poisson_loglike_grad(hist: RunHistogram, params, k_max: int | None = None) -> np.ndarray:
    """Analytic gradient of :func:`poisson_loglike` in the parameter vector order."""
    counts, k_max = _count_vector(hist, k_max)
    fam = _family_of(params)
    theta = params.as_vector()
    log_lam = fam.log_intensity(theta, k_max)
    jac = fam.log_intensity_jac(theta, k_max)
    return jac @ (counts - np.exp(log_lam))


# -- priors and evidence ---------------------------------------------------------

def log_prior_volume(model: str, n: int | None, N: float) -> float:
    """Log of the prior parameter-space volume for ``N`` total symbols.

    CS: ``N * ln(200) * 1.28841``.  nEXP: ``(N^n / n!) * (1 - 1/200)^n / n!``
    (amplitude simplex times ordered decay-rate box).  limit-CS: ``N * 3``
    (amplitude up to ``N``, ``alpha`` in ``[0, 3]``).
    """
    if N <= 0:
        raise ValueError("N must be positive")
    if model == CS:
        return math.log(CS_NORMALIZATION_INTEGRAL * N * CS_ALPHA_AREA)
    if model == NEXP:
        if n is None or not 1 <= n <= N_MAX_COMPONENTS:
            raise ModelDomainError(f"nEXP prior supports 1 <= n <= {N_MAX_COMPONENTS}")
        lf = math.lgamma(n + 1)
        return n * math.log(N) - lf + n * math.log(B_MAX - B_MIN) - lf
    if model == LIMIT_CS:
        return math.log(N * ALPHA_MAX)
    raise ModelDomainError(f"unknown model family {model!r}")


def prior_volume(model: str, n: int | None, N: float) -> float:
    return math.exp(log_prior_volume(model, n, N))


@dataclass(frozen=True)
class PriorSpec:
    model: str
    n: int | None
    N: float

    @property
    def log_density(self) -> float:
        return -log_prior_volume(self.model, self.n, self.N)


def laplace_log_evidence(log_likelihood: float, hessian, log_prior_density: float) -> float:
    """``L + log prior - 1/2 log det H + (d/2) log 2 pi`` for ``H = -grad^2 L``."""
    h = np.atleast_2d(np.asarray(hessian, dtype=float))
    sign, logdet = np.linalg.slogdet(h)
    if sign <= 0:
        raise FitError("Hessian is not positive definite")
    d = h.shape[0]
    return log_likelihood + log_prior_density - 0.5 * logdet + 0.5 * d * math.log(2 * math.pi)


# -- fitting ---------------------------------------------------------------------

@dataclass
class FitOptions:
    starts: int = 32
    seed: int = 0
    k_max: int | None = None
    method: str = "L-BFGS-B"
    ftol: float = 1e-10
    maxiter: int = 5000


@dataclass
class FitResult:
    model: str
    n: int | None
    names: list[str]
    values: np.ndarray
    params: object
    logL: float
    k_max: int
    N: int
    hessian: np.ndarray | None = None
    stderr: np.ndarray | None = None
    logE: float | None = None
    flags: list[str] = field(default_factory=list)
    converged_starts: int = 0
    n_starts: int = 0

    def param_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))

    def stderr_dict(self) -> dict[str, float] | None:
        if self.stderr is None:
            return None
        return dict(zip(self.names, map(float, self.stderr)))

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "n": self.n,
            "params": self.param_dict(),
            "stderr": self.stderr_dict(),
            "logL": self.logL,
            "logE": self.logE,
            "k_max": self.k_max,
            "flags": list(self.flags),
        }


def _natural_bounds(fam: _Family, N: float):
    amp_hi = max(10.0 * N, 10.0)
    if fam.name == CS:
        return [(1e-8, amp_hi), (1e-6, P_MAX), (0.0, ALPHA_MAX)]
    if fam.name == LIMIT_CS:
        return [(1e-8, amp_hi), (0.0, ALPHA_MAX)]
    return [(1e-8, amp_hi)] * fam.n + [(B_MIN, B_MAX)] * fam.n


def _start_box(fam: _Family, scale: float):
    """Latin-hypercube box in optimiser coordinates (log amplitudes)."""
    la = (math.log(max(scale, 1.0) * 1e-3), math.log(max(scale, 1.0) * 3.0))
    if fam.name == CS:
        return [la, (0.02, 0.98), (0.0, 1.5)]
    if fam.name == LIMIT_CS:
        return [la, (0.0, 1.5)]
    return [la] * fam.n + [(B_MIN, B_MAX)] * fam.n


def hessian_fd(f: Callable[[np.ndarray], float], theta: np.ndarray, rel: float = 1e-4,
               floor: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian with steps ``max(floor, rel * |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    h = np.maximum(floor, rel * np.abs(theta))
    f0 = f(theta)
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        H[i, i] = (f(theta + e) - 2 * f0 + f(theta - e)) / h[i] ** 2
        for j in range(i):
            g = np.zeros(d)
            g[j] = h[j]
            H[i, j] = H[j, i] = (
                f(theta + e + g) - f(theta + e - g) - f(theta - e + g) + f(theta - e - g)
            ) / (4 * h[i] * h[j])
    return H


def _is_positive_definite(h: np.ndarray, rel_tol: float = 1e-10) -> bool:
    if not np.isfinite(h).all():
        return False
    diag = np.diag(h)
    if (diag <= 0).any():
        return False
    s = 1.0 / np.sqrt(diag)
    corr = h * np.outer(s, s)
    return bool(np.linalg.eigvalsh(corr).min() > rel_tol)


def fit_mle(hist: RunHistogram, model: str, n: int | None = None,
            options: FitOptions | None = None, **kw) -> FitResult:
    """Poisson maximum likelihood by multi-start bounded local search.

    Starts are a Latin hypercube over the start box (log amplitudes, raw
    shape parameters).  The curvature matrix ``-grad^2 L`` comes from
    central differences at the optimum, retried once at 10x step when not
    positive definite; standard errors and the Laplace evidence are only
    reported for a positive-definite curvature.
    """
    opts = options or FitOptions(**kw)
    fam = family(model, n)
    counts, k_max = _count_vector(hist, opts.k_max)
    distinct = int((counts > 0).sum())
    if distinct < 2 * fam.timescales:
        raise FitError(
            f"{fam.name}{'' if fam.n is None else fam.n}: {distinct} distinct run lengths, "
            f"need {2 * fam.timescales}",
            {"distinct_k": distinct},
        )
    N = hist.total_symbols
    mask = fam.amplitude_mask()
    bounds = _natural_bounds(fam, N)
    opt_bounds = [(math.log(lo), math.log(hi)) if m else (lo, hi)
                  for (lo, hi), m in zip(bounds, mask)]

    def to_theta(phi):
        return np.where(mask, np.exp(phi), phi)

    def negll(phi):
        theta = to_theta(phi)
        v = _loglike(counts, fam.log_intensity(theta, k_max))
        return 1e300 if not np.isfinite(v) else -v

    def negll_grad(phi):
        theta = to_theta(phi)
        log_lam = fam.log_intensity(theta, k_max)
        with np.errstate(invalid="ignore", over="ignore"):
            g = fam.log_intensity_jac(theta, k_max) @ (counts - np.exp(log_lam))
        g = np.where(mask, g * theta, g)
        return np.nan_to_num(-g, nan=0.0, posinf=1e300, neginf=-1e300)

    dims = len(bounds)
    box = np.array(_start_box(fam, float(counts.sum())))
    lhs = qmc.LatinHypercube(d=dims, seed=opts.seed).random(opts.starts)
    starts = box[:, 0] + lhs * (box[:, 1] - box[:, 0])

    best, converged = None, 0
    for x0 in starts:
        if opts.method.lower() == "nelder-mead":
            res = optimize.minimize(negll, x0, method="Nelder-Mead", bounds=opt_bounds,
                                    options={"fatol": opts.ftol, "xatol": 1e-10,
                                             "maxiter": opts.maxiter * dims,
                                             "adaptive": True})
        else:
            res = optimize.minimize(negll, x0, jac=negll_grad, method="L-BFGS-B",
                                    bounds=opt_bounds,
                                    options={"ftol": opts.ftol, "gtol": 1e-8,
                                             "maxiter": opts.maxiter})
        if not np.isfinite(res.fun) or res.fun >= 1e300:
            continue
        converged += bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError(f"{fam.name}: all {opts.starts} starts failed",
                       {"starts": opts.starts})

    theta = to_theta(best.x)
    flags = []
    if fam.name == NEXP:
        order = np.argsort(theta[fam.n:])
        theta = np.concatenate([theta[: fam.n][order], theta[fam.n:][order]])
    for (lo, hi), v, name in zip(bounds, theta, fam.names()):
        if np.isclose(v, lo, rtol=1e-6, atol=1e-9) or np.isclose(v, hi, rtol=1e-6, atol=0):
            flags.append(f"at-bound:{name}")
    logL = -float(best.fun)

    def ll(t):
        return _loglike(counts, fam.log_intensity(t, k_max))

    hessian = -hessian_fd(ll, theta)
    if not _is_positive_definite(hessian):
        hessian = -hessian_fd(ll, theta, rel=1e-3, floor=1e-4)
    try:
        params = fam.to_params(theta)
    except ModelDomainError:
        params = None
        flags.append("params-outside-domain")
    result = FitResult(fam.name, fam.n, fam.names(), theta, params, logL, k_max, N,
                       hessian=hessian, flags=flags, converged_starts=converged,
                       n_starts=opts.starts)
    if not _is_positive_definite(hessian):
        result.flags.append("hessian-not-pd")
        return result
    result.stderr = np.sqrt(np.diag(np.linalg.inv(hessian)))
    problem = _laplace_problem(hessian, result.stderr, bounds, mask)
    if problem:
        result.flags.append(f"laplace-invalid:{problem}")
    else:
        result.logE = laplace_evidence(result)
    return result


def _laplace_problem(hessian, stderr, bounds, mask) -> str | None:
    """Reason the Gaussian approximation cannot stand in for the evidence integral.

    A ridge (near-singular curvature in correlation form) or a shape
    parameter whose posterior width exceeds its whole prior range both make
    the Gaussian volume meaningless against the prior box.
    """
    if not _is_positive_definite(hessian, LAPLACE_CONDITION):
        return "ridge"
    for (lo, hi), se, amp in zip(bounds, stderr, mask):
        if not amp and se > hi - lo:
            return "wider-than-prior"
    return None


def laplace_evidence(fit: FitResult, prior: PriorSpec | None = None) -> float:
    """Laplace log evidence of a fit; prior defaults to the family's box at ``fit.N``."""
    if prior is None:
        prior = PriorSpec(fit.model, fit.n, fit.N)
    if fit.hessian is None or not _is_positive_definite(fit.hessian):
        raise FitError("Hessian is not positive definite; evidence undefined")
    return laplace_log_evidence(fit.logL, fit.hessian, prior.log_density)


# -- model selection -----------------------------------------------------------

LN10 = math.log(10.0)


def significance_band(delta_e: float) -> tuple[int, str, str]:
    """``(m, band, favoured)`` with ``m = floor(|dE| / ln 10)``.

    ``band`` is ``"1e-m"`` when CS is favoured, ``"1e+m"`` when nEXP is,
    and ``"no-det"`` for ``m < 2``.
    """
    m = int(math.floor(abs(delta_e) / LN10))
    if m < 2:
        return m, "no-det", "none"
    if delta_e > 0:
        return m, f"1e-{m}", CS
    return m, f"1e+{m}", NEXP


@dataclass
class SelectionReport:
    page: str
    N: int
    fits: list[FitResult]
    errors: dict[str, str]
    best_n: int | None
    delta_E: float | None
    band: str
    favoured: str
    cs_model: str = CS

    @property
    def cs_fit(self) -> FitResult | None:
        return next((f for f in self.fits if f.model == self.cs_model), None)

    def to_json(self) -> dict:
        return {
            "page": self.page,
            "N": self.N,
            "fits": [f.to_json() for f in self.fits],
            "errors": dict(self.errors),
            "best_n": self.best_n,
            "delta_E": self.delta_E,
            "band": self.band,
        }

    def table_row(self) -> dict:
        cs = self.cs_fit
        alpha = alpha_err = None
        if cs is not None:
            alpha = cs.param_dict()["alpha"]
            se = cs.stderr_dict()
            alpha_err = None if se is None else se["alpha"]
        return {
            "page": self.page,
            "history_length": self.N,
            "delta_E": self.delta_E,
            "alpha": alpha,
            "alpha_err": alpha_err,
            "band": self.band,
        }


TABLE_HEADER = "page,history_length,delta_E,alpha,alpha_err,band"


def format_table(reports: Sequence[SelectionReport]) -> str:
    def fmt(x, spec):
        return "" if x is None else format(x, spec)

    lines = [TABLE_HEADER]
    for r in reports:
        row = r.table_row()
        lines.append(",".join([
            row["page"], str(row["history_length"]), fmt(row["delta_E"], ".4f"),
            fmt(row["alpha"], ".6f"), fmt(row["alpha_err"], ".6f"), row["band"],
        ]))
    return "\n".join(lines) + "\n"


def select_model(hist: RunHistogram, n_max: int = 5, cs_model: str = CS,
                 options: FitOptions | None = None, page: str | None = None) -> SelectionReport:
    """Fit the CS-type model and nEXP for ``n = 1..n_max``; compare evidences.

    ``delta_E = logE(CS) - max_n logE(nEXP)``.  Failed fits are listed in
    ``errors`` and the comparison uses whatever succeeded.
    """
    opts = options or FitOptions()
    fits, errors = [], {}
    try:
        fits.append(fit_mle(hist, cs_model, options=opts))
    except FitError as exc:
        errors[cs_model] = str(exc)
    for n in range(1, n_max + 1):
        try:
            fits.append(fit_mle(hist, NEXP, n, options=opts))
        except FitError as exc:
            errors[f"{n}EXP"] = str(exc)
    cs = next((f for f in fits if f.model == cs_model), None)
    nexp = [f for f in fits if f.model == NEXP and f.logE is not None]
    best = max(nexp, key=lambda f: f.logE, default=None)
    delta = None
    band, favoured = "no-det", "none"
    if cs is not None and cs.logE is not None and best is not None:
        delta = cs.logE - best.logE
        _, band, favoured = significance_band(delta)
    return SelectionReport(
        page if page is not None else hist.source, hist.total_symbols, fits, errors,
        None if best is None else best.n, delta, band, favoured, cs_model,
    )


# -- synthetic data -----------------------------------------------------------------

def _sequential_hazard_runs(rng, hazard: Callable[[np.ndarray], np.ndarray], run_count, max_length):
    lengths = np.zeros(run_count, dtype=np.int64)
    alive = np.arange(run_count)
    step = 1
    while alive.size and step <= max_length:
        stop = rng.random(alive.size) < hazard(step)
        lengths[alive[stop]] = step - 1
        alive = alive[~stop]
        step += 1
    if alive.size:
        raise ModelDomainError(f"{alive.size} runs exceeded max_length={max_length}")
    return lengths


def synth_run_lengths(params, run_count: int, rng_seed=None, max_length: int = 100_000) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    if isinstance(params, CSParams):
        return _sequential_hazard_runs(
            rng, lambda i: params.p / i**params.alpha, run_count, max_length)
    if isinstance(params, LimitCSParams):
        return _sequential_hazard_runs(
            rng, lambda i: 0.0 if i == 1 else i ** (-params.alpha), run_count, max_length)
    if isinstance(params, NExpParams):
        a, b = np.array(params.amplitudes), np.array(params.rates)
        weights = a / (1.0 - np.exp(-b))
        comp = rng.choice(params.n, size=run_count, p=weights / weights.sum())
        return rng.geometric(1.0 - np.exp(-b[comp])) - 1
    raise TypeError(f"not a model parameter object: {params!r}")


def synth_sample(params, run_count: int, rng_seed=None, max_length: int = 100_000) -> RunHistogram:
    """Histogram of ``run_count`` simulated runs, as if read from ``R C^k1 R C^k2 R ...``.

    CS-type runs come from sequential Bernoulli hazard trials; nEXP runs from
    a mixture of geometrics whose expected counts are proportional to
    ``A_i exp(-b_i k)``.  Only the shape of ``params`` matters; the total is
    ``run_count``.
    """
    lengths = synth_run_lengths(params, run_count, rng_seed, max_length)
    ks, vs = np.unique(lengths, return_counts=True)
    counts = dict(zip(ks.tolist(), vs.tolist()))
    total = int(1 + (lengths + 1).sum())
    return RunHistogram(counts, run_count, total, MODE_R, "synthetic")
