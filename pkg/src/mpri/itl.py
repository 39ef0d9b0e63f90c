"""Kernel (Parzen) estimators of quadratic information quantities.

All estimators use the Gaussian kernel ``G(u) = exp(-|u|^2 / (2 delta^2))``
without its normalising constant, so potentials live in ``(0, 1]``.

Samples are ``(N, p)`` arrays; a 1-D array is read as ``N`` points in one
dimension.
"""

import numpy as np

from .errors import DomainError

# Potentials are floored here before taking logs.
POTENTIAL_FLOOR = np.finfo(np.float64).tiny


def as_sample(points, name="sample"):
    """Validate and coerce ``points`` into a float64 ``(N, p)`` array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DomainError(f"{name} must be a 1-D or 2-D array, got {arr.ndim}-D")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DomainError(f"{name} must hold at least one point of dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_delta(delta):
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise DomainError(f"kernel width must be a positive finite number, got {delta!r}")
    return delta


def pairwise_sq_dists(A, B, exact=True):
    """Squared Euclidean distances between the rows of ``A`` and ``B``.

    Works on stacks: ``A`` is ``(..., N, p)``, ``B`` is ``(..., M, p)`` and the
    result is ``(..., N, M)``.  ``exact`` uses explicit differences, so
    coincident points give exact zeros.  Otherwise the Gram expansion
    ``|a|^2 + |b|^2 - 2 a.b`` is used (much faster, clipped at zero); callers
    should centre their data first to limit cancellation.
    """
    if exact:
        diff = A[..., :, None, :] - B[..., None, :, :]
        return np.einsum("...k,...k->...", diff, diff)
    sq_a = np.einsum("...k,...k->...", A, A)
    sq_b = sq_a if B is A else np.einsum("...k,...k->...", B, B)
    d2 = A @ np.swapaxes(B, -1, -2)
    d2 *= -2.0
    d2 += sq_a[..., :, None]
    d2 += sq_b[..., None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def gaussian_gram(A, B, delta, exact=True):
    """Kernel matrix ``G(a_i - b_j)``, stack-aware like :func:`pairwise_sq_dists`."""
    d2 = pairwise_sq_dists(A, B, exact)
    d2 *= -0.5 / (delta * delta)
    return np.exp(d2, out=d2)


def _potential_ext(Y, X, delta, block=1 << 20):
    # Kernel mean in extended precision (80-bit long double where the platform
    # has it), so that differences of log-potentials keep their accuracy.
    Yl = Y.astype(np.longdouble)
    Xl = X.astype(np.longdouble)
    scale = np.longdouble(2.0) * np.longdouble(delta) * np.longdouble(delta)
    rows = max(1, block // max(1, X.shape[0] * X.shape[1]))
    total = np.longdouble(0.0)
    for start in range(0, Y.shape[0], rows):
        diff = Yl[start:start + rows, None, :] - Xl[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        total += np.exp(-d2 / scale).sum()
    return total / np.longdouble(Y.shape[0] * X.shape[0])


def gaussian_kernel(diff, delta):
    """Evaluate the Gaussian kernel at a single difference vector.

    >>> round(gaussian_kernel([3.0, 4.0], 5.0), 6)
    0.606531
    """
    delta = check_delta(delta)
    diff = np.asarray(diff, dtype=np.float64).ravel()
    if not np.all(np.isfinite(diff)):
        raise DomainError("difference vector contains non-finite values")
    return float(np.exp(-np.dot(diff, diff) / (2.0 * delta * delta)))


def information_potential(Y, delta):
    """Mean of all pairwise kernel values within ``Y``."""
    return cross_information_potential(Y, Y, delta)


def _checked_pair(Y, X, delta):
    delta = check_delta(delta)
    Y = as_sample(Y, "Y")
    X = as_sample(X, "X")
    if Y.shape[1] != X.shape[1]:
        raise DomainError(f"dimension mismatch: Y has p={Y.shape[1]}, X has p={X.shape[1]}")
    return Y, X, delta


def cross_information_potential(Y, X, delta):
    """Mean pairwise kernel value between ``Y`` and ``X``.

    The normalisation is ``1 / (len(Y) * len(X))``, so the two samples may
    have different sizes; their dimensionality must agree.
    """
    Y, X, delta = _checked_pair(Y, X, delta)
    return float(_potential_ext(Y, X, delta))


def _log_potential(v):
    return np.log(np.maximum(v, POTENTIAL_FLOOR))


def renyi_quadratic_entropy(Y, delta):
    """Quadratic Renyi entropy estimate, ``-log V(Y)``."""
    return float(-_log_potential(information_potential(Y, delta)))


def cs_divergence(Y, X, delta):
    """Cauchy-Schwarz divergence ``-2 log V(Y;X) + log V(Y) + log V(X)``.

    Evaluated in extended precision: for similar samples the three terms
    nearly cancel.
    """
    Y, X, delta = _checked_pair(Y, X, delta)
    cross = _log_potential(_potential_ext(Y, X, delta))
    vy = _log_potential(_potential_ext(Y, Y, delta))
    vx = _log_potential(_potential_ext(X, X, delta))
    return float(-2 * cross + vy + vx)


def pri_objective(Y, X, beta, delta):
    """Relevant-information cost ``-(1 - beta) log V(Y) - 2 beta log V(Y;X)``.

    The constant ``beta * H(X)`` term is dropped, so this differs from
    ``H(Y) + beta * D_cs(Y, X)`` by an amount independent of ``Y``.
    """
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta!r}")
    Y, X, delta = _checked_pair(Y, X, delta)
    vy = _log_potential(_potential_ext(Y, Y, delta))
    cross = _log_potential(_potential_ext(Y, X, delta))
    b = np.longdouble(beta)
    return float(-(1 - b) * vy - 2 * b * cross)
