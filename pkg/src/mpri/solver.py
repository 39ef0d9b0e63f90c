"""Fixed-point solver for the relevant-information objective.

The iteration moves every representation point ``y`` to::

    y' = c (1-b)/b * sum_j G(y-y_j) y_j / sum_j G(y-x_j)
       - c (1-b)/b * sum_j G(y-y_j) / sum_j G(y-x_j) * y
       + sum_j G(y-x_j) x_j / sum_j G(y-x_j)

with ``c = V(Y;X) / V(Y)`` evaluated on the pre-sweep ``Y``.  All points move
simultaneously (a synchronous sweep).  ``beta = 0`` has the closed-form
solution "every point at the sample mean" and never enters the iteration.

The core routines are stack-aware: ``X`` may be ``(B, N, p)`` to solve ``B``
independent problems at once, which is how the image pipeline drives it.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SolverError
from .itl import as_sample, check_delta, gaussian_gram, pri_objective

_DEN_FLOOR = np.finfo(np.float64).tiny


class Init(enum.Enum):
    COPY_INPUT = "copy"
    PROVIDED = "provided"


@dataclass(frozen=True)
class PriConfig:
    """Parameters of one solve.

    ``displacement_tol`` stops the iteration early once the largest per-point
    move of a sweep drops below it; the default ``0`` always runs ``tau``
    sweeps.
    """

    beta: float
    delta: float
    tau: int = 3
    init: Init = Init.COPY_INPUT
    displacement_tol: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise DomainError(f"beta must be >= 0, got {self.beta!r}")
        check_delta(self.delta)
        if int(self.tau) != self.tau or self.tau < 1:
            raise DomainError(f"tau must be a positive integer, got {self.tau!r}")
        if self.displacement_tol < 0:
            raise DomainError("displacement_tol must be nonnegative")
        if not isinstance(self.init, Init):
            object.__setattr__(self, "init", Init(self.init))


@dataclass
class PriTrace:
    objective_per_iteration: list = field(default_factory=list)
    max_displacement_per_iteration: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.objective_per_iteration)


def _sweep(Y, X, beta, delta, exact=True, same=False):
    """One synchronous update of a stack of problems. Returns the new Y.

    ``same`` asserts ``Y == X`` so the two kernel matrices coincide.
    """
    Kyy = gaussian_gram(Y, Y, delta, exact)
    Kyx = Kyy if same else gaussian_gram(Y, X, delta, exact)
    den = Kyx.sum(axis=-1)
    bad = ~(den >= _DEN_FLOOR)
    if bad.any():
        where = np.argwhere(bad)[0]
        idx = tuple(int(i) for i in where)
        point = idx[-1] if len(idx) == 1 else idx
        raise SolverError(
            f"cross-kernel denominator underflowed at point {point}: the "
            "representation point is too far from every data point for this kernel width",
            index=point,
        )
    shift = (Kyx @ X) / den[..., None]
    if beta == 1.0:
        return shift
    # c = V(Y;X) / V(Y); with equal sample sizes the normalisers cancel
    s_yy = Kyy.reshape(Kyy.shape[:-2] + (-1,)).sum(axis=-1)
    s_yx = Kyx.reshape(Kyx.shape[:-2] + (-1,)).sum(axis=-1)
    c = s_yx / s_yy
    coef = (c * (1.0 - beta) / beta)[..., None, None]
    self_sum = Kyy.sum(axis=-1)
    return coef * (Kyy @ Y) / den[..., None] - coef * (self_sum / den)[..., None] * Y + shift


def fixed_point_step(Y, X, cfg):
    """Apply one synchronous sweep of the update to ``Y``.

    Raises :class:`SolverError` (with ``index`` set to the offending row)
    when a point's cross-kernel sum underflows.
    """
    if cfg.beta <= 0:
        raise DomainError("fixed_point_step needs beta > 0; beta = 0 is solved in closed form")
    Y = as_sample(Y, "Y")
    X = as_sample(X, "X")
    if Y.shape != X.shape:
        raise DomainError(f"shape mismatch: Y {Y.shape} vs X {X.shape}")
    return _sweep(Y, X, float(cfg.beta), float(cfg.delta))


def pri_solve(X, cfg, Y0=None):
    """Minimise the relevant-information objective for the sample ``X``.

    Returns the final representation and a :class:`PriTrace` recording the
    objective and the largest per-point move after every sweep.
    """
    X = as_sample(X, "X")
    if cfg.init is Init.PROVIDED:
        if Y0 is None:
            raise DomainError("init=PROVIDED requires Y0")
        Y = as_sample(Y0, "Y0")
        if Y.shape != X.shape:
            raise DomainError(f"Y0 shape {Y.shape} does not match X {X.shape}")
    else:
        Y = X.copy()

    trace = PriTrace()
    if cfg.beta == 0:
        Y_new = np.broadcast_to(X.mean(axis=0), X.shape).copy()
        trace.max_displacement_per_iteration.append(_max_move(Y_new, Y))
        trace.objective_per_iteration.append(pri_objective(Y_new, X, 0.0, cfg.delta))
        return Y_new, trace

    for _ in range(int(cfg.tau)):
        Y_new = _sweep(Y, X, float(cfg.beta), float(cfg.delta))
        move = _max_move(Y_new, Y)
        Y = Y_new
        trace.max_displacement_per_iteration.append(move)
        trace.objective_per_iteration.append(pri_objective(Y, X, cfg.beta, cfg.delta))
        if move < cfg.displacement_tol:
            break
    return Y, trace


def _max_move(a, b):
    return float(np.sqrt(((a - b) ** 2).sum(axis=-1)).max())


def solve_stack(X, beta, delta, tau, displacement_tol=0.0, center_only=False):
    """Solve a stack ``(B, N, p)`` of independent problems from ``Y0 = X``.

    Each problem is iterated exactly as :func:`pri_solve` would, including
    its own early stop, so results do not depend on how problems are
    grouped into stacks.  With ``center_only`` only the middle row
    ``(N - 1) // 2`` moves; the others stay at their data values.
    """
    X = np.asarray(X, dtype=np.float64)
    offset = X.mean(axis=-2, keepdims=True)
    if beta == 0:
        return np.broadcast_to(offset, X.shape).copy()
    # the problem is translation-equivariant; centring keeps the fast
    # distance expansion accurate
    X_orig = X
    X = X - offset
    Y = X.copy()
    center = (X.shape[-2] - 1) // 2
    active = np.arange(X.shape[0])
    for it in range(int(tau)):
        if active.size == 0:
            break
        try:
            Y_new = _sweep(Y[active], X[active], beta, delta, exact=False, same=(it == 0))
        except SolverError as exc:
            b, point = exc.index
            raise SolverError(
                f"cross-kernel denominator underflowed in problem {int(active[b])}, point {point}",
                index=(int(active[b]), point),
            ) from None
        if center_only:
            Y_new_full = Y[active].copy()
            Y_new_full[:, center] = Y_new[:, center]
            Y_new = Y_new_full
        moves = np.sqrt(((Y_new - Y[active]) ** 2).sum(axis=-1)).max(axis=-1)
        Y[active] = Y_new
        if displacement_tol > 0:
            active = active[~(moves < displacement_tol)]
    return X_orig + (Y - X)


def objective_gradient(Y, X, cfg):
    """Analytic gradient of :func:`~mpri.itl.pri_objective` with respect to ``Y``.

    Row ``k`` is::

        -2 (1-b) / S_yy * sum_j G(y_k-y_j)(y_j-y_k) / delta^2
        -2 b     / S_yx * sum_j G(y_k-x_j)(x_j-y_k) / delta^2

    where ``S_yy`` and ``S_yx`` are the raw kernel sums.  At any ``Y`` the
    gradient and one sweep's move are related exactly by::

        grad_k = -2 b den_k / (S_yx delta^2) * (y'_k - y_k)

    with ``den_k = sum_j G(y_k - x_j)``, so a converged iteration has
    ``|grad_k| <= 2 b den_k / (S_yx delta^2) * |y'_k - y_k|``.
    """
    Y = as_sample(Y, "Y")
    X = as_sample(X, "X")
    if Y.shape[1] != X.shape[1]:
        raise DomainError(f"dimension mismatch: Y has p={Y.shape[1]}, X has p={X.shape[1]}")
    beta = float(cfg.beta)
    delta = float(cfg.delta)
    Kyy = gaussian_gram(Y, Y, delta)
    Kyx = gaussian_gram(Y, X, delta)
    s_yy = Kyy.sum()
    s_yx = Kyx.sum()
    pull_y = Kyy @ Y - Kyy.sum(axis=1)[:, None] * Y
    pull_x = Kyx @ X - Kyx.sum(axis=1)[:, None] * Y
    d2 = delta * delta
    return -2.0 * (1.0 - beta) / s_yy * pull_y / d2 - 2.0 * beta / s_yx * pull_x / d2
