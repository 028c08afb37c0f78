"""Tensor robust PCA by ADMM over a weighted sum of mode-unfolding nuclear norms.

Solves::

    min  sum_k w_k ||L_(k)||_*  +  lam ||S||_1  +  (eta / 2) ||X - L - S||_F^2

or, with ``eta == 0``, the exactly constrained problem ``X = L + S``. Each
mode with positive weight gets an auxiliary copy ``Z_k = L`` so that its
nuclear norm is handled by singular value thresholding of one unfolding.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .tensor import soft_threshold

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RpcaConfig:
    """Solver parameters. ``None`` fields are filled from the input tensor.

    lam: sparsity weight (default :func:`weighted_lambda`).
    eta: noise penalty weight; 0 selects the exact constraint ``X = L + S``.
    mu0: initial penalty (default ``1.25 / sigma_1`` of the unfolding on the
        heaviest-weighted mode).
    rho: penalty growth factor per iteration.
    mu_max: penalty cap (default ``1e7 * mu0``).
    tol: relative primal residual at which iteration stops.
    mode_weights: per-mode nuclear-norm weights (default 1 on the last mode,
        0.1 elsewhere). Zero-weight modes are ignored.
    """

    lam: float = None
    eta: float = 0.0
    mu0: float = None
    rho: float = 1.1
    mu_max: float = None
    tol: float = 1e-7
    max_iter: int = 200
    mode_weights: tuple = None

    def weights_for(self, ndim):
        if self.mode_weights is None:
            return tuple([0.1] * (ndim - 1) + [1.0])
        w = tuple(float(x) for x in self.mode_weights)
        if len(w) != ndim:
            raise InvalidArgument(f"{len(w)} mode weights given for a {ndim}-mode tensor")
        return w

    def validate(self, ndim):
        w = self.weights_for(ndim)
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise InvalidArgument(f"mode weights must be >= 0 with one > 0, got {w}")
        if self.lam is not None and not self.lam > 0:
            raise InvalidArgument(f"lambda must be positive, got {self.lam}")
        if self.eta < 0:
            raise InvalidArgument(f"eta must be non-negative, got {self.eta}")
        if self.mu0 is not None and not self.mu0 > 0:
            raise InvalidArgument(f"mu0 must be positive, got {self.mu0}")
        if not self.rho > 1:
            raise InvalidArgument(f"rho must exceed 1, got {self.rho}")
        if not self.tol > 0:
            raise InvalidArgument(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidArgument(f"max_iter must be >= 1, got {self.max_iter}")
        return w


@dataclass
class RpcaResult:
    L: np.ndarray
    S: np.ndarray
    N: np.ndarray
    iters: int
    residual_history: list = field(default_factory=list)
    converged: bool = False


def default_lambda(shape, active_modes):
    """``1 / sqrt(max(rows, cols))`` maximised over the active mode unfoldings."""
    active_modes = list(active_modes)
    if not active_modes:
        raise InvalidArgument("at least one active mode is required")
    total = int(np.prod(shape))
    big = max(max(shape[k], total // shape[k]) for k in active_modes)
    return 1.0 / np.sqrt(big)


def weighted_lambda(shape, weights):
    """Sum over modes of ``w_k * default_lambda(shape, [k])``.

    Keeps the sparse term on the same scale as a weighted sum of nuclear
    norms; equals :func:`default_lambda` for a single unit-weight mode.
    """
    return float(sum(w * default_lambda(shape, [k]) for k, w in enumerate(weights) if w > 0))


def _unfold_b(x, mode):
    # Batched unfold: axis 0 is the batch; same column order as tensor.unfold.
    nd = x.ndim - 1
    rest = [k + 1 for k in range(nd) if k != mode]
    moved = np.transpose(x, [0, mode + 1] + rest[::-1])
    return moved.reshape(x.shape[0], x.shape[mode + 1], -1)


def _fold_b(m, mode, shape):
    nd = len(shape)
    rest = [k for k in range(nd) if k != mode]
    moved = m.reshape((m.shape[0], shape[mode]) + tuple(shape[k] for k in rest[::-1]))
    perm = [0, mode + 1] + [k + 1 for k in rest[::-1]]
    return np.ascontiguousarray(np.transpose(moved, np.argsort(perm)))


def _norms(a):
    return np.sqrt(np.sum(a * a, axis=tuple(range(1, a.ndim))))


def _bcast(v, ndim):
    return v.reshape((-1,) + (1,) * (ndim - 1))


def _svt(m, tau):
    # Singular value thresholding without the sign normalisation of tensor.svt;
    # only the leading singular triplets that survive the threshold are multiplied back.
    u, sv, vt = np.linalg.svd(m, full_matrices=False)
    sv = np.maximum(sv - tau[:, None], 0.0)
    r = max(int(np.count_nonzero(sv, axis=1).max()), 1)
    return (u[..., :r] * sv[:, None, :r]) @ vt[:, :r, :]


def admm_solve_batch(xs, cfg=RpcaConfig(), observed=None):
    """Solve independent problems for every tensor in the stack `xs`.

    Returns a list of :class:`RpcaResult`, one per leading index. Each
    problem keeps its own penalty schedule and stops on its own.

    `observed` (boolean, shaped like `xs`) marks the known entries. Unknown
    entries carry no data term and no sparse part, so the low-rank estimate
    fills them in; their `N` is meaningless.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim < 3:
        raise InvalidArgument("expected a stack of tensors with at least 2 modes")
    if not np.all(np.isfinite(xs)):
        raise InvalidArgument("input contains non-finite values")
    G, shape = xs.shape[0], xs.shape[1:]
    nd = len(shape)
    w = cfg.validate(nd)
    active = [k for k in range(nd) if w[k] > 0]
    K = len(active)
    lam = cfg.lam if cfg.lam is not None else weighted_lambda(shape, w)
    eta = cfg.eta
    if observed is not None:
        observed = np.broadcast_to(np.asarray(observed, dtype=bool), xs.shape)
        xs = np.where(observed, xs, 0.0)

    xnorm = _norms(xs)
    if cfg.mu0 is not None:
        mu = np.full(G, float(cfg.mu0))
    else:
        heavy = int(np.argmax(w))
        sig1 = np.linalg.norm(_unfold_b(xs, heavy), ord=2, axis=(1, 2))
        mu = 1.25 / np.where(sig1 > 0, sig1, 1.0)
    mu_max = cfg.mu_max if cfg.mu_max is not None else 1e7 * mu
    mu_max = np.broadcast_to(np.asarray(mu_max, dtype=float), (G,)).copy()
    scale = np.where(xnorm > 0, xnorm, 1.0)

    # Working arrays hold only the problems still iterating; finished ones are
    # written back to L_out / S_out and dropped from the batch.
    L_out = np.zeros_like(xs)
    S_out = np.zeros_like(xs)
    iters = np.zeros(G, dtype=np.int64)
    converged = np.zeros(G, dtype=bool)
    history = [[] for _ in range(G)]

    idx = np.arange(G)
    X = xs
    o = None if observed is None else observed.astype(float)
    l = np.zeros_like(xs)
    s = np.zeros_like(xs)
    y = np.zeros_like(xs) if eta == 0 else None
    lams = {k: np.zeros_like(xs) for k in active}
    m = mu.copy()
    for it in range(1, cfg.max_iter + 1):
        mb = _bcast(m, xs.ndim)
        zsum = np.zeros_like(l)
        z = {}
        for k in active:
            try:
                z[k] = _fold_b(_svt(_unfold_b(l + lams[k] / mb, k), w[k] / m), k, shape)
            except np.linalg.LinAlgError as e:
                raise DivergenceError(it) from e
            zsum += z[k] - lams[k] / mb
        if o is None:
            if eta > 0:
                l = (mb * zsum + eta * (X - s)) / (K * mb + eta)
                s = soft_threshold(X - l, lam / eta)
            else:
                l = (zsum + X - s + y / mb) / (K + 1)
                s = soft_threshold(X - l + y / mb, lam / mb)
        elif eta > 0:
            l = (mb * zsum + eta * o * (X - s)) / (K * mb + eta * o)
            s = o * soft_threshold(X - l, lam / eta)
        else:
            l = (zsum + o * (X - s + y / mb)) / (K + o)
            s = o * soft_threshold(X - l + y / mb, lam / mb)
        res = np.zeros(len(idx))
        for k in active:
            gap = l - z[k]
            lams[k] += mb * gap
            res = np.maximum(res, _norms(gap))
        if eta == 0:
            gap = X - l - s if o is None else o * (X - l - s)
            y += mb * gap
            res = np.maximum(res, _norms(gap))
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(s))):
            raise DivergenceError(it)
        rel = res / scale[idx]
        for j, g in enumerate(idx):
            history[g].append(float(rel[j]))
        iters[idx] = it
        done = rel <= cfg.tol
        m = np.minimum(cfg.rho * m, mu_max[idx])
        if it == cfg.max_iter or done.all():
            L_out[idx], S_out[idx] = l, s
            converged[idx[done]] = True
            idx = idx[:0]
            break
        if done.any():
            L_out[idx[done]], S_out[idx[done]] = l[done], s[done]
            converged[idx[done]] = True
            keep = ~done
            idx, X, l, s, m = idx[keep], X[keep], l[keep], s[keep], m[keep]
            if o is not None:
                o = o[keep]
            if y is not None:
                y = y[keep]
            lams = {k: v[keep] for k, v in lams.items()}

    if not converged.all():
        log.debug("%d of %d problems hit max_iter=%d", int((~converged).sum()), G, cfg.max_iter)
    N = xs - (L_out + S_out)
    return [
        RpcaResult(L=L_out[g], S=S_out[g], N=N[g], iters=int(iters[g]),
                   residual_history=history[g], converged=bool(converged[g]))
        for g in range(G)
    ]


def admm_solve(x, cfg=RpcaConfig()):
    """Decompose tensor `x` into low-rank `L`, sparse `S` and residual `N = x - L - S`."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise InvalidArgument("expected a tensor with at least 2 modes")
    return admm_solve_batch(x[None], cfg)[0]


def with_defaults(cfg, **overrides):
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
