"""Differentiable training objectives: MSE and the DILATE shape+temporal loss.

The DILATE objective blends a smoothed dynamic-time-warping value (the shape
term) with a time-distortion penalty on the expected alignment (the temporal
term), balanced by ``alpha``.  The smoothing temperature ``gamma`` controls
how close the smooth minimum sits to the hard minimum.

All dynamic programs run in log-space with min-subtraction so values stay
finite for any gamma in [1e-4, 10].  The numpy core below is batched over
leading axes; thin single-pair wrappers expose the documented signatures, and
autograd bridges at the bottom plug both losses into the tensor engine with
analytic gradients (the temporal term's gradient needs a second-order pass
over the soft-min recursion, implemented as a directional derivative of the
whole forward+backward program).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import DimensionError, Tensor


@dataclass(frozen=True)
class DilateConfig:
    """Blend weight alpha in [0,1] and smoothing temperature gamma > 0."""

    alpha: float = 0.5
    gamma: float = 0.01

    def validate(self) -> "DilateConfig":
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        return self


def cost_matrix(y_hat: np.ndarray, y_true: np.ndarray) -> np.ndarray:
    """Pairwise squared differences: delta[i, j] = (y_hat[i] - y_true[j])**2."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    return (y_hat[..., :, None] - y_true[..., None, :]) ** 2


def omega_matrix(k: int) -> np.ndarray:
    """Squared time-distortion penalty: omega[h, j] = (h - j)**2 / k**2."""
    idx = np.arange(k, dtype=np.float64)
    return (idx[:, None] - idx[None, :]) ** 2 / float(k * k)


# -- batched dynamic programs ---------------------------------------------------
#
# Layout: V is the accumulated matrix padded with one +inf border row/column
# (V[:, 0, 0] = 0 is the start).  Q[:, i, j] holds the soft-min weights of
# cell (i, j) over its three predecessors in the order
# (left (i,j-1), diagonal (i-1,j-1), up (i-1,j)).  E and its companions use a
# two-cell pad with a virtual terminal at (m+1, n+1).


def _forward_dp(delta: np.ndarray, gamma: float):
    b, m, n = delta.shape
    v = np.full((b, m + 1, n + 1), np.inf)
    v[:, 0, 0] = 0.0
    q = np.zeros((b, m + 2, n + 2, 3))
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            prev = np.stack((v[:, i, j - 1], v[:, i - 1, j - 1], v[:, i - 1, j]),
                            axis=-1)
            lowest = prev.min(axis=-1, keepdims=True)
            z = np.exp(-(prev - lowest) / gamma)
            total = z.sum(axis=-1)
            v[:, i, j] = delta[:, i - 1, j - 1] + lowest[:, 0] - gamma * np.log(total)
            q[:, i, j] = z / total[:, None]
    return v[:, m, n].copy(), v[:, 1:, 1:].copy(), q


def _expected_path(q: np.ndarray) -> np.ndarray:
    b, m2, n2, _ = q.shape
    m, n = m2 - 2, n2 - 2
    q = q.copy()
    q[:, m + 1, n + 1, 1] = 1.0
    e = np.zeros((b, m + 2, n + 2))
    e[:, m + 1, n + 1] = 1.0
    for i in range(m, 0, -1):
        for j in range(n, 0, -1):
            e[:, i, j] = (q[:, i, j + 1, 0] * e[:, i, j + 1]
                          + q[:, i + 1, j + 1, 1] * e[:, i + 1, j + 1]
                          + q[:, i + 1, j, 2] * e[:, i + 1, j])
    return e


def _path_direction_derivative(q: np.ndarray, e_pad: np.ndarray,
                               zeta: np.ndarray, gamma: float) -> np.ndarray:
    """Directional derivative of the expected alignment along a cost
    perturbation `zeta`; contracted against omega this is the temporal term's
    exact gradient with respect to the cost matrix."""
    b, m2, n2, _ = q.shape
    m, n = m2 - 2, n2 - 2
    v_dot = np.zeros((b, m + 1, n + 1))
    q_dot = np.zeros_like(q)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            vd = np.stack((v_dot[:, i, j - 1], v_dot[:, i - 1, j - 1],
                           v_dot[:, i - 1, j]), axis=-1)
            qi = q[:, i, j]
            mixed = (qi * vd).sum(axis=-1, keepdims=True)
            v_dot[:, i, j] = zeta[:, i - 1, j - 1] + mixed[:, 0]
            q_dot[:, i, j] = -qi * (vd - mixed) / gamma
    q = q.copy()
    q[:, m + 1, n + 1, 1] = 1.0
    e_dot = np.zeros((b, m + 2, n + 2))
    for i in range(m, 0, -1):
        for j in range(n, 0, -1):
            e_dot[:, i, j] = (
                q_dot[:, i, j + 1, 0] * e_pad[:, i, j + 1]
                + q[:, i, j + 1, 0] * e_dot[:, i, j + 1]
                + q_dot[:, i + 1, j + 1, 1] * e_pad[:, i + 1, j + 1]
                + q[:, i + 1, j + 1, 1] * e_dot[:, i + 1, j + 1]
                + q_dot[:, i + 1, j, 2] * e_pad[:, i + 1, j]
                + q[:, i + 1, j, 2] * e_dot[:, i + 1, j])
    return e_dot[:, 1:m + 1, 1:n + 1]


def _dilate_batch(y_hat: np.ndarray, y_true: np.ndarray, cfg: DilateConfig):
    """Per-sample loss pieces for a [batch, k] stack of prediction/target pairs."""
    delta = cost_matrix(y_hat, y_true)
    value, _, q = _forward_dp(delta, cfg.gamma)
    e_pad = _expected_path(q)
    k = y_hat.shape[-1]
    e = e_pad[:, 1:k + 1, 1:k + 1]
    omega = omega_matrix(k)
    temporal = (e * omega).sum(axis=(-2, -1))
    loss = cfg.alpha * value + (1.0 - cfg.alpha) * temporal
    return loss, value, temporal, delta, q, e_pad


def _dilate_grad_batch(y_hat: np.ndarray, y_true: np.ndarray, cfg: DilateConfig,
                       delta: np.ndarray, q: np.ndarray,
                       e_pad: np.ndarray) -> np.ndarray:
    k = y_hat.shape[-1]
    e = e_pad[:, 1:k + 1, 1:k + 1]
    grad_delta = cfg.alpha * e
    if cfg.alpha < 1.0:
        omega = np.broadcast_to(omega_matrix(k), delta.shape)
        e_dot = _path_direction_derivative(q, e_pad, omega, cfg.gamma)
        grad_delta = grad_delta + (1.0 - cfg.alpha) * e_dot
    # chain through delta[i, j] = (y_hat_i - y_true_j)^2
    return 2.0 * (grad_delta.sum(axis=-1) * y_hat
                  - np.einsum("bij,bj->bi", grad_delta, y_true))


# -- documented single-pair surface ----------------------------------------------


def soft_dtw(delta: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    """Smoothed DTW of a pairwise cost matrix.

    Runs the O(k^2) soft-min recursion and returns the smooth alignment value
    together with the accumulated matrix R needed by
    :func:`soft_dtw_expected_path`.
    """
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    delta = np.asarray(delta, dtype=np.float64)
    value, r, _ = _forward_dp(delta[None], gamma)
    return float(value[0]), r[0]


def soft_dtw_expected_path(r: np.ndarray, delta: np.ndarray,
                           gamma: float) -> np.ndarray:
    """Expected alignment matrix: the gradient of the soft-DTW value with
    respect to the cost matrix.  Entry (i, j) is the probability mass of
    alignment paths through that cell at temperature gamma."""
    r = np.asarray(r, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    m, n = delta.shape
    # Rebuild the local soft-min weights from R: the weight of predecessor
    # (p, q) for cell (i, j) is exp((R[i,j] - delta[i,j] - R[p,q]) / gamma),
    # which is always <= 1.
    v = np.full((m + 1, n + 1), np.inf)
    v[0, 0] = 0.0
    v[1:, 1:] = r
    q = np.zeros((1, m + 2, n + 2, 3))
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            head = v[i, j] - delta[i - 1, j - 1]
            prev = np.array((v[i, j - 1], v[i - 1, j - 1], v[i - 1, j]))
            with np.errstate(invalid="ignore"):
                w = np.exp((head - prev) / gamma)
            q[0, i, j] = np.where(np.isinf(prev), 0.0, w)
    return _expected_path(q)[0, 1:m + 1, 1:n + 1]


def temporal_loss(e: np.ndarray, omega: np.ndarray) -> float:
    """Inner product of the expected alignment with the distortion penalty."""
    e = np.asarray(e, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if e.shape != omega.shape:
        raise DimensionError(
            f"alignment {e.shape} and penalty {omega.shape} shapes differ")
    return float((e * omega).sum())


def dilate_loss(y_hat: np.ndarray, y_true: np.ndarray,
                cfg: DilateConfig | None = None) -> float:
    """alpha-weighted sum of the shape term and the temporal term."""
    cfg = (cfg or DilateConfig()).validate()
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_hat.shape != y_true.shape or y_hat.ndim != 1 or y_hat.size < 1:
        raise DimensionError(
            f"expected equal-length vectors, got {y_hat.shape} and {y_true.shape}")
    loss, _, _, _, _, _ = _dilate_batch(y_hat[None], y_true[None], cfg)
    return float(loss[0])


def dilate_parts(y_hat: np.ndarray, y_true: np.ndarray,
                 cfg: DilateConfig | None = None) -> tuple[float, float]:
    """(shape term, temporal term) of the DILATE objective, unblended."""
    cfg = (cfg or DilateConfig()).validate()
    _, value, temporal, _, _, _ = _dilate_batch(
        np.asarray(y_hat, dtype=np.float64)[None],
        np.asarray(y_true, dtype=np.float64)[None], cfg)
    return float(value[0]), float(temporal[0])


def dilate_backward(y_hat: np.ndarray, y_true: np.ndarray,
                    cfg: DilateConfig | None = None) -> np.ndarray:
    """Analytic gradient of the full DILATE objective with respect to y_hat,
    including the second-order dependence of the expected alignment on the
    cost matrix inside the temporal term."""
    cfg = (cfg or DilateConfig()).validate()
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    _, _, _, delta, q, e_pad = _dilate_batch(y_hat[None], y_true[None], cfg)
    return _dilate_grad_batch(y_hat[None], y_true[None], cfg, delta, q, e_pad)[0]


# -- autograd bridges -------------------------------------------------------------


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over all entries; gradient is 2*(pred - target)/k."""
    pred = Tensor._lift(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(
            f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
    diff = pred - Tensor(target)
    return (diff * diff).mean()


def dilate_training_loss(pred: Tensor, target, cfg: DilateConfig | None = None) -> Tensor:
    """DILATE objective as a graph node: per-sample on [batch, k] rows,
    averaged over the batch, with the analytic backward pass."""
    cfg = (cfg or DilateConfig()).validate()
    pred = Tensor._lift(pred)
    target = np.asarray(target, dtype=np.float64)
    squeeze = pred.ndim == 1
    pred2 = pred.reshape(1, -1) if squeeze else pred
    target2 = target[None] if squeeze else target
    if pred2.shape != target2.shape:
        raise DimensionError(
            f"dilate loss: prediction {pred.shape} and target {target.shape} differ")
    y_hat = pred2.data
    loss, _, _, delta, q, e_pad = _dilate_batch(y_hat, target2, cfg)
    b = y_hat.shape[0]
    out = np.asarray(loss.mean())

    def rule(g):
        grad = _dilate_grad_batch(y_hat, target2, cfg, delta, q, e_pad)
        grad = grad * (float(g) / b)
        return (grad[0] if squeeze else grad,)

    return Tensor._node(out, (pred,), rule)
