"""Gradient-domain blending.

Two routes are provided. ``poisson_blend`` solves the discrete Poisson
equation over the masked interior with the mask boundary pinned to the
target. ``variational_blend`` minimizes the weighted sum of a background
reconstruction term, a Laplacian matching term and an edge-band term directly
over pixel values by projected gradient descent.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .compositor import compose
from .image import as_image, as_mask, check_same_size, ShapeMismatchError
from .morphology import DEFAULT_EDGE_RADIUS

log = logging.getLogger(__name__)

CHARBONNIER_EPS = 1e-3
MIN_STEP = 1e-8
VARIATIONAL_MAX_ITERS = 500
STALL_WINDOW = 10


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class BlendConfig:
    """Weights and solver settings.

    ``max_iters=None`` selects the mode default: ten times the number of
    unknowns for the Poisson solve, 500 descent steps for variational mode.
    ``step_size`` is measured per sample: the objective gradient is rescaled
    by the number of samples before stepping.
    """
    lambda_grad: float = 1.0
    lambda_edge: float = 2.0
    solver_tol: float = 1e-6
    max_iters: Optional[int] = None
    step_size: float = 0.5
    edge_radius: int = DEFAULT_EDGE_RADIUS

    def __post_init__(self):
        if self.lambda_grad < 0 or self.lambda_edge < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.edge_radius < 1:
            raise ValueError("edge_radius must be at least 1")


@dataclass(frozen=True)
class LossBreakdown:
    l_bg: float
    l_grad: float
    l_edge: float
    total: float
    n_bg: int
    n_fg: int
    n_edge: int

    def to_dict(self) -> dict:
        return asdict(self)


# -- Laplacian ---------------------------------------------------------------

def laplacian_matrix(height: int, width: int) -> sparse.csr_matrix:
    """5-point Laplacian on a row-major HxW grid with replicate padding.

    Out-of-range neighbours resolve to the pixel itself, so every row sums
    to zero and constants are annihilated.
    """
    idx = np.arange(height * width).reshape(height, width)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [np.full(idx.size, -4.0)]
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ys = np.clip(np.arange(height) + dy, 0, height - 1)
        xs = np.clip(np.arange(width) + dx, 0, width - 1)
        rows.append(idx.ravel())
        cols.append(idx[np.ix_(ys, xs)].ravel())
        vals.append(np.ones(idx.size))
    n = height * width
    lap = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return lap.tocsr()


def laplacian(img, lap: Optional[sparse.csr_matrix] = None) -> np.ndarray:
    img = as_image(img)
    h, w, c = img.shape
    if lap is None:
        lap = laplacian_matrix(h, w)
    return (lap @ img.reshape(h * w, c)).reshape(h, w, c)


# -- ℓ1 losses -----------------------------------------------------------------

def _masked_mean_abs(diff: np.ndarray, region: np.ndarray) -> float:
    n = int(region.sum())
    if n == 0:
        return 0.0
    return float(np.abs(diff[region]).sum() / (n * diff.shape[2]))


def _check_pair(a, b, region):
    a, b = as_image(a), as_image(b)
    region = as_mask(region)
    check_same_size(a, b, region)
    if a.shape[2] != b.shape[2]:
        raise ShapeMismatchError("channel counts differ")
    return a, b, region


def loss_bg(candidate, target, mask) -> float:
    """Mean absolute error against ``target`` over unmasked pixels."""
    candidate, target, mask = _check_pair(candidate, target, mask)
    return _masked_mean_abs(candidate - target, ~mask)


def loss_grad(candidate, source, mask) -> float:
    """Mean absolute Laplacian mismatch over masked pixels."""
    candidate, source, mask = _check_pair(candidate, source, mask)
    lap = laplacian_matrix(*mask.shape)
    return _masked_mean_abs(laplacian(candidate, lap) - laplacian(source, lap), mask)


def loss_edge(candidate, source, edge) -> float:
    candidate, source, edge = _check_pair(candidate, source, edge)
    return _masked_mean_abs(candidate - source, edge)


def total_objective(candidate, source, target, mask, edge, cfg: BlendConfig = BlendConfig()) -> LossBreakdown:
    candidate, source, mask = _check_pair(candidate, source, mask)
    target = as_image(target)
    edge = as_mask(edge)
    check_same_size(candidate, target, edge)
    l_bg = loss_bg(candidate, target, mask)
    l_grad = loss_grad(candidate, source, mask)
    l_edge = loss_edge(candidate, source, edge)
    return LossBreakdown(
        l_bg=l_bg,
        l_grad=l_grad,
        l_edge=l_edge,
        total=l_bg + cfg.lambda_grad * l_grad + cfg.lambda_edge * l_edge,
        n_bg=int((~mask).sum()),
        n_fg=int(mask.sum()),
        n_edge=int(edge.sum()),
    )


# -- smoothed objective ----------------------------------------------------------

def charbonnier(x: np.ndarray, eps: float = CHARBONNIER_EPS) -> np.ndarray:
    """``sqrt(x^2 + eps^2) - eps``: zero at the origin, ~|x| away from it."""
    return np.sqrt(x * x + eps * eps) - eps


def charbonnier_grad(x: np.ndarray, eps: float = CHARBONNIER_EPS) -> np.ndarray:
    return x / np.sqrt(x * x + eps * eps)


@dataclass
class SmoothObjective:
    """Differentiable surrogate of the blending objective.

    Each ℓ1 term is replaced by the Charbonnier penalty; the normalizations
    and weights are the same as in :func:`total_objective`.
    """
    source: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    edge: np.ndarray
    cfg: BlendConfig = field(default_factory=BlendConfig)
    eps: float = CHARBONNIER_EPS

    def __post_init__(self):
        self.source, self.target, self.mask = _check_pair(self.source, self.target, self.mask)
        self.edge = as_mask(self.edge)
        check_same_size(self.source, self.edge)
        h, w, c = self.source.shape
        self.lap = laplacian_matrix(h, w)
        self.lap_t = self.lap.T.tocsr()
        self.lap_source = self._lap(self.source)
        bg = ~self.mask
        self._regions = (bg[:, :, None], self.mask[:, :, None], self.edge[:, :, None])
        self.w_bg = 1.0 / (bg.sum() * c) if bg.any() else 0.0
        self.w_grad = self.cfg.lambda_grad / (self.mask.sum() * c) if self.mask.any() else 0.0
        self.w_edge = self.cfg.lambda_edge / (self.edge.sum() * c) if self.edge.any() else 0.0

    def _lap(self, img, op=None):
        h, w, c = img.shape
        op = self.lap if op is None else op
        return (op @ img.reshape(h * w, c)).reshape(h, w, c)

    def _residuals(self, x):
        return x - self.target, self._lap(x) - self.lap_source, x - self.source

    def value(self, x: np.ndarray) -> float:
        r_bg, r_grad, r_edge = self._residuals(x)
        bg, fg, edge = self._regions
        return float(
            self.w_bg * np.sum(charbonnier(r_bg, self.eps) * bg)
            + self.w_grad * np.sum(charbonnier(r_grad, self.eps) * fg)
            + self.w_edge * np.sum(charbonnier(r_edge, self.eps) * edge)
        )

    def gradient(self, x: np.ndarray) -> np.ndarray:
        r_bg, r_grad, r_edge = self._residuals(x)
        bg, fg, edge = self._regions
        g = self.w_bg * charbonnier_grad(r_bg, self.eps) * bg
        g = g + self._lap(self.w_grad * charbonnier_grad(r_grad, self.eps) * fg, self.lap_t)
        g = g + self.w_edge * charbonnier_grad(r_edge, self.eps) * edge
        return g


@dataclass
class VariationalResult:
    image: np.ndarray
    losses: LossBreakdown
    history: list
    iterations: int
    initial_losses: LossBreakdown


def descend(source, mask, target, cfg: BlendConfig = BlendConfig()) -> VariationalResult:
    """Projected gradient descent on the smoothed objective from the composite.

    A trial step is accepted only if the smoothed objective does not
    increase; otherwise the step is halved. Each iteration first tries up to
    twice the last accepted step, capped at ``cfg.step_size``. ``history``
    holds the smoothed objective at the start and after every accepted step.
    """
    composite = compose(source, mask, target, cfg.edge_radius)
    source, target = as_image(source), as_image(target)
    objective = SmoothObjective(source, target, composite.mask, composite.edge, cfg)
    max_iters = cfg.max_iters or VARIATIONAL_MAX_ITERS
    scale = float(composite.image.size)

    x = composite.image.copy()
    f = objective.value(x)
    history = [f]
    step = cfg.step_size
    iterations = 0
    while iterations < max_iters:
        iterations += 1
        g = objective.gradient(x) * scale
        if not np.any(g):
            break
        step = min(2.0 * step, cfg.step_size)
        accepted = False
        while step >= MIN_STEP:
            trial = np.clip(x - step * g, 0.0, 1.0)
            f_trial = objective.value(trial)
            if f_trial <= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            log.debug("variational blend: step fell below %g after %d iterations", MIN_STEP, iterations)
            break
        x, f = trial, f_trial
        history.append(f)
        if len(history) > STALL_WINDOW:
            past = history[-1 - STALL_WINDOW]
            if past - f <= cfg.solver_tol * abs(past):
                break

    initial = total_objective(composite.image, source, target, composite.mask, composite.edge, cfg)
    losses = total_objective(x, source, target, composite.mask, composite.edge, cfg)
    return VariationalResult(image=x, losses=losses, history=history,
                             iterations=iterations, initial_losses=initial)


def variational_blend(source, mask, target, cfg: BlendConfig = BlendConfig()):
    """Return ``(blended image, LossBreakdown)``."""
    result = descend(source, mask, target, cfg)
    return result.image, result.losses


# -- Poisson -------------------------------------------------------------------

def interior_pixels(mask) -> np.ndarray:
    """Masked pixels whose four neighbours all lie inside the image and the mask."""
    mask = as_mask(mask)
    inner = np.zeros_like(mask)
    inner[1:-1, 1:-1] = (
        mask[1:-1, 1:-1] & mask[:-2, 1:-1] & mask[2:, 1:-1] & mask[1:-1, :-2] & mask[1:-1, 2:]
    )
    return inner


def poisson_system(mask):
    """Assemble the SPD system over the interior unknowns.

    Returns ``(A, index)`` where ``index`` maps each pixel to its unknown
    number, -1 for pixels pinned to the target.
    """
    inner = interior_pixels(mask)
    h, w = inner.shape
    index = np.full((h, w), -1, dtype=np.int64)
    n = int(inner.sum())
    index[inner] = np.arange(n)
    ys, xs = np.nonzero(inner)
    rows, cols, vals = [index[ys, xs]], [index[ys, xs]], [np.full(n, 4.0)]
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = index[ys + dy, xs + dx]
        keep = nb >= 0
        rows.append(index[ys, xs][keep])
        cols.append(nb[keep])
        vals.append(np.full(int(keep.sum()), -1.0))
    a = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    return a, index


def _guidance(img: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """``sum_j (v_i - v_j)`` over the 4-neighbourhood, for interior pixels."""
    ys, xs = np.nonzero(inner)
    centre = img[ys, xs]
    total = np.zeros_like(centre)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        total += centre - img[ys + dy, xs + dx]
    return total


def conjugate_gradient(a, b, tol: float = 1e-6, max_iters: Optional[int] = None, x0=None):
    """Jacobi-preconditioned CG for SPD ``a``.

    Stops once ``||b - a x|| <= tol * ||b||``. Raises ConvergenceError when
    that is not reached within ``max_iters`` (default ``10 * n``).
    """
    n = b.shape[0]
    if max_iters is None:
        max_iters = 10 * max(n, 1)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), 0
    inv_diag = 1.0 / a.diagonal()
    r = b - a @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for k in range(max_iters + 1):
        res = np.linalg.norm(r) / b_norm
        if res <= tol:
            return x, k
        if k == max_iters:
            break
        ap = a @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError("conjugate gradient did not converge", res, max_iters)


def poisson_blend(source, mask, target, cfg: BlendConfig = BlendConfig(), clamp: bool = True) -> np.ndarray:
    """Seamless clone of the masked region of ``source`` into ``target``.

    Interior pixels satisfy ``sum_j (b_i - b_j) = sum_j (s_i - s_j)``; every
    other pixel, including masked pixels on the region boundary or the
    image border, takes the target value. The solve is for the offset from
    the target, so ``source == target`` returns ``target`` exactly.
    """
    source, target, mask = as_image(source), as_image(target), as_mask(mask)
    check_same_size(source, mask, target)
    if source.shape[2] != target.shape[2]:
        raise ShapeMismatchError("source and target channel counts differ")
    out = target.copy()
    inner = interior_pixels(mask)
    if not inner.any():
        return out
    a, _ = poisson_system(mask)
    rhs = _guidance(source, inner) - _guidance(target, inner)
    for ch in range(source.shape[2]):
        offset, iters = conjugate_gradient(a, rhs[:, ch], cfg.solver_tol, cfg.max_iters)
        log.debug("poisson channel %d: %d CG iterations", ch, iters)
        out[inner, ch] += offset
    return np.clip(out, 0.0, 1.0) if clamp else out
