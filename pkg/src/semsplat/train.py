"""Feature optimization over cached view weights.

Only the per-point feature vectors move; geometry stays frozen, so each
step is: render the step's views through their fixed weight fields, evaluate
the objective, push gradients back to features, update with Adam or SGD.
Everything is seeded and single-threaded, so runs are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .losses import HyperParams, LossDiagnostics, total_loss
from .scene import Scene
from .views import ViewPacket


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    learning_rate: float = 2.5e-2
    optimizer: str = "adam"          # "adam" or "sgd"
    views_per_step: int = 1
    view_sampling: str = "round_robin"  # or "random"
    seed: int = 0
    checkpoint_every: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.views_per_step < 1:
            raise ValidationError("views_per_step must be >= 1")
        if self.view_sampling not in ("round_robin", "random"):
            raise ValidationError(f"unknown view_sampling {self.view_sampling!r}")


@dataclass
class TrainReport:
    total: np.ndarray
    clustering: np.ndarray
    instance: np.ndarray
    sibling: np.ndarray
    diagnostics: LossDiagnostics
    wall_time_s: float
    feature_checksum: str
    iterations: int

    @property
    def final_loss(self) -> float:
        return float(self.total[-1])


def feature_checksum(features: np.ndarray) -> str:
    """Order-stable digest of the raw float64 feature bytes."""
    contiguous = np.ascontiguousarray(features, dtype=np.float64)
    return hashlib.sha256(contiguous.tobytes()).hexdigest()


class _Adam:
    def __init__(self, shape, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grad):
        params -= self.lr * grad


def _offending_term(result) -> str:
    for name, value in (("clustering", result.clustering),
                        ("instance", result.instance),
                        ("sibling", result.sibling)):
        if not np.isfinite(value):
            return name
    return "total"


def train(scene: Scene, packets: list[ViewPacket], hp: HyperParams,
          cfg: TrainConfig, checkpoint_fn=None) -> tuple[np.ndarray, TrainReport]:
    """Optimize point features; returns (trained features, report).

    Packets must be prepared (weights + trees cached).  checkpoint_fn, when
    given, is called as checkpoint_fn(iteration, features) every
    cfg.checkpoint_every iterations.
    """
    if not packets:
        raise ValidationError("training needs at least one view packet")
    for p in packets:
        if p.weights is None or p.tree is None:
            raise ValidationError(f"view {p.view_id} is not prepared")

    features = scene.features.copy()
    if cfg.optimizer == "adam":
        opt = _Adam(features.shape, cfg.learning_rate,
                    cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    else:
        opt = _Sgd(cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    n_views = len(packets)
    series = {k: np.zeros(cfg.iterations) for k in
              ("total", "clustering", "instance", "sibling")}
    diag = LossDiagnostics()
    start = time.monotonic()

    cursor = 0
    for it in range(cfg.iterations):
        if cfg.view_sampling == "random":
            chosen = [packets[int(i)] for i in
                      rng.integers(0, n_views, size=cfg.views_per_step)]
        else:
            chosen = [packets[(cursor + k) % n_views] for k in range(cfg.views_per_step)]
            cursor = (cursor + cfg.views_per_step) % n_views

        result = total_loss(features, chosen, hp)
        if not np.isfinite(result.value):
            raise NumericalError(
                f"non-finite loss at iteration {it}: term={_offending_term(result)}")

        series["total"][it] = result.value
        series["clustering"][it] = result.clustering
        series["instance"][it] = result.instance
        series["sibling"][it] = result.sibling
        diag.merge(result.diagnostics)

        opt.step(features, result.grad)

        if checkpoint_fn is not None and cfg.checkpoint_every > 0 \
                and (it + 1) % cfg.checkpoint_every == 0:
            checkpoint_fn(it + 1, features)

    report = TrainReport(
        total=series["total"], clustering=series["clustering"],
        instance=series["instance"], sibling=series["sibling"],
        diagnostics=diag, wall_time_s=time.monotonic() - start,
        feature_checksum=feature_checksum(features), iterations=cfg.iterations,
    )
    return features, report


@dataclass
class GradientCheckResult:
    max_rel_error: float | None
    probes: int
    note: str = ""


def gradient_check(scene: Scene, packet: ViewPacket, hp: HyperParams,
                   n_probes: int = 20, seed: int = 0,
                   step: float = 1e-4) -> GradientCheckResult:
    """Compare the analytic total-loss gradient to central differences on
    randomly probed feature coordinates of one view.

    Relative error uses an absolute floor of 1e-6 per coordinate (the
    finite-difference noise scale); when both gradients vanish everywhere
    the check reports "no differentiable terms" instead of zero.
    """
    packet.prepare(scene, hp.coverage_threshold)
    features = scene.features.copy()
    analytic = total_loss(features, [packet], hp).grad

    rng = np.random.default_rng(seed)
    n, d = features.shape
    flat_coords = rng.choice(n * d, size=min(n_probes, n * d), replace=False)

    max_err = 0.0
    any_signal = bool(np.any(analytic != 0.0))
    for c in flat_coords:
        i, j = divmod(int(c), d)
        bump = np.zeros_like(features)
        bump[i, j] = step
        hi = total_loss(features + bump, [packet], hp).value
        lo = total_loss(features - bump, [packet], hp).value
        fd = (hi - lo) / (2.0 * step)
        if fd != 0.0:
            any_signal = True
        a = analytic[i, j]
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
        max_err = max(max_err, err)

    if not any_signal:
        return GradientCheckResult(max_rel_error=None, probes=len(flat_coords),
                                   note="no differentiable terms")
    return GradientCheckResult(max_rel_error=max_err, probes=len(flat_coords))
