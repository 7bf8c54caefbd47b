"""Gradient ascent on the k-attempt objective over a fixed toy batch.

Each step moves theta along the exact population k-attempt gradient and
records both objectives, their per-label restrictions, and the conflict
diagnostics at the pre-update point.
"""

from dataclasses import dataclass

import numpy as np

from .bandit import (
    BanditConfig,
    PromptBatch,
    _check_theta,
    grad_success_probs,
    policy_regularity_constants,
    reference_theta,
    sample_prompts,
    success_probs,
)
from .conflict import conflict_report, max_safe_step, smoothness_constants
from .errors import DomainError
from .interference import GradientTable
from .objectives import SuccessProfile, fk_array, ordered_dot, wk_array
from .serialization import write_csv

TRAJECTORY_COLUMNS = (
    "step",
    "j1_pop",
    "jk_pop",
    "j1_easy",
    "j1_hard",
    "jk_easy",
    "jk_hard",
    "inner_product",
    "delta_bound",
)


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    theta: np.ndarray
    j1_pop: float
    jk_pop: float
    j1_easy: float
    j1_hard: float
    jk_easy: float
    jk_hard: float
    inner_product: float
    delta_bound: float

    def row(self) -> tuple:
        return (
            self.step,
            self.j1_pop,
            self.jk_pop,
            self.j1_easy,
            self.j1_hard,
            self.jk_easy,
            self.jk_hard,
            self.inner_product,
            self.delta_bound,
        )


def _label_mean(values: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return float("nan")
    sub = values[mask]
    return ordered_dot(np.full(sub.size, 1.0 / sub.size), sub)


def evaluate_state(
    theta, batch: PromptBatch, k: int, margin: float = 1e-6, step: int = 0
) -> TrajectoryRecord:
    """All trajectory metrics at one parameter vector."""
    theta = _check_theta(theta)
    p = success_probs(theta, batch)
    f1 = fk_array(p, 1)
    fkv = fk_array(p, k)
    n = len(batch)
    mass = np.full(n, 1.0 / n)
    hard = batch.hard_mask
    table = GradientTable(
        grads=grad_success_probs(theta, batch), mass=mass, ids=batch.ids
    )
    profile = SuccessProfile(probs=p, mass=mass, ids=batch.ids)
    report = conflict_report(
        table, profile, k, margin=margin,
        constants=policy_regularity_constants(batch),
    )
    return TrajectoryRecord(
        step=step,
        theta=theta.copy(),
        j1_pop=ordered_dot(mass, f1),
        jk_pop=ordered_dot(mass, fkv),
        j1_easy=_label_mean(f1, ~hard),
        j1_hard=_label_mean(f1, hard),
        jk_easy=_label_mean(fkv, ~hard),
        jk_hard=_label_mean(fkv, hard),
        inner_product=report.inner_product,
        delta_bound=report.delta_bound,
    )


def passk_gradient(theta, batch: PromptBatch, k: int) -> np.ndarray:
    """Exact population k-attempt gradient over the batch."""
    p = success_probs(theta, batch)
    g = grad_success_probs(theta, batch)
    w = wk_array(p, k)
    n = len(batch)
    out = np.zeros(2)
    for i in range(n):
        out += (w[i] / n) * g[i]
    return out


def ascent_step(
    theta, batch: PromptBatch, k: int, eta: float, margin: float = 1e-6
) -> tuple[np.ndarray, TrajectoryRecord]:
    """One additive update theta + eta * grad, with the pre-update record."""
    if not eta > 0:
        raise DomainError(f"eta must be > 0, got {eta}")
    record = evaluate_state(theta, batch, k, margin=margin)
    grad = passk_gradient(theta, batch, k)
    if np.any(~np.isfinite(grad)):
        raise DomainError("nonfinite population gradient")
    return np.asarray(theta, dtype=float) + eta * grad, record


def run_trajectory(
    config: BanditConfig,
    theta0=None,
    k: int = 5,
    eta: float | None = 1.0,
    steps: int = 100,
    n: int = 6000,
    margin: float = 1e-6,
    batch: PromptBatch | None = None,
) -> list[TrajectoryRecord]:
    """Iterate ascent from theta0 (default: the derived reference parameter)
    on one seeded batch, recording every visited parameter.

    eta=None runs in certified mode: each step uses the largest step size
    whose one-step degradation certificate holds, stopping early once the
    certificate margin delta is no longer positive.  A pre-built batch may
    be supplied instead of sampling n prompts from config.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    if batch is None:
        batch = sample_prompts(config, n)
    theta = reference_theta() if theta0 is None else _check_theta(theta0)
    g2, f = policy_regularity_constants(batch)
    _, lk, c2 = smoothness_constants(g2, f, k)

    records: list[TrajectoryRecord] = []
    for t in range(steps):
        record = evaluate_state(theta, batch, k, margin=margin, step=t)
        records.append(record)
        if eta is None:
            if record.delta_bound <= 0:
                return records
            step_size = max_safe_step(record.delta_bound, c2, lk)
        else:
            step_size = eta
        grad = passk_gradient(theta, batch, k)
        if np.any(~np.isfinite(grad)):
            raise DomainError("nonfinite population gradient")
        theta = theta + step_size * grad
    records.append(evaluate_state(theta, batch, k, margin=margin, step=steps))
    return records


def trajectory_to_csv(records, path) -> None:
    write_csv(path, TRAJECTORY_COLUMNS, (r.row() for r in records))
