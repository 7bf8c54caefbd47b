"""Two-action contextual bandit with closed-form success probabilities.

Prompts are drawn from a two-component Gaussian mixture over a scalar
feature; an "easy" prompt has correct action 0 and a "hard" prompt has
correct action 1.  The policy is logistic in the 2-d feature
[1, s], so success probabilities and their gradients have exact closed
forms, which is what makes this environment usable as a ground-truth
oracle for every estimator and bound in the package.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .errors import DomainError
from .objectives import ordered_dot

EASY, HARD = "easy", "hard"

DEFAULT_SEPARATION = 0.2
DEFAULT_HARD_FRACTION = 0.3
DEFAULT_SEED = 7


@dataclass(frozen=True)
class BanditConfig:
    separation: float = DEFAULT_SEPARATION
    hard_fraction: float = DEFAULT_HARD_FRACTION
    feature_std: float = 1.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not self.separation > 0:
            raise DomainError(f"separation must be > 0, got {self.separation}")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise DomainError(
                f"hard_fraction must lie in [0, 1], got {self.hard_fraction}"
            )
        if not self.feature_std > 0:
            raise DomainError(f"feature_std must be > 0, got {self.feature_std}")


@dataclass(frozen=True)
class PromptInstance:
    features: np.ndarray  # [1.0, s]
    label: str  # EASY or HARD
    correct_action: int  # 0 for easy, 1 for hard

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        object.__setattr__(self, "features", feats)
        if feats.shape != (2,) or feats[0] != 1.0:
            raise DomainError("features must be [1.0, s]")
        if self.label not in (EASY, HARD):
            raise DomainError(f"label must be easy or hard, got {self.label!r}")
        expected = 0 if self.label == EASY else 1
        if self.correct_action != expected:
            raise DomainError("correct_action must be 0 iff label is easy")


@dataclass(frozen=True)
class PromptBatch:
    """Column-oriented batch of prompt instances."""

    ids: tuple
    features: np.ndarray  # (n, 2)
    labels: np.ndarray  # (n,) of EASY/HARD
    correct_actions: np.ndarray  # (n,) of {0, 1}

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels)
        actions = np.asarray(self.correct_actions, dtype=int)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "correct_actions", actions)
        n = len(self.ids)
        if feats.shape != (n, 2) or labels.shape != (n,) or actions.shape != (n,):
            raise DomainError("batch columns must share length n")
        if n == 0:
            raise DomainError("batch must be nonempty")
        if np.any(feats[:, 0] != 1.0):
            raise DomainError("features[:, 0] must be exactly 1")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> PromptInstance:
        return PromptInstance(
            features=self.features[i],
            label=str(self.labels[i]),
            correct_action=int(self.correct_actions[i]),
        )

    @property
    def hard_mask(self) -> np.ndarray:
        return self.labels == HARD


def _check_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or np.any(~np.isfinite(theta)):
        raise DomainError("theta must be a finite 1-d vector")
    return theta


def sample_prompts(
    config: BanditConfig, n: int, rng: np.random.Generator | None = None
) -> PromptBatch:
    """Draw n prompts: label ~ Bernoulli(hard_fraction), then the scalar
    feature from N(+sep/2, std) for hard and N(-sep/2, std) for easy.

    Deterministic for a given config.seed when rng is not supplied.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    hard = rng.random(n) < config.hard_fraction
    centers = np.where(hard, config.separation / 2.0, -config.separation / 2.0)
    s = rng.normal(centers, config.feature_std)
    return PromptBatch(
        ids=tuple(str(i) for i in range(n)),
        features=np.stack([np.ones(n), s], axis=1),
        labels=np.where(hard, HARD, EASY),
        correct_actions=hard.astype(int),
    )


def action_prob(theta, x: PromptInstance, action: int) -> float:
    """Probability the logistic policy picks `action` on prompt x."""
    theta = _check_theta(theta)
    if action not in (0, 1):
        raise DomainError(f"action must be 0 or 1, got {action}")
    p1 = float(expit(theta @ x.features))
    return p1 if action == 1 else 1.0 - p1


def success_prob(theta, x: PromptInstance) -> float:
    """Probability of picking the correct action for x."""
    return action_prob(theta, x, x.correct_action)


def success_probs(theta, batch: PromptBatch) -> np.ndarray:
    """Vectorized success_prob over a batch."""
    theta = _check_theta(theta)
    p1 = expit(batch.features @ theta)
    return np.where(batch.hard_mask, p1, 1.0 - p1)


def sigmoid_slope(theta, features) -> np.ndarray:
    """z = sigma(u) * (1 - sigma(u)) at u = theta . features; in (0, 1/4]."""
    u = np.asarray(features, dtype=float) @ _check_theta(theta)
    sig = expit(u)
    return sig * (1.0 - sig)


def grad_success_prob(theta, x: PromptInstance) -> np.ndarray:
    """Gradient of success_prob in theta: -z*psi for easy, +z*psi for hard."""
    z = float(sigmoid_slope(theta, x.features))
    sign = -1.0 if x.label == EASY else 1.0
    return sign * z * x.features


def grad_success_probs(theta, batch: PromptBatch) -> np.ndarray:
    """Vectorized grad_success_prob: (n, 2) matrix of per-prompt gradients."""
    z = sigmoid_slope(theta, batch.features)
    signs = np.where(batch.hard_mask, 1.0, -1.0)
    return (signs * z)[:, None] * batch.features


def derive_reference_theta(
    p_easy_target: float,
    p_hard_target: float,
    psi_easy=(1.0, -0.1),
    psi_hard=(1.0, 0.1),
) -> np.ndarray:
    """Solve for the 2-d parameter hitting the two target success rates.

    The easy prompt succeeds with probability 1 - sigma(theta . psi_easy)
    and the hard one with sigma(theta . psi_hard), so the targets pin a
    2x2 linear system in logit space, solved exactly.
    """
    for name, p in (("p_easy_target", p_easy_target), ("p_hard_target", p_hard_target)):
        if not 0.0 < p < 1.0:
            raise DomainError(f"{name} must lie strictly inside (0, 1), got {p}")
    a = np.array([np.asarray(psi_easy, float), np.asarray(psi_hard, float)])
    if abs(np.linalg.det(a)) < 1e-12:
        raise DomainError("psi_easy and psi_hard are collinear; system is singular")
    b = np.array([logit(1.0 - p_easy_target), logit(p_hard_target)])
    return np.linalg.solve(a, b)


def reference_theta() -> np.ndarray:
    """The default easy-biased starting parameter (0.86 easy / 0.10 hard)."""
    return derive_reference_theta(0.86, 0.10)


def overlap_pair(theta=None) -> tuple[PromptBatch, np.ndarray]:
    """The canonical two-prompt batch from the overlap region.

    One easy prompt at feature +(-0.1) and one hard prompt at +0.1, with
    nearly identical representations and hence strongly opposed success
    gradients under any parameter.
    """
    if theta is None:
        theta = reference_theta()
    batch = PromptBatch(
        ids=("x_e", "x_h"),
        features=np.array([[1.0, -0.1], [1.0, 0.1]]),
        labels=np.array([EASY, HARD]),
        correct_actions=np.array([0, 1]),
    )
    return batch, np.asarray(theta, dtype=float)


def policy_regularity_constants(batch: PromptBatch) -> tuple[float, float]:
    """Uniform-in-theta bounds (g2, f) for the logistic policy on a batch.

    The expected squared score norm and the expected score-Hessian norm
    both equal z * ||psi||**2 in closed form, and z <= 1/4 for every
    parameter, so max ||psi||**2 / 4 bounds both quantities at any theta.
    Using the uniform bound keeps smoothness certificates valid along
    whole update segments, not just at the current iterate.
    """
    norm_sq = np.max(np.sum(batch.features**2, axis=1))
    bound = float(norm_sq / 4.0)
    return bound, bound


def empirical_hard_fraction(batch: PromptBatch) -> float:
    return float(np.mean(batch.hard_mask))


def batch_objective(theta, batch: PromptBatch, k: int) -> float:
    """Mass-uniform k-attempt objective over the batch (exact closed form)."""
    from .objectives import fk_array

    p = success_probs(theta, batch)
    n = len(batch)
    return ordered_dot(np.full(n, 1.0 / n), fk_array(p, k))


def export_batch(batch: PromptBatch, path) -> None:
    """Write one JSON record per prompt: {id, psi, label, correct_action}."""
    path = Path(path)
    with path.open("w") as fh:
        for i, pid in enumerate(batch.ids):
            rec = {
                "id": pid,
                "psi": [float(batch.features[i, 0]), float(batch.features[i, 1])],
                "label": str(batch.labels[i]),
                "correct_action": int(batch.correct_actions[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def import_batch(path) -> PromptBatch:
    """Read a batch written by export_batch."""
    path = Path(path)
    ids, feats, labels, actions = [], [], [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                ids.append(str(rec["id"]))
                feats.append([float(v) for v in rec["psi"]])
                labels.append(str(rec["label"]))
                actions.append(int(rec["correct_action"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DomainError(f"line {lineno}: bad batch record ({exc})") from exc
    if not ids:
        raise DomainError(f"{path}: empty batch file")
    return PromptBatch(
        ids=tuple(ids),
        features=np.asarray(feats, dtype=float),
        labels=np.asarray(labels),
        correct_actions=np.asarray(actions, dtype=int),
    )
