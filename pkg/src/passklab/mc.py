"""Monte Carlo estimation of success probabilities and their gradients.

Estimates are score-function based: the gradient of a prompt's success
probability is the expectation of reward times score, so averaging
reward * score over sampled actions is unbiased.  Per-prompt sample
streams are keyed by (seed, prompt id), so adding prompts to a run never
perturbs existing streams.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .bandit import PromptBatch, _check_theta
from .errors import DomainError
from .objectives import SuccessProfile, wk_array


@dataclass(frozen=True)
class PromptSamples:
    prompt_id: str
    actions: np.ndarray  # (n,) of {0, 1}
    rewards: np.ndarray  # (n,) of {0, 1}
    scores: np.ndarray  # (n, d) score vectors

    def __post_init__(self):
        actions = np.asarray(self.actions, dtype=int)
        rewards = np.asarray(self.rewards, dtype=float)
        scores = np.asarray(self.scores, dtype=float)
        n = actions.shape[0]
        if n < 1:
            raise DomainError("each prompt needs at least one sample")
        if rewards.shape != (n,) or scores.shape[:1] != (n,):
            raise DomainError("actions, rewards, scores must share sample count")
        if not np.all(np.isin(rewards, (0.0, 1.0))):
            raise DomainError("rewards must be exactly 0 or 1")
        object.__setattr__(self, "prompt_id", str(self.prompt_id))
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return self.actions.shape[0]


@dataclass(frozen=True)
class SampleSet:
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise DomainError("sample set must contain at least one prompt")
        d = blocks[0].scores.shape[1]
        for b in blocks:
            if b.scores.shape[1] != d:
                raise DomainError(
                    f"prompt {b.prompt_id}: score dimension {b.scores.shape[1]} "
                    f"differs from {d}"
                )
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "_by_id", {b.prompt_id: b for b in blocks})

    @property
    def dim(self) -> int:
        return self.blocks[0].scores.shape[1]

    @property
    def ids(self) -> tuple:
        return tuple(b.prompt_id for b in self.blocks)

    def __getitem__(self, prompt_id: str) -> PromptSamples:
        try:
            return self._by_id[str(prompt_id)]
        except KeyError:
            raise DomainError(f"unknown prompt id {prompt_id!r}") from None


def _stream_key(prompt_id: str) -> int:
    """Stable 64-bit key for a prompt id, independent of batch position."""
    digest = hashlib.sha256(str(prompt_id).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def prompt_rng(seed: int, prompt_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _stream_key(prompt_id)]))


def sample_actions(theta, batch: PromptBatch, n: int, seed: int) -> SampleSet:
    """Draw n policy actions per prompt with rewards and score vectors.

    For the logistic policy the score of action 1 is (1 - sigma) * psi
    and of action 0 is -sigma * psi.
    """
    theta = _check_theta(theta)
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    blocks = []
    for i, pid in enumerate(batch.ids):
        psi = batch.features[i]
        sig = float(expit(theta @ psi))
        rng = prompt_rng(seed, pid)
        actions = (rng.random(n) < sig).astype(int)
        rewards = (actions == batch.correct_actions[i]).astype(float)
        coef = np.where(actions == 1, 1.0 - sig, -sig)
        scores = coef[:, None] * psi[None, :]
        blocks.append(
            PromptSamples(prompt_id=pid, actions=actions, rewards=rewards, scores=scores)
        )
    return SampleSet(blocks=tuple(blocks))


def mc_grad_pass1(samples: SampleSet, prompt_id: str) -> np.ndarray:
    """Unbiased per-prompt gradient estimate: mean of reward * score."""
    block = samples[prompt_id]
    return (block.rewards[:, None] * block.scores).mean(axis=0)


def empirical_profile(samples: SampleSet) -> SuccessProfile:
    """Plug-in success probabilities c/n per prompt, uniform prompt mass."""
    probs = np.array([b.rewards.mean() for b in samples.blocks])
    return SuccessProfile.uniform(probs, ids=samples.ids)


def mc_grad_passk(samples: SampleSet, profile: SuccessProfile, k: int) -> np.ndarray:
    """Plug-in estimate of the k-attempt population gradient.

    Mass-weighted sum over prompts of w_k(p_hat) times the per-prompt
    gradient estimate; the caller chooses whether profile carries
    empirical or exact probabilities.  With empirical probabilities the
    weight factor is biased upward at finite n (w_k is convex in p for
    k >= 3, so E[w_k(c/n)] >= w_k(p)); the bias vanishes as n grows and
    is measured in the test suite.
    """
    if tuple(profile.ids) != samples.ids:
        raise DomainError("profile ids must match the sample set ids in order")
    weights = wk_array(profile.probs, k)
    out = np.zeros(samples.dim)
    for i, block in enumerate(samples.blocks):
        out += profile.mass[i] * weights[i] * mc_grad_pass1(samples, block.prompt_id)
    return out


def export_samples(samples: SampleSet, path) -> None:
    """One JSON record per sampled action: {prompt_id, action, reward, score}."""
    path = Path(path)
    with path.open("w") as fh:
        for block in samples.blocks:
            for j in range(block.n):
                rec = {
                    "prompt_id": block.prompt_id,
                    "action": int(block.actions[j]),
                    "reward": int(block.rewards[j]),
                    "score": [float(v) for v in block.scores[j]],
                }
                fh.write(json.dumps(rec) + "\n")


def import_samples(path) -> SampleSet:
    """Read a sample set written by export_samples (order-preserving)."""
    path = Path(path)
    order: list[str] = []
    acc: dict[str, list] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pid = str(rec["prompt_id"])
                row = (int(rec["action"]), float(rec["reward"]), rec["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DomainError(f"line {lineno}: bad sample record ({exc})") from exc
            if pid not in acc:
                acc[pid] = []
                order.append(pid)
            acc[pid].append(row)
    if not order:
        raise DomainError(f"{path}: empty sample file")
    blocks = []
    for pid in order:
        rows = acc[pid]
        blocks.append(
            PromptSamples(
                prompt_id=pid,
                actions=np.array([r[0] for r in rows]),
                rewards=np.array([r[1] for r in rows]),
                scores=np.array([r[2] for r in rows], dtype=float),
            )
        )
    return SampleSet(blocks=tuple(blocks))
