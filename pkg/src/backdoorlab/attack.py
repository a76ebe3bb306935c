"""Backdoor patch construction, poison-set assembly, and attack scoring.

Two patch constructions are provided: an exactly label-consistent
direction drawn from the orthogonal complement of the data subspace,
and a uniform random unit direction that lands near the complement once
the ambient dimension is large enough.  Poison sets pair a patch with
freshly drawn points of the opposite class, relabeled to the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng, synth
from .core import LabeledDataset, LinearHypothesis, PatchFunction, binary_loss
from .errors import (ConfigError, InconsistentPatchError,
                     NoOrthogonalComplementError)


@dataclass(frozen=True)
class AttackReport:
    """Outcome of one attack evaluation on fresh samples."""

    clean_error: float
    attack_success_rate: float
    target_label: int
    poison_count: int

    def __post_init__(self):
        for name in ("clean_error", "attack_success_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_json(self) -> dict:
        return {"cleanError": self.clean_error,
                "attackSuccessRate": self.attack_success_rate,
                "targetLabel": self.target_label,
                "poisonCount": self.poison_count}


def orthogonal_patch(inst: synth.ThreatInstance, t: int, magnitude: float,
                     seed: int) -> PatchFunction:
    """Watermark of the given l2 norm drawn from the complement of span(A).

    Fully consistent by construction: the watermark is orthogonal to the
    whole data subspace, so it never moves the ground-truth score.  The
    direction depends only on span(A) and the seed.
    """
    if magnitude <= 0:
        raise ConfigError("magnitude must be positive")
    if inst.s >= inst.d:
        raise NoOrthogonalComplementError("subspace already fills the space")
    g = rng.generator(seed, 71)
    for _ in range(16):
        v = g.standard_normal(inst.d)
        v -= inst.A @ (inst.A.T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return PatchFunction(v * (magnitude / norm), t)
    raise NoOrthogonalComplementError("could not find a nonzero complement direction")


def required_watermark_dim(s: int, gamma: float, delta: float, C0: float) -> int:
    """Ambient dimension at which a random unit direction is in-margin
    with probability at least 1 - delta: ceil(C0^2 * s * log(4s/delta) / gamma^2)."""
    return math.ceil(C0 * C0 * s * math.log(4.0 * s / delta) / (gamma * gamma))


def random_watermark(inst: synth.ThreatInstance, delta: float, C0: float,
                     seed: int, t: int = 1) -> tuple[PatchFunction, int]:
    """Uniform unit-sphere watermark plus the dimension bound it needs.

    The caller compares ``inst.d`` against the returned bound; when
    d >= bound, the component of the watermark inside the data subspace
    has norm at most gamma with probability >= 1 - delta over seeds.
    """
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if not 0 < inst.gamma < 1:
        raise ConfigError("watermark bound needs gamma in (0, 1)")
    g = rng.generator(seed, 72)
    v = g.standard_normal(inst.d)
    v /= np.linalg.norm(v)
    return PatchFunction(v, t), required_watermark_dim(inst.s, inst.gamma, delta, C0)


def build_poison_set(inst: synth.ThreatInstance, patches: list[PatchFunction],
                     count_per_patch: int, seed: int,
                     consistency_tol: float = 1e-6) -> LabeledDataset:
    """Poison examples: opposite-class draws, watermarked, relabeled.

    Each patch must keep the ground-truth score unchanged up to
    ``consistency_tol`` (pass a looser tolerance for in-margin random
    watermarks, which are consistent on the data but not exactly
    orthogonal).  Sources are sampled conditioned on the class opposite
    each patch's target, so every poison example is mislabeled.
    """
    if count_per_patch < 1:
        raise ConfigError("count_per_patch must be at least 1")
    blocks_X, blocks_y = [], []
    for k, patch in enumerate(patches):
        drift = abs(float(inst.w_star @ patch.eta))
        if drift > consistency_tol:
            raise InconsistentPatchError(
                f"patch {k} moves the ground-truth score by {drift:.3g} "
                f"(tolerance {consistency_tol:.3g})")
        g = rng.generator(seed, 73, k)
        sources = synth.sample_points(inst, -patch.target_label, count_per_patch, g)
        blocks_X.append(patch.apply_many(sources))
        blocks_y.append(np.full(count_per_patch, patch.target_label))
    X = np.vstack(blocks_X)
    y = np.concatenate(blocks_y)
    return LabeledDataset(X, y, np.ones(len(y), dtype=bool))


def suggested_poison_count(eps_adv: float, delta: float, vc_dim: int,
                           constant: float = 1.0) -> int:
    """PAC-style poison budget: ceil(constant * (vc + ln(1/delta)) / eps)."""
    if not 0 < eps_adv < 1 or not 0 < delta < 1:
        raise ConfigError("eps_adv and delta must lie in (0, 1)")
    return math.ceil(constant * (vc_dim + math.log(1.0 / delta)) / eps_adv)


def evaluate_attack(h: LinearHypothesis, inst: synth.ThreatInstance,
                    patch: PatchFunction, t: int, n_test: int,
                    seed: int, poison_count: int = 0) -> AttackReport:
    """Score a hypothesis on fresh data.

    ``clean_error`` is the 0-1 loss on ``n_test`` fresh clean samples;
    ``attack_success_rate`` is the fraction of ``n_test`` fresh samples
    of true label ``-t`` that the hypothesis sends to ``t`` after
    watermarking.
    """
    if n_test < 1:
        raise ConfigError("n_test must be at least 1")
    clean = synth.sample_labeled(inst, n_test, rng.generator(seed, 74))
    clean_error = binary_loss(h, clean)
    victims = synth.sample_points(inst, -t, n_test, rng.generator(seed, 75))
    hits = h.predict_many(patch.apply_many(victims)) == t
    return AttackReport(clean_error=clean_error,
                        attack_success_rate=float(np.mean(hits)),
                        target_label=int(t), poison_count=int(poison_count))
