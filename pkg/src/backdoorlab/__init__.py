"""backdoorlab: build, detect, and filter backdoor data poisoning
attacks on linear learners, with a brute-force memorization-capacity
oracle and a poison-fraction training sweep on IDX image data."""

from .core import (LabeledDataset, LabeledExample, LinearHypothesis, NormKind,
                   Origin, PatchFunction, PerturbationSet, apply_patch,
                   binary_loss, robust_loss)
from .synth import ThreatInstance, sample_instance

__all__ = [
    "LabeledDataset", "LabeledExample", "LinearHypothesis", "NormKind",
    "Origin", "PatchFunction", "PerturbationSet", "ThreatInstance",
    "apply_patch", "binary_loss", "robust_loss", "sample_instance",
]

__version__ = "0.1.0"
