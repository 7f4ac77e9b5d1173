"""Fault injection - deterministic Boolean patterns and Poisson bit flips on a logical clock"""

from __future__ import annotations

import logging
from enum import Enum
from typing import Annotated

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import config
from faults.fault_log import ADD_ONE, OUTPUT_REGION, FaultEvent
from faults.registry import FaultRegistry
from tools.sparse_kernels import DenseVector

logger = logging.getLogger(__name__)

MEGABYTE = 2**20
SECONDS_PER_HOUR = 3600.0


class FaultPolicyError(ValueError):
    """Operation not valid for the configured policy."""


class FaultMode(str, Enum):
    NONE = "none"
    DETERMINISTIC = "pattern"
    POISSON = "poisson"


class FaultPolicy(BaseModel):
    """When and how faults are injected."""

    model_config = ConfigDict(frozen=True)

    mode: FaultMode = FaultMode.NONE
    pattern: Annotated[
        tuple[bool, ...], Field(description="Repeating Boolean sequence, one entry per SpMV.")
    ] = ()
    rate: Annotated[float, Field(ge=0, description="Poisson rate in faults per MB per hour.")] = 0.0
    seed: Annotated[int, Field(description="Seed for injection and detection draws.")] = config.DEFAULT_SEED
    time_step: Annotated[
        float, Field(gt=0, description="Simulated seconds per injection point.")
    ] = config.DEFAULT_TIME_STEP
    p_detect: Annotated[
        float, Field(ge=0, le=1, description="Probability an injected fault is detected.")
    ] = config.DEFAULT_P_DETECT

    @model_validator(mode="after")
    def _pattern_required(self) -> "FaultPolicy":
        if self.mode is FaultMode.DETERMINISTIC and not self.pattern:
            raise ValueError("deterministic fault mode needs a non-empty pattern")
        return self

    @classmethod
    def from_flag(cls, text: str, **overrides) -> "FaultPolicy":
        """Parse ``none``, ``pattern:0,0,1`` or ``poisson:RATE:SEED``."""
        kind, _, rest = text.strip().partition(":")
        if kind == "none":
            return cls(**overrides)
        if kind == "pattern":
            entries = [b.strip() for b in rest.split(",") if b.strip()]
            if any(b not in ("0", "1") for b in entries):
                raise FaultPolicyError(f"pattern entries must be 0 or 1, got '{rest}'")
            bits = tuple(b == "1" for b in entries)
            return cls(mode=FaultMode.DETERMINISTIC, pattern=bits, **overrides)
        if kind == "poisson":
            rate, _, seed = rest.partition(":")
            if seed:
                overrides["seed"] = int(seed)
            return cls(mode=FaultMode.POISSON, rate=float(rate), **overrides)
        raise ValueError(f"unknown fault policy '{text}'")

    def label(self) -> str:
        if self.mode is FaultMode.DETERMINISTIC:
            return "pattern:" + ",".join(str(int(b)) for b in self.pattern)
        if self.mode is FaultMode.POISSON:
            return f"poisson:{self.rate:g}:{self.seed}"
        return "none"


def flip_bit(values: DenseVector, index: int, bit: int) -> None:
    """Flip one bit (0 = least significant, 63 = sign) of a float64 element in place."""
    values.view(np.uint64)[index] ^= np.uint64(1) << np.uint64(bit)


class DetectionModel:
    """Best-effort detection: each fault is seen with probability ``p_detect``."""

    def __init__(self, p_detect: float, rng: np.random.Generator) -> None:
        self.p_detect = p_detect
        self._rng = rng

    def classify(self, count: int) -> np.ndarray:
        if count == 0:
            return np.zeros(0, dtype=bool)
        return self._rng.random(count) < self.p_detect


class FaultInjector:
    """Injects faults into the marked regions of a registry.

    Injection happens only at explicit injection points (after each unreliable
    SpMV or preconditioner apply), each of which advances the logical clock by
    ``policy.time_step`` seconds.
    """

    def __init__(self, policy: FaultPolicy, registry: FaultRegistry) -> None:
        self.policy = policy
        self.registry = registry
        inject_seed, detect_seed = np.random.SeedSequence(policy.seed).spawn(2)
        self._rng = np.random.default_rng(inject_seed)
        self.detection = DetectionModel(policy.p_detect, np.random.default_rng(detect_seed))
        self.clock = 0.0
        self._cursor = 0

    @property
    def log(self):
        return self.registry.log

    def advance_clock(self, elapsed: float) -> list[FaultEvent]:
        """Advance simulated time and inject the Poisson-distributed faults it implies.

        Args:
            elapsed: Simulated seconds since the previous injection point.

        Returns:
            The injected events (also appended to the log).
        """
        self.clock += elapsed
        if self.policy.mode is not FaultMode.POISSON or self.policy.rate == 0:
            return []
        regions = self.registry.marked_regions()
        if not regions:
            return []
        failable_mb = sum(r.bytes for r in regions) / MEGABYTE
        count = int(self._rng.poisson(self.policy.rate * failable_mb * elapsed / SECONDS_PER_HOUR))
        if count == 0:
            return []

        # uniform over all marked elements (all regions hold float64)
        sizes = np.array([r.size for r in regions], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        flat = self._rng.integers(0, offsets[-1], size=count)
        bits = self._rng.integers(0, 64, size=count)
        detected = self.detection.classify(count)
        owner = np.searchsorted(offsets, flat, side="right") - 1
        elements = flat - offsets[owner]

        for slot, region in enumerate(regions):
            hit = owner == slot
            if hit.any():
                masks = np.left_shift(np.uint64(1), bits[hit].astype(np.uint64))
                np.bitwise_xor.at(region.target.view(np.uint64), elements[hit], masks)

        region_ids = [regions[o].region_id for o in owner.tolist()]
        events = [
            FaultEvent(rid, el, bit, self.clock, det)
            for rid, el, bit, det in zip(region_ids, elements.tolist(), bits.tolist(), detected.tolist())
        ]
        self.log.record(events)
        return events

    def consume_pattern(self) -> bool:
        """Read the current pattern entry and advance the cyclic cursor."""
        if self.policy.mode is not FaultMode.DETERMINISTIC or not self.policy.pattern:
            raise FaultPolicyError("consume_pattern needs a deterministic policy with a pattern")
        value = self.policy.pattern[self._cursor % len(self.policy.pattern)]
        self._cursor += 1
        return value

    def apply_deterministic_fault(self, v: DenseVector) -> bool:
        """Add 1 to the first entry of an operation result when the pattern says so."""
        if not self.consume_pattern():
            return False
        v[0] += 1.0
        detected = bool(self.detection.classify(1)[0])
        self.log.record([FaultEvent(OUTPUT_REGION, 0, ADD_ONE, self.clock, detected)])
        return True

    def injection_point(self, v: DenseVector, *, operation: str) -> None:
        """Hook called after an unreliable ``spmv`` or ``precond`` result is produced."""
        if self.policy.mode is FaultMode.DETERMINISTIC and operation == "spmv":
            self.apply_deterministic_fault(v)
        self.advance_clock(self.policy.time_step)
