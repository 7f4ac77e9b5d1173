"""Failable region registry - marking, unmarking, checkpoint and restore"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from faults.fault_log import FaultLog
from tools.sparse_kernels import DenseVector

logger = logging.getLogger(__name__)


class RegistryError(LookupError):
    """Unknown region id or unusable target array (a caller bug)."""


class CheckpointError(RuntimeError):
    """Restore requested for a region that was never checkpointed."""


@dataclass
class FailableRegion:
    region_id: int
    name: str
    target: DenseVector
    failable: bool = False
    checkpoint: DenseVector | None = None

    @property
    def bytes(self) -> int:
        return int(self.target.nbytes)

    @property
    def size(self) -> int:
        return int(self.target.size)


@dataclass
class FaultRegistry:
    """Tracks the floating-point storage the fault injector may touch.

    Regions start reliable; faults land only in regions currently marked
    failable. The registry owns the FaultLog so that conditional restore can
    consult the detected-fault counts of each region.
    """

    log: FaultLog = field(default_factory=FaultLog)
    _regions: dict[int, FailableRegion] = field(default_factory=dict)
    _next_id: int = 0

    def register_region(self, target: DenseVector, *, name: str = "") -> int:
        if not isinstance(target, np.ndarray) or target.dtype != np.float64 or target.ndim != 1:
            raise RegistryError("failable targets must be 1-D float64 arrays")
        if not target.flags.c_contiguous:
            raise RegistryError("failable targets must be contiguous")
        region_id = self._next_id
        self._next_id += 1
        self._regions[region_id] = FailableRegion(region_id, name or f"region{region_id}", target)
        return region_id

    def unregister_region(self, region_id: int) -> None:
        self.region(region_id)
        del self._regions[region_id]
        self.log.acknowledge(region_id)

    def region(self, region_id: int) -> FailableRegion:
        try:
            return self._regions[region_id]
        except KeyError:
            raise RegistryError(f"unknown region id {region_id}") from None

    @property
    def regions(self) -> list[FailableRegion]:
        return list(self._regions.values())

    def mark_failable(self, region_id: int) -> None:
        self.region(region_id).failable = True

    def unmark_failable(self, region_id: int) -> None:
        self.region(region_id).failable = False

    def is_failable(self, region_id: int) -> bool:
        return self.region(region_id).failable

    def marked_regions(self) -> list[FailableRegion]:
        return [r for r in self._regions.values() if r.failable]

    def failable_bytes(self) -> int:
        return sum(r.bytes for r in self._regions.values() if r.failable)

    def unmark_all(self) -> None:
        for region in self._regions.values():
            region.failable = False

    def checkpoint(self, region_id: int) -> None:
        region = self.region(region_id)
        region.checkpoint = region.target.copy()
        self.log.acknowledge(region_id)

    def restore(self, region_id: int) -> None:
        region = self.region(region_id)
        if region.checkpoint is None:
            raise CheckpointError(f"region {region.name} has no checkpoint")
        # copy raw bits so NaN payloads in the checkpoint survive unchanged
        np.copyto(region.target.view(np.uint64), region.checkpoint.view(np.uint64))
        self.log.acknowledge(region_id)

    def restore_if_detected(self, region_id: int) -> bool:
        """Restore only when the log holds detected faults for the region."""
        region = self.region(region_id)
        if region.checkpoint is None:
            raise CheckpointError(f"region {region.name} has no checkpoint")
        if self.log.detected_in(region_id) == 0:
            return False
        logger.debug("refreshing %s after %d detected faults", region.name, self.log.detected_in(region_id))
        self.restore(region_id)
        return True

    def matches_checkpoint(self, region_id: int) -> bool:
        """Bitwise comparison of the target against its checkpoint."""
        region = self.region(region_id)
        if region.checkpoint is None:
            return False
        return bool(np.array_equal(region.target.view(np.uint64), region.checkpoint.view(np.uint64)))
