import numpy as np
import pytest
from numpy.testing import assert_array_equal

from faults.fault_log import FaultEvent
from faults.injector import FaultInjector, FaultMode, FaultPolicy, flip_bit
from faults.registry import CheckpointError, FaultRegistry, RegistryError


def test_regions_start_reliable():
    registry = FaultRegistry()
    region_id = registry.register_region(np.ones(4), name="values")
    assert not registry.is_failable(region_id)


def test_mark_then_unmark():
    registry = FaultRegistry()
    region_id = registry.register_region(np.ones(4))
    registry.mark_failable(region_id)
    assert registry.is_failable(region_id)
    assert registry.failable_bytes() == 32
    registry.unmark_failable(region_id)
    assert not registry.is_failable(region_id)
    assert registry.marked_regions() == []


def test_unmarked_regions_receive_no_faults():
    registry = FaultRegistry()
    values = np.ones(1000)
    registry.register_region(values)
    injector = FaultInjector(FaultPolicy(mode=FaultMode.POISSON, rate=1e9, time_step=3600.0), registry)
    assert injector.advance_clock(3600.0) == []
    assert_array_equal(values, np.ones(1000))


def test_checkpoint_corrupt_restore():
    registry = FaultRegistry()
    values = np.arange(10.0)
    region_id = registry.register_region(values)
    registry.checkpoint(region_id)
    values[5] = -99.0
    registry.restore(region_id)
    assert_array_equal(values, np.arange(10.0))


def test_conditional_restore_skips_without_detected_faults():
    registry = FaultRegistry()
    values = np.arange(4.0)
    region_id = registry.register_region(values)
    registry.checkpoint(region_id)
    assert registry.restore_if_detected(region_id) is False
    assert_array_equal(values, np.arange(4.0))


def test_conditional_restore_after_detected_fault():
    registry = FaultRegistry()
    values = np.arange(4.0)
    region_id = registry.register_region(values)
    registry.checkpoint(region_id)
    flip_bit(values, 2, 52)
    registry.log.record([FaultEvent(region_id, 2, 52, 0.0, True)])
    assert registry.restore_if_detected(region_id) is True
    assert registry.log.detected_in(region_id) == 0
    assert registry.matches_checkpoint(region_id)


def test_restore_after_random_bit_flips_is_bitwise(rng):
    registry = FaultRegistry()
    values = rng.standard_normal(64)
    values[0] = np.nan
    region_id = registry.register_region(values)
    registry.checkpoint(region_id)
    for index, bit in zip(rng.integers(0, 64, size=3), rng.integers(0, 64, size=3)):
        flip_bit(values, int(index), int(bit))
    registry.restore(region_id)
    assert registry.matches_checkpoint(region_id)


def test_restore_without_checkpoint():
    registry = FaultRegistry()
    region_id = registry.register_region(np.ones(2))
    with pytest.raises(CheckpointError):
        registry.restore(region_id)


def test_unknown_region():
    with pytest.raises(RegistryError):
        FaultRegistry().mark_failable(42)


@pytest.mark.parametrize("target", [np.ones(3, dtype=np.float32), np.ones((2, 2)), np.ones(6)[::2], [1.0, 2.0]])
def test_register_rejects_unusable_targets(target):
    with pytest.raises(RegistryError):
        FaultRegistry().register_region(target)


def test_unregister_forgets_the_region():
    registry = FaultRegistry()
    region_id = registry.register_region(np.ones(2))
    registry.unregister_region(region_id)
    assert registry.regions == []
    with pytest.raises(RegistryError):
        registry.region(region_id)
