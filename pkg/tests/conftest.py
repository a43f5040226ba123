import pytest

from fabsp.fabric import Fabric, FabricConfig, launch_spmd


def spmd(npes, fn, *args, inbox=64, timeout=60.0):
    """Run ``fn(ctx, *args)`` on ``npes`` PEs and return the per-rank results."""
    return launch_spmd(FabricConfig(npes=npes, inbox_capacity=inbox, deadlock_timeout=timeout), fn, *args)


@pytest.fixture
def run_spmd():
    return spmd


def offline_contexts(npes, inbox=64):
    """PE contexts of a fabric driven by hand from the test thread (no PE threads)."""
    return Fabric(FabricConfig(npes=npes, inbox_capacity=inbox)).contexts
