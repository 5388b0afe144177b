import os

import numpy as np
import pytest

from spectomo.kernel import ImagingGeometry, build_kernel_table

ACCEPTANCE_LINES: list = []
WORKERS = min(8, os.cpu_count() or 1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_geometry():
    return ImagingGeometry(Nx=8, Nz=16, Nk=16, Lx=17.6, Lz=11.2, kmin=0.7, kmax=2.1,
                           NA=0.5, focal_planes=(3.0, 6.0, 9.0))


@pytest.fixture(scope="session")
def small_table(small_geometry):
    return build_kernel_table(small_geometry)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def tiny_geometry():
    # (Nx, Nz, Nk, Nf) = (4, 8, 8, 2)
    return ImagingGeometry(Nx=4, Nz=8, Nk=8, Lx=8.0, Lz=5.6, kmin=0.7, kmax=2.1, NA=0.5,
                           focal_planes=(2.0, 4.0))


@pytest.fixture(scope="session")
def tiny_table(tiny_geometry):
    return build_kernel_table(tiny_geometry)
