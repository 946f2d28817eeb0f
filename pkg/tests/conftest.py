import shutil

import pytest

from kernelgen.evalrt import ToolchainConfig

CC = shutil.which("gcc") or shutil.which("cc")


@pytest.fixture(scope="session")
def toolchain(tmp_path_factory):
    if CC is None:
        pytest.skip("no C compiler on host")
    return ToolchainConfig(cc=CC, work_dir=str(tmp_path_factory.mktemp("jobs")))
