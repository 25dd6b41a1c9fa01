import pytest

from sonotrainer import kernels


@pytest.fixture(scope="session", autouse=True)
def _compile_kernels_once():
    # pay the jit compile cost up front so timed tests measure steady state
    kernels.warm_up()
