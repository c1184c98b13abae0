import pytest

from qcd.models import Gaussian, PhaseModel, PiecewiseConstant


@pytest.fixture(scope="session")
def fast_gauss2() -> PhaseModel:
    """Two-phase Gaussian model with strong drifts (I1=4.5, I2=0.5)."""
    return PhaseModel((Gaussian(0, 1), Gaussian(3, 1), Gaussian(1, 1)))


@pytest.fixture(scope="session")
def slow_gauss2() -> PhaseModel:
    """Two-phase Gaussian model with weak, symmetric drifts (I1=I2=0.045)."""
    return PhaseModel((Gaussian(0, 1), Gaussian(0.3, 1), Gaussian(-0.3, 1)))


@pytest.fixture(scope="session")
def gauss1() -> PhaseModel:
    return PhaseModel((Gaussian(0, 1), Gaussian(1, 1)))


@pytest.fixture(scope="session")
def step2() -> PhaseModel:
    """Two-phase step model whose envelope ratio is positive everywhere,
    so the dynamic CuSum never regenerates on it."""
    return PhaseModel(
        (
            PiecewiseConstant((0, 2), (0.5,)),
            PiecewiseConstant((0, 1, 2), (0.8, 0.2)),
            PiecewiseConstant((0, 1, 2), (0.2, 0.8)),
        )
    )
