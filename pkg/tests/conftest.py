import numpy as np
import pytest

from latentreuse.datamodel import Gaussian, NoisyLowDimModel
from latentreuse.geometry import Frame, axis_frame
from latentreuse.schedule import DiffusionSchedule


def line_frame(theta, D=2):
    """span{cos(theta) e1 + sin(theta) e2} in R^D."""
    v = np.zeros(D)
    v[0], v[1] = np.cos(theta), np.sin(theta)
    return Frame(v[:, None])


def std1(sigma=0.0):
    """D=2, A=e1, z ~ N(0, 1)."""
    return NoisyLowDimModel(axis_frame(2, [0]), Gaussian.standard(1), sigma)


@pytest.fixture
def sched():
    return DiffusionSchedule()


@pytest.fixture
def small_sched():
    return DiffusionSchedule(t0=0.05, T=1.0, n_nodes=16)
