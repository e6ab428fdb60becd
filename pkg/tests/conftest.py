import numpy as np
import pytest
from loguru import logger

from wsgm_lab.gauss_process import SpectrumSpec, build_spectrum
from wsgm_lab.wavelet import make_filters


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(params=["haar", "daubechies-4"])
def filters(request):
    return make_filters(request.param)


@pytest.fixture
def haar():
    return make_filters("haar")


@pytest.fixture
def power_law_1d():
    """η = 1、ξ = 2π/L 的 1D 多尺度谱，L = 16。"""
    return build_spectrum(SpectrumSpec(eta=1.0, xi=2 * np.pi / 16, side=16, dims=1, normalization="trace"))


@pytest.fixture
def power_law_2d():
    return build_spectrum(SpectrumSpec(eta=1.0, xi=2 * np.pi / 8, side=8, dims=2, normalization="trace"))


@pytest.fixture
def log_messages():
    """收集 loguru 输出，便于断言警告。"""
    messages = []
    handler_id = logger.add(lambda message: messages.append(message.record), level="DEBUG")
    yield messages
    logger.remove(handler_id)
