import numpy as np
import pytest
import torch

from shorefuse.config import ModelConfig
from shorefuse.data import Frame, FrameSequence


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """56x56 input, 7x7 feature grid: small enough for double-precision gradient checks."""
    return ModelConfig.tiny(input_size=(56, 56), feature_grid=(7, 7), feature_channels=8, attention_heads=2,
                            encoder_widths=(4, 4, 6), decoder_channels=4)


def make_sequence(n=8, shape=(32, 32), seed=0, seq_id="seq", split="train", water_from=None):
    g = np.random.default_rng(seed)
    h, w = shape
    frames = []
    for t in range(n):
        img = g.uniform(0, 1, (h, w, 3)).astype(np.float32)
        img = np.rint(img * 255) / 255
        mask = np.zeros(shape, np.uint8)
        mask[(water_from if water_from is not None else h // 2):] = 1
        frames.append(Frame(img.astype(np.float32), t, mask))
    return FrameSequence(seq_id, tuple(frames), split=split)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# One PASS/FAIL line per acceptance criterion, printed after the run.
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, [title, True, []])
    entry[1] = entry[1] and report.passed
    entry[2].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[number]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if details:
            line += "  [" + "; ".join(dict.fromkeys(details)) + "]"
        terminalreporter.write_line(line)
