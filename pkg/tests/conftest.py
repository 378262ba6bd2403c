import gzip
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
PHANTOM_DIR = ROOT / "data" / "phantom"

DTYPES = [np.uint8, np.int16, np.int32, np.float32, np.float64]


def nifti_bytes(data, spacing=(1.0, 1.0, 1.0), endian="<", affine=None, slope=None, inter=None):
    """Serialize with nibabel, the reference writer for these tests."""
    nib = pytest.importorskip("nibabel")
    data = np.asarray(data)
    if affine is None:
        affine = np.diag([*spacing, 1.0])
    hdr = nib.Nifti1Header(endianness=endian)
    hdr.set_data_dtype(data.dtype)
    img = nib.Nifti1Image(data, affine, header=hdr)
    img.header.set_zooms(tuple(spacing) + (1.0,) * (data.ndim - 3))
    if slope is not None:
        img.header.set_slope_inter(slope, inter or 0.0)
    return img.to_bytes()


def write_nifti(path, data, gz=None, **kw):
    raw = nifti_bytes(data, **kw)
    path = Path(path)
    if gz if gz is not None else path.name.endswith(".gz"):
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance_results = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): exit criterion reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _acceptance_results.append((marker.args[0], rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome, duration in _acceptance_results:
        tag = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{tag}  {name}  ({duration:.2f}s)")
