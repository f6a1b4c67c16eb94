import json

import numpy as np
import pytest

from forge.image import save_image, save_mask


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


def make_triple(directory, name, seed, size=(24, 24)):
    """Write a random 8-bit (source, mask, target) triple; returns relative file names."""
    rng = np.random.default_rng(seed)
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    source = np.stack([0.3 + 0.5 * xx, 0.6 - 0.3 * yy, 0.4 + 0.2 * np.sin(9 * xx + seed)], axis=2)
    target = np.clip(rng.random((1, 1, 3)) * 0.6 + 0.2 + 0.1 * yy[:, :, None], 0, 1)
    mask = np.zeros((h, w), dtype=bool)
    top, left = rng.integers(2, h // 3, 2)
    mask[top:top + h // 2, left:left + w // 2] = True
    files = {k: f"{name}_{k}.png" for k in ("source", "mask", "target")}
    save_image(source, directory / files["source"])
    save_mask(mask, directory / files["mask"])
    save_image(target, directory / files["target"])
    return files


@pytest.fixture
def triple(tmp_path):
    return make_triple(tmp_path, "a", 0)


# -- acceptance summary: one line per criterion --------------------------------

_acceptance = []


def pytest_runtest_logreport(report):
    if "acceptance" not in report.keywords:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        _acceptance.append((report.nodeid.split("::")[-1], report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _acceptance:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
    passed = sum(ok for _, ok, _ in _acceptance)
    terminalreporter.write_line(f"{passed}/{len(_acceptance)} criteria met")
