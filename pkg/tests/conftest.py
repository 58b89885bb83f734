import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from odmforge.cli import load_run_config, run_pipeline  # noqa: E402
from odmforge.synth import default_scenario, generate_scenario  # noqa: E402

_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one of the numbered acceptance criteria")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPTANCE[number] = (title, "PASS" if rep.passed else "FAIL", rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, verdict, secs = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title} ({secs:.1f} s)")


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Default scenario generated and pushed through the full pipeline once."""
    root = tmp_path_factory.mktemp("default_run")
    t0 = time.perf_counter()
    scen = generate_scenario(default_scenario(), root / "scenario")
    cfg = load_run_config(scen.config, output_dir=root / "out")
    result = run_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    return scen, cfg, result, elapsed
