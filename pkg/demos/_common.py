"""Shared setup for the demo scripts: one synthetic scenario in a scratch folder."""

import sys
import tempfile
from pathlib import Path

from odmforge.synth import default_scenario, generate_scenario


def banner(title: str) -> None:
    print()
    print(title)
    print("-" * len(title))


def scenario(workdir: str | None = None):
    """Generate the default three-provider scenario (or reuse ``argv[1]`` as the folder)."""
    root = Path(workdir or (sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="odmforge-demo-")))
    scen = generate_scenario(default_scenario(), root / "scenario")
    print(f"scenario folder: {scen.root}")
    return scen
