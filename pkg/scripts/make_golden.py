#!/usr/bin/env python3
"""Regenerate the golden PPM used by the render byte-equality test.

Run from the repo root:  python scripts/make_golden.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from test_render import tiny_fixture_image  # noqa: E402

from dbatlas.render import write_ppm  # noqa: E402


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "tests" / "golden" / "tiny_plane.ppm"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(tiny_fixture_image(), out)
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
