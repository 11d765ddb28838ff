"""Regenerate the bundled case files under src/gridmesh/cases/."""
from pathlib import Path

from gridmesh.casegen import write_bundled

if __name__ == "__main__":
    target = Path(__file__).resolve().parents[1] / "src" / "gridmesh" / "cases"
    for p in write_bundled(target):
        print("wrote", p)
