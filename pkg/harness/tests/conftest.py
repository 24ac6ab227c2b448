import sys
from pathlib import Path

# make the harness module and the repo-level test support importable
_HARNESS_DIR = Path(__file__).resolve().parents[1]
_REPO_TESTS = Path(__file__).resolve().parents[2] / "tests"
for entry in (_HARNESS_DIR, _REPO_TESTS):
    if str(entry) not in sys.path:
        sys.path.insert(0, str(entry))
