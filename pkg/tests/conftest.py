import os
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def data_dir() -> Path:
    """Directory holding the pinned dataset extracts (see README)."""
    directory = Path(os.environ.get("FAIRAUDIT_DATA", REPO_ROOT / "data"))
    if not directory.is_dir():
        pytest.skip(f"pinned dataset extracts not found at {directory}")
    return directory
