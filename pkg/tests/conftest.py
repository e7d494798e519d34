import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import make_bump_manifest  # noqa: E402


@pytest.fixture(scope="session")
def bump_dataset(tmp_path_factory):
    """A 64-tile 32px bump manifest shared by training-adjacent tests."""
    root = tmp_path_factory.mktemp("bumps")
    manifest = make_bump_manifest(root, n_tiles=64, size=32, seed=42, val_count=8)
    return root, manifest
