import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hmogkit.corpus.io import save_corpus
from hmogkit.corpus.synth import make_corpus, make_profiles


@pytest.fixture(scope="session")
def mini_sessions():
    """3 users x 3 sessions x 120 s; enough rows for min_vectors=30."""
    profiles = make_profiles(3, "sitting", 42, sessions=3, session_seconds=120.0)
    return make_corpus(profiles, 42)


@pytest.fixture(scope="session")
def mini_corpus_dir(tmp_path_factory, mini_sessions):
    root = tmp_path_factory.mktemp("corpus")
    save_corpus(mini_sessions, str(root))
    return root
