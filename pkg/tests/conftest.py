"""Shared corpus fixtures.

Everything here is 32x32 to keep the suite fast; the pipeline code has
no size assumptions beyond divisibility by the patch size.
"""

import pytest

from sensmix.pipeline import augment_corpus, build_provider, gen_distorted
from sensmix.synth import make_reference_set


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """6 procedural refs, all 8 types x 5 levels: 240 singles."""
    root = tmp_path_factory.mktemp("corpus")
    refs = make_reference_set(6, seed=11, size=32)
    gen_distorted(root, refs, seed=11, jobs=2)
    return root


@pytest.fixture(scope="session")
def toy_augmented(toy_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("aug")
    provider = build_provider("gt", 8)
    augment_corpus(toy_corpus, out, 120, provider, seed=11, jobs=2)
    return out
