"""Shared fixtures: the assembled corpus on disk and ready-made pipelines."""

import pytest

from jrom.pipeline import Pipeline

from .corpus import build_corpus, write_corpus


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(str(root))
    return str(root)


@pytest.fixture(scope="session")
def corpus():
    return build_corpus()


def make_pipeline(corpus_dir, **flags):
    pipe = Pipeline([corpus_dir], **flags)
    pipe.load_targets(sorted(build_corpus()), closure=True)
    ready_failures = pipe.ready_all()
    assert not ready_failures, ready_failures
    link_failures = pipe.link_all()
    assert not link_failures, link_failures
    return pipe


@pytest.fixture(scope="session")
def linked_pipeline(corpus_dir):
    """Whole corpus loaded, initialized and linked with default flags."""
    return make_pipeline(corpus_dir)


@pytest.fixture(scope="session")
def nointro_pipeline(corpus_dir):
    return make_pipeline(corpus_dir, introspection=False)
