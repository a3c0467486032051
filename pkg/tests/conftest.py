from pathlib import Path

import pytest

from nopvis import DetectorConfig, default_table, init_model, parse_class, train
from nopvis.corpus import generate_labeled_apps
from nopvis.experiment import sequences_for, split_corpus
from nopvis.smali import SmaliApp

FIXTURES = Path(__file__).parent / "fixtures"

TOY_MAX_LEN = 256
TOY_SEED = 7


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def demo_original():
    return parse_class(fixture_text("demo_original.smali"))


@pytest.fixture(scope="session")
def demo_original_app(demo_original):
    return SmaliApp("demo", (demo_original,))


@pytest.fixture(scope="session")
def demo_nops():
    return parse_class(fixture_text("demo_nops.smali"))


@pytest.fixture(scope="session")
def demo_loop():
    return parse_class(fixture_text("demo_loop.smali"))


@pytest.fixture(scope="session")
def demo_condition():
    return parse_class(fixture_text("demo_condition.smali"))


@pytest.fixture(scope="session")
def demo_sio():
    return parse_class(fixture_text("demo_sio.smali"))


@pytest.fixture(scope="session")
def demo_imi():
    return parse_class(fixture_text("demo_imi.smali"))


@pytest.fixture(scope="session")
def demo_class():
    return parse_class(fixture_text("demo_class.smali"))


@pytest.fixture(scope="session")
def table():
    return default_table()


@pytest.fixture(scope="session")
def toy_corpus():
    """Small labeled corpus shared by detector/attack tests."""
    return generate_labeled_apps(seed=TOY_SEED, apps_per_class=20)


@pytest.fixture(scope="session")
def toy_split(toy_corpus):
    return split_corpus(toy_corpus, test_fraction=0.2, seed=TOY_SEED)


@pytest.fixture(scope="session")
def toy_detector(toy_split, table):
    """Detector trained to separate the planted-motif corpus."""
    train_set, _ = toy_split
    config = DetectorConfig(
        vocabulary_size=table.vocabulary_size, max_len=TOY_MAX_LEN, seed=TOY_SEED
    )
    seqs, labels = sequences_for(train_set, table, TOY_MAX_LEN)
    return train(
        init_model(config), list(zip(seqs, labels)),
        epochs=60, learning_rate=0.1, batch_size=32,
    )
