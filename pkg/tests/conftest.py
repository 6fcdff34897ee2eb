from pathlib import Path

import pytest

from kcroute.index import build_index, load_corpus
from kcroute.vocab import StubProvider, build_vocabulary

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_corpus(FIXTURES / "records.jsonl", FIXTURES / "tags.jsonl")


@pytest.fixture(scope="session")
def fixture_index(fixture_corpus):
    vocab = build_vocabulary(fixture_corpus.knowledge_occurrences(), StubProvider(0))
    return build_index(fixture_corpus, vocab, alpha=0.5)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
