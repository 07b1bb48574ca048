import sys
from pathlib import Path

import pytest
from hypothesis import settings

from hsge.dialogue import WorldSpec, generate_corpus, generate_world
from hsge.kg import KnowledgeGraph

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("hsge", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("hsge")


@pytest.fixture(scope="session")
def fig_kg() -> KnowledgeGraph:
    """The president example extended with a bit of neighbourhood."""
    triples = [
        ("Joe Biden", "IsPresidentOf", "United States"),
        ("Barack Obama", "IsPresidentOf", "United States"),
        ("Emmanuel Macron", "IsPresidentOf", "France"),
        ("Joe Biden", "BornIn", "Scranton"),
        ("Scranton", "LocatedIn", "United States"),
    ]
    types = [
        ("Joe Biden", "Person"), ("Barack Obama", "Person"), ("Emmanuel Macron", "Person"),
        ("United States", "Country"), ("France", "Country"), ("Scranton", "City"),
    ]
    return KnowledgeGraph.from_labels(triples, types)


@pytest.fixture(scope="session")
def small_world() -> KnowledgeGraph:
    return generate_world(WorldSpec(seed=3, n_entities=40, n_predicates=4, n_types=4))


@pytest.fixture(scope="session")
def small_corpus(small_world):
    return generate_corpus(small_world, 12, seed=5)


# -- acceptance summary -------------------------------------------------------------

_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[report.nodeid] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    named = {nodeid.split("::")[1]: v for nodeid, v in _ACCEPTANCE.items()}
    for name in sorted(named, key=lambda n: int(n.split("_")[2])):
        outcome, detail = named[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  {detail}".rstrip())
