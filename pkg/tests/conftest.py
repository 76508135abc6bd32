import json

import pytest

from proofgen import load_corpus

# One small, fully hand-written corpus shared across suites.  The contents
# are pinned: prompt golden files and coverage assertions depend on these
# exact bytes.
CORPUS_DOC = {
    "references": [
        {
            "id": 1,
            "kind": "theorem",
            "title": "Sum of Two Even Integers is Even",
            "contents": [
                "Let $x$ and $y$ be [[Definition:Even Integer|even integers]].",
                "Then $x + y$ is an [[Definition:Even Integer|even integer]].",
            ],
        },
        {
            "id": 2,
            "kind": "definition",
            "title": "Definition:Even Integer",
            "contents": [
                "An [[Definition:Integer|integer]] $n$ is '''even''' {{iff}} $n = 2 k$ for some [[Definition:Integer|integer]] $k$.",
            ],
        },
        {
            "id": 3,
            "kind": "definition",
            "title": "Definition:Integer",
            "contents": [
                "The '''integers''' are the set $\\Z = \\{\\ldots, -1, 0, 1, \\ldots\\}$.",
            ],
        },
        {
            "id": 4,
            "kind": "theorem",
            "title": "Product of Two Odd Integers is Odd",
            "contents": [
                "Let $x$ and $y$ be [[Definition:Odd Integer|odd integers]].",
                "Then $x y$ is an [[Definition:Odd Integer|odd integer]].",
            ],
        },
        {
            "id": 5,
            "kind": "definition",
            "title": "Definition:Odd Integer",
            "contents": [
                "An [[Definition:Integer|integer]] $n$ is '''odd''' if it is not [[Definition:Even Integer|even]].",
            ],
        },
        {
            "id": 6,
            "kind": "other",
            "title": "Axiom:Commutative Law of Addition",
            "contents": ["$x + y = y + x$ for all $x, y$."],
        },
    ],
    "examples": [
        {
            "theorem_id": 1,
            "proof": (
                "Let $x$ and $y$ be [[Definition:Even Integer|even integers]].\n"
                "\n"
                "Then $x = 2 a$ and $y = 2 b$ for [[Definition:Integer|integers]] $a, b$.\n"
                "\n"
                "So $x + y = 2 (a + b)$, which is [[Definition:Even Integer|even]].\n"
                "\n"
                "{{qed}}"
            ),
        },
        {
            "theorem_id": 4,
            "proof": (
                "Let $x = 2 a + 1$ and $y = 2 b + 1$ be [[Definition:Odd Integer|odd]].\n"
                "\n"
                "By [[Axiom:Commutative Law of Addition]], $x y = 2 (2 a b + a + b) + 1$.\n"
                "\n"
                "Hence $x y$ is not [[Definition:Even Integer|even]], so it is [[Definition:Odd Integer|odd]].\n"
                "\n"
                "{{qed}}"
            ),
        },
    ],
    "splits": {"train": [1], "valid": [], "test": [4]},
}


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.json"
    path.write_text(json.dumps(CORPUS_DOC))
    return path


@pytest.fixture(scope="session")
def corpus(corpus_path):
    return load_corpus(corpus_path)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one pass/fail line per acceptance criterion after the run."""
    outcomes: dict[str, str] = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            # A test that failed in setup/teardown still counts as failed.
            if outcomes.get(name) != "FAIL":
                outcomes[name] = "FAIL" if status in ("failed", "error") else "PASS"
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(outcomes):
        label = name.removeprefix("test_")
        terminalreporter.write_line(f"{outcomes[name]} {label}")
