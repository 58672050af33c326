import json
from pathlib import Path

import numpy as np
import pytest

from dialpath.data import figure_dialogue
from dialpath.dialogue import Dialogue

FIXTURES = Path(__file__).parent / "fixtures"

# semantic clusters of the generated vector file
CLUSTERS = {
    "animal": "cat dog horse puppy kitten cow".split(),
    "furniture": "chair table couch sofa desk bed".split(),
    "container": "bag backpack purse box suitcase".split(),
    "function": "the a an this that".split(),
}


def write_clustered_vectors(path: Path, n_tokens: int = 10_000, dim: int = 50, seed: int = 3) -> Path:
    """Word-vector file where tokens of one cluster share a centroid; the rest are filler."""
    rng = np.random.default_rng(seed)
    lines = [f"{n_tokens} {dim}"]
    count = 0
    for words in CLUSTERS.values():
        centre = rng.standard_normal(dim)
        for w in words:
            v = centre + 0.25 * rng.standard_normal(dim)
            lines.append(w + " " + " ".join(f"{x:.6f}" for x in v))
            count += 1
    for k in range(n_tokens - count):
        v = rng.standard_normal(dim)
        lines.append(f"filler{k} " + " ".join(f"{x:.6f}" for x in v))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def clustered_vectors(tmp_path_factory) -> Path:
    return write_clustered_vectors(tmp_path_factory.mktemp("vectors") / "vectors.txt")


@pytest.fixture(scope="session")
def fig1() -> Dialogue:
    return figure_dialogue()


def load_jsonl(name: str) -> list[dict]:
    with open(FIXTURES / name, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
