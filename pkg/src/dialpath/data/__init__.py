"""Packaged fixtures: the hand-encoded figure dialogue and the default lexicons."""
from importlib import resources

FIG1 = "fig1"


def figure_dialogue():
    """The running-example dialogue, 5 turns, shipped as ``fig1.jsonl``."""
    from ..dialogue import load_corpus

    with resources.as_file(resources.files(__name__).joinpath(f"{FIG1}.jsonl")) as p:
        return load_corpus(p)[0]
