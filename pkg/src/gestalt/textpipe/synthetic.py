"""Templated family documents for desk-scale runs.

Each document opens by stating a father/son relation and then keeps
referring back to the two people (and to a city, job and hobby introduced
along the way). Many later tokens can only be predicted by remembering an
earlier sentence, which is what the sentence memory is supposed to carry.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

CITIES = ["Paris", "London", "Berlin", "Madrid", "Rome", "Vienna", "Prague", "Dublin",
          "Lisbon", "Oslo", "Athens", "Warsaw", "Boston", "Chicago", "Denver", "Austin",
          "Seattle", "Toronto", "Sydney", "Cairo", "Lima", "Tokyo", "Delhi", "Nairobi"]
JOBS = ["baker", "teacher", "farmer", "doctor", "painter", "sailor", "pilot", "lawyer",
        "carpenter", "chef", "miner", "nurse", "writer", "banker", "tailor", "singer"]
HOBBIES = ["chess", "fishing", "music", "football", "tennis", "poetry", "cooking",
           "gardening", "painting", "swimming", "hiking", "dancing"]
WEATHER = ["cold", "warm", "rainy", "windy", "sunny", "grey"]

_FOLLOW_UPS = [
    "{son} lives in {city}.",
    "{father} works as a {job}.",
    "{son} likes {hobby}.",
    "The father of {son} is {father}.",
    "{father} is the father of {son}.",
    "{son} is the son of {father}.",
    "Every summer, {son} visits {father} in {city}.",
    "Most days, {father} teaches {son} about {hobby}.",
    "The weather in {city} was {weather} that year.",
    "Later, {son} became a {job} like {father}.",
    "People in {city} know {father} as a good {job}.",
]


def load_names() -> list[str]:
    text = resources.files("gestalt.data").joinpath("names.txt").read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


def family_document(rng, names) -> list[str]:
    father, son = rng.choice(len(names), size=2, replace=False)
    slots = {
        "father": names[father], "son": names[son],
        "city": CITIES[rng.integers(len(CITIES))], "job": JOBS[rng.integers(len(JOBS))],
        "hobby": HOBBIES[rng.integers(len(HOBBIES))], "weather": WEATHER[rng.integers(len(WEATHER))],
    }
    k = int(rng.integers(5, 10))
    picks = rng.choice(len(_FOLLOW_UPS), size=k, replace=True)
    body = ["The son of {father} is {son}.".format(**slots)]
    body += [_FOLLOW_UPS[i].format(**slots) for i in picks]
    return body


def synthetic_corpus(n_docs: int, seed: int = 0) -> str:
    """WikiText-style text: a ``= Title =`` heading then one paragraph per document."""
    rng = np.random.default_rng(seed)
    names = load_names()
    parts = []
    for i in range(n_docs):
        parts.append(f" = Family {i} = ")
        parts.append("")
        parts.append(" " + " ".join(family_document(rng, names)))
        parts.append("")
    return "\n".join(parts) + "\n"
