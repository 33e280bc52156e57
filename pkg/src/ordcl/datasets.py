"""Small bundled datasets used in examples, tests and the simulation template."""
from __future__ import annotations

import csv
from importlib import resources

import numpy as np

from .model import ModelSpec, OrdinalData


def _read(name: str) -> list:
    with resources.files("ordcl.data").joinpath(name).open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def wine() -> OrdinalData:
    """Wine bitterness ratings: 4 temperature x contact groups, 5 categories, 18 judgements each.

    Covariates are indicators ``warm`` and ``contact``.
    """
    rows = _read("wine.csv")
    x = np.array([[r["temperature"] == "warm", r["contact"] == "yes"] for r in rows], float)
    y = np.array([[int(r[f"y{s}"]) for s in range(1, 6)] for r in rows])
    return OrdinalData(x, y, ("warm", "contact"))


def wine_spec(link="logit") -> ModelSpec:
    """Partial effect of temperature, proportional effect of contact."""
    return ModelSpec(link, 5, proportional_cols=(1,), partial_cols=(0,))


def artificial(aggregated: bool = False) -> OrdinalData:
    """2 x 4 artificial data with an empty last category, in two representations."""
    if aggregated:
        x, y = [[-0.5], [0.5]], [[8, 6, 1, 0], [18, 1, 1, 0]]
    else:
        x, y = [[-0.5], [0.5], [0.5]], [[8, 6, 1, 0], [10, 0, 1, 0], [8, 1, 0, 0]]
    return OrdinalData(np.array(x), np.array(y), ("x",))


def ratings(standardize: bool = True) -> OrdinalData:
    """106 ratings on a 1-5 scale with GRE quantitative/verbal scores and three indicators.

    With ``standardize`` the GRE columns are centred and divided by their
    sample standard deviation.
    """
    rows = _read("admit.csv")
    names = ("gre.quant", "gre.verbal", "ap", "pt", "female")
    x = np.array([[float(r[c]) for c in names] for r in rows])
    if standardize:
        x[:, :2] = (x[:, :2] - x[:, :2].mean(axis=0)) / x[:, :2].std(axis=0, ddof=1)
    score = np.array([int(r["score"]) for r in rows])
    y = np.zeros((len(rows), 5), dtype=int)
    y[np.arange(len(rows)), score - 1] = 1
    return OrdinalData(x, y, names)


def ratings_spec(link="logit") -> ModelSpec:
    return ModelSpec.proportional(link, 5, 5)
