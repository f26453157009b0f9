import numpy as np
import pytest

from cstest import CausalGraph, DecisionRule, ScmModel

# Published estimates for the law-school admissions SCM.
LAW_PARAMS = {
    "UGPA": (3.21, {"race": -0.22, "sex": 0.13}),
    "LSAT": (37.8, {"race": -4.64, "sex": -0.61}),
}
# Residual spreads are not reported; these match the public data's scale.
LAW_NOISE = {"UGPA": 0.4, "LSAT": 5.0}
ROOT_PROBS = {"race": 0.161, "sex": 0.438}
PSI = 20.8


def law_graph(order=("race", "sex", "UGPA", "LSAT")):
    parents = {"UGPA": ("race", "sex"), "LSAT": ("race", "sex")}
    return CausalGraph(tuple(order), parents, {"race", "sex"})


def law_model(noise=LAW_NOISE, scale_protected=1.0):
    return ScmModel.from_parameters(
        law_graph(),
        {
            n: (b, {p: c * scale_protected for p, c in coefs.items()}, noise[n])
            for n, (b, coefs) in LAW_PARAMS.items()
        },
    )


def admission_rule():
    return DecisionRule({"UGPA": 0.6, "LSAT": 0.4}, PSI)


@pytest.fixture
def graph():
    return law_graph()


@pytest.fixture
def model():
    return law_model()


@pytest.fixture
def rule():
    return admission_rule()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
