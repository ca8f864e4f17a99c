import numpy as np
import pytest

from setvalued_hjb import ConeSpec, DiscountSpec, LagrangianSpec, Scenario, TerminalSpec

ORTHANT = np.eye(2)
L_STD = dict(Q=[[[1.0]], [[1.0]]], a=[[0.0], [1.0]])


def make(discount=None, terminal=None, lagrangian=None, k_grid=33, T=1.0):
    cone = ConeSpec.from_generators(ORTHANT, k_grid=k_grid)
    lag = lagrangian or LagrangianSpec.quadratic(**L_STD)
    term = terminal or TerminalSpec.linear([[1.0], [0.0]])
    disc = discount or DiscountSpec.constant_rate(0.1)
    return Scenario(cone, lag, term, disc, T)


def sat_terminal():
    return TerminalSpec.build("CONVEX_QUAD_SAT", [[0.5], [-0.2]], scale=[1.0, 0.5], centers=[[0.3], [-0.5]])


def quartic():
    return LagrangianSpec.quartic_reg([[[1.0]], [[2.0]]], a=[[0.0], [1.0]], eps=[0.1, 0.05])


@pytest.fixture(scope="session")
def std():
    return make()


@pytest.fixture(scope="session")
def std0():
    return make(DiscountSpec.constant_rate(0.0))


@pytest.fixture(scope="session")
def sat():
    return make(DiscountSpec.hyperbolic(0.5), sat_terminal())


@pytest.fixture(scope="session")
def scenarios():
    """Scenarios spanning every family, small K for speed."""
    return {
        "linear-exp": make(k_grid=9),
        "sat-hyp": make(DiscountSpec.hyperbolic(0.5), sat_terminal(), k_grid=9),
        "sat-exp-quartic": make(DiscountSpec.constant_rate(0.2), sat_terminal(), quartic(), k_grid=9),
        "linear-var-quartic": make(
            DiscountSpec.variable_rate([0.5], [0.1, 0.3]), TerminalSpec.linear([[1.0], [-0.5]]), quartic(), k_grid=9
        ),
    }
