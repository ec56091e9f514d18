"""Shared fixtures: claim families and their precomputed tables."""

import re

import pytest

from divbands.cli import load_config
from divbands.deficit import build_tables
from divbands.model import ClaimDistribution, ErlangComponent, ModelParams

ERLANG21 = ClaimDistribution.erlang(2, 1.0)
MIX1 = ClaimDistribution((ErlangComponent(0.025, 2, 10.0), ErlangComponent(0.225, 3, 1.0),
                          ErlangComponent(0.75, 4, 0.2)))
PARETO = ClaimDistribution.pareto(1.5, 1.0)
ERLANG_PARETO = ClaimDistribution.mixture([(0.8, ERLANG21), (0.2, PARETO)])


def _tables(name):
    cfg = load_config(name)
    return build_tables(cfg.params, cfg.claims, cfg.n_grid, cfg.n_deficit)


@pytest.fixture(scope="session")
def e21():
    return _tables("erlang21")


@pytest.fixture(scope="session")
def mix1():
    return _tables("erlang_mix1")


@pytest.fixture(scope="session")
def mix2():
    return _tables("erlang_mix2")


@pytest.fixture(scope="session")
def pareto():
    return _tables("pareto")


@pytest.fixture(scope="session")
def erlang_pareto():
    return _tables("erlang_pareto")


@pytest.fixture(scope="session")
def e21_params():
    return ModelParams.for_claims(10.0, 0.1, 0.07, ERLANG21)


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def report_criterion():
    """Record a one-line verdict for an acceptance criterion."""
    def report(label, ok, detail):
        label = str(label)
        ACCEPTANCE_LINES[label] = f"criterion {label:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[label])
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
