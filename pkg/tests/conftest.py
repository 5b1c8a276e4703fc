"""Shared fixtures for the blocktune test suite."""

import math

import numpy as np
import pytest

import blocksys as bs
import symcore as sc
import powerlib as pl
from netdyn import assemble, NetworkTopology


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def swing():
    return pl.swing_block(pl.SwingParams(1.0, 1.0))


@pytest.fixture
def swing_pid():
    return pl.swing_pid_block()


@pytest.fixture
def decay_block():
    """``dx/dt = -k·x`` with ``k = 1``."""
    x = sc.Symbol.state("x")
    k = sc.Symbol.parameter("k")
    return bs.make_block("decay", [bs.differential(x, -(k * x))], outputs=[x], defaults={k: 1.0})


@pytest.fixture
def three_bus():
    """Ring of three buses with one swing+pid node and a lossy line."""
    nodes = [
        pl.proportional_bus(2.0, 0.4, load=1.0, power=1.3),
        pl.proportional_bus(1.5, 0.6, load=1.0, power=0.8),
        pl.swing_pid_bus(3.0, 0.2, load=1.0, power=0.9),
    ]
    edges = [pl.admittance_line(0.0, -4.0), pl.admittance_line(0.1, -3.0), pl.admittance_line(0.0, -5.0)]
    return assemble(NetworkTopology(3, ((1, 2), (2, 3), (3, 1))), nodes, edges)


def random_state(net, rng, scale=0.3):
    """Random point near the operating region (unit voltages, small angles)."""
    x = rng.uniform(-scale, scale, net.dimension)
    for index in net.indices_of("V_re"):
        x[index] += 1.0
    return x


def polar_state(net, rng):
    """Random angles and frequencies with consistent ``V = (cos θ, sin θ)``."""
    x = np.zeros(net.dimension)
    for node in range(1, net.topology.node_count + 1):
        theta = rng.uniform(-math.pi / 4, math.pi / 4)
        x[net.state_layout[(node, "θ")]] = theta
        x[net.state_layout[(node, "ω")]] = rng.uniform(-0.2, 0.2)
        x[net.state_layout[(node, "V_re")]] = math.cos(theta)
        x[net.state_layout[(node, "V_im")]] = math.sin(theta)
        if (node, "int") in net.state_layout:
            x[net.state_layout[(node, "int")]] = rng.uniform(-0.2, 0.2)
    return x
