"""
Network assembly: node blocks coupled through stateless edge maps.

Each node sees the sum of the complex currents its incident edges compute for
that end, and exposes a complex voltage as two states. Complex quantities are
(re, im) scalar pairs throughout so the evaluators stay scalar-generic.

Node and edge ids are 1-based labels as written in network files; flat state
and parameter indices are 0-based positions in the numpy vectors.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

import dual
from blocksys import CompiledBlock, CompiledMap
from errors import (
    ConfigError,
    IndexOutOfRange,
    InterfaceMismatch,
    InvalidParameter,
    InvalidTopology,
    ParseError,
    UnknownState,
)
from logger_config import logger

CURRENT_INPUTS = ("I_re", "I_im")
VOLTAGE_STATES = ("V_re", "V_im")
EDGE_INPUTS = ("V_src_re", "V_src_im", "V_dst_re", "V_dst_im")
EDGE_OUTPUTS = ("I_src_re", "I_src_im", "I_dst_re", "I_dst_im")


@dataclass(frozen=True)
class NetworkTopology:
    node_count: int
    edges: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.node_count < 1:
            raise IndexOutOfRange(f"a network needs at least one node, got {self.node_count}")
        object.__setattr__(self, "edges", tuple((int(s), int(d)) for s, d in self.edges))
        for position, (src, dst) in enumerate(self.edges, start=1):
            for node in (src, dst):
                if not 1 <= node <= self.node_count:
                    raise IndexOutOfRange(
                        f"edge {position} references node {node} outside [1, {self.node_count}]"
                    )
            if src == dst:
                raise InvalidTopology(f"edge {position} is a self-loop at node {src}")

    def incident(self, node: int) -> List[Tuple[int, int]]:
        """(edge position, end) pairs at ``node`` in canonical summation order; end 0 is src."""
        found = []
        for position, (src, dst) in enumerate(self.edges):
            if src == node:
                found.append(((src, dst, position), position, 0))
            if dst == node:
                found.append(((src, dst, position), position, 1))
        return [(position, end) for _, position, end in sorted(found)]


@dataclass
class NodeModel:
    compiled: CompiledBlock
    model: str = "node"
    parameters: Dict[str, float] = field(default_factory=dict)
    signals: Dict[str, float] = field(default_factory=dict)

    def validate(self):
        inputs = [s.qualified for s in self.compiled.input_order]
        states = self.compiled.state_names
        for name in CURRENT_INPUTS:
            if name not in inputs:
                raise InterfaceMismatch(f"node model {self.model} has no current input {name}")
        for name in VOLTAGE_STATES:
            if name not in states:
                raise InterfaceMismatch(f"node model {self.model} has no voltage output {name}")
        for name in self.signals:
            if name not in inputs or name in CURRENT_INPUTS:
                raise InterfaceMismatch(f"node model {self.model} has no signal input {name}")


@dataclass
class EdgeModel:
    compiled: CompiledMap
    model: str = "edge"
    parameters: Dict[str, float] = field(default_factory=dict)

    def validate(self):
        if [s.qualified for s in self.compiled.input_order] != list(EDGE_INPUTS):
            raise InterfaceMismatch(f"edge model {self.model} must take inputs {EDGE_INPUTS}")
        if [s.qualified for s in self.compiled.output_order] != list(EDGE_OUTPUTS):
            raise InterfaceMismatch(f"edge model {self.model} must produce outputs {EDGE_OUTPUTS}")


Owner = Tuple[str, int]


class NetworkSystem:
    """Coupled evaluator ``M·dx/dt = f(x, p, t)`` over a topology."""

    def __init__(
        self,
        topology: NetworkTopology,
        nodes: Sequence[NodeModel],
        edges: Sequence[EdgeModel],
        node_names: Optional[Sequence[str]] = None,
    ):
        self.topology = topology
        self.nodes = list(nodes)
        self.edges = list(edges)
        self.node_names = list(node_names or [f"node{k}" for k in range(1, topology.node_count + 1)])

        self.state_layout: Dict[Tuple[int, str], int] = {}
        self.param_layout: Dict[Tuple[Owner, str], int] = {}
        self._state_slices: List[slice] = []
        self._node_params: List[slice] = []
        self._edge_params: List[slice] = []
        self._voltage: List[Tuple[int, int]] = []
        self._current_slots: List[Tuple[int, int]] = []
        self._signals: List[list] = []

        offset = 0
        for node_id, node in enumerate(self.nodes, start=1):
            compiled = node.compiled
            for k, name in enumerate(compiled.state_names):
                self.state_layout[(node_id, name)] = offset + k
            self._state_slices.append(slice(offset, offset + compiled.dimension))
            self._voltage.append(
                (offset + compiled.state_index(VOLTAGE_STATES[0]), offset + compiled.state_index(VOLTAGE_STATES[1]))
            )
            offset += compiled.dimension
            self._current_slots.append(
                (compiled.input_index(CURRENT_INPUTS[0]), compiled.input_index(CURRENT_INPUTS[1]))
            )
            values = [0.0] * len(compiled.input_order)
            for name, value in node.signals.items():
                values[compiled.input_index(name)] = float(value)
            self._signals.append(values)
        self.dimension = offset
        self.mass = np.concatenate([n.compiled.mass for n in self.nodes])

        offset = 0
        for node_id, node in enumerate(self.nodes, start=1):
            for k, symbol in enumerate(node.compiled.param_order):
                self.param_layout[(("node", node_id), symbol.qualified)] = offset + k
            self._node_params.append(slice(offset, offset + len(node.compiled.param_order)))
            offset += len(node.compiled.param_order)
        for edge_id, edge in enumerate(self.edges, start=1):
            for k, symbol in enumerate(edge.compiled.param_order):
                self.param_layout[(("edge", edge_id), symbol.qualified)] = offset + k
            self._edge_params.append(slice(offset, offset + len(edge.compiled.param_order)))
            offset += len(edge.compiled.param_order)
        self.parameter_count = offset

        self._incidence = [topology.incident(node_id) for node_id in range(1, topology.node_count + 1)]
        self._state_names = [None] * self.dimension
        for (node_id, name), index in self.state_layout.items():
            self._state_names[index] = f"{self.node_names[node_id - 1]}.{name}"
        self._param_names = [None] * self.parameter_count
        for ((kind, owner), name), index in self.param_layout.items():
            label = self.node_names[owner - 1] if kind == "node" else f"edge{owner}"
            self._param_names[index] = f"{label}.{name}"

    @property
    def state_names(self) -> List[str]:
        return list(self._state_names)

    @property
    def parameter_names(self) -> List[str]:
        return list(self._param_names)

    def default_parameters(self) -> np.ndarray:
        parts = [n.compiled.parameter_vector(n.parameters) for n in self.nodes]
        parts += [e.compiled.parameter_vector(e.parameters) for e in self.edges]
        return np.concatenate(parts) if parts else np.zeros(0)

    def indices_of(self, name: str) -> List[int]:
        """Flat index of state ``name`` at every node, in node order."""
        return [state_index(self, node_id, name) for node_id in range(1, self.topology.node_count + 1)]

    def parameter_indices_of(self, name: str) -> List[int]:
        return [param_index(self, ("node", node_id), name) for node_id in range(1, self.topology.node_count + 1)]

    def edge_currents(self, x, p, t: float = 0.0) -> list:
        xs = list(x)
        ps = list(p)
        currents = []
        for position, (src, dst) in enumerate(self.topology.edges):
            s_re, s_im = self._voltage[src - 1]
            d_re, d_im = self._voltage[dst - 1]
            currents.append(
                self.edges[position].compiled.evaluate(
                    [xs[s_re], xs[s_im], xs[d_re], xs[d_im]], ps[self._edge_params[position]], t
                )
            )
        return currents

    def rhs(self, x, p, t: float = 0.0) -> np.ndarray:
        if len(x) != self.dimension:
            raise IndexOutOfRange(f"state vector has {len(x)} entries, network has {self.dimension}")
        if len(p) != self.parameter_count:
            raise IndexOutOfRange(f"parameter vector has {len(p)} entries, network has {self.parameter_count}")
        xs = list(x)
        ps = list(p)
        currents = self.edge_currents(xs, ps, t)
        parts = []
        for k, node in enumerate(self.nodes):
            i_re = i_im = 0.0
            for position, end in self._incidence[k]:
                out = currents[position]
                i_re = i_re + out[2 * end]
                i_im = i_im + out[2 * end + 1]
            inputs = list(self._signals[k])
            slot_re, slot_im = self._current_slots[k]
            inputs[slot_re] = i_re
            inputs[slot_im] = i_im
            parts.append(node.compiled.rhs(xs[self._state_slices[k]], inputs, ps[self._node_params[k]], t))
        return dual.as_state_array([v for part in parts for v in part])

    def __repr__(self):
        return (
            f"NetworkSystem(nodes={self.topology.node_count}, edges={len(self.edges)}, "
            f"dimension={self.dimension})"
        )


def assemble(
    topology: NetworkTopology,
    node_models: Sequence[NodeModel],
    edge_models: Sequence[EdgeModel],
    node_names: Optional[Sequence[str]] = None,
) -> NetworkSystem:
    if len(node_models) != topology.node_count:
        raise IndexOutOfRange(
            f"{len(node_models)} node models for {topology.node_count} nodes"
        )
    if len(edge_models) != len(topology.edges):
        raise IndexOutOfRange(f"{len(edge_models)} edge models for {len(topology.edges)} edges")
    for node in node_models:
        node.validate()
    for edge in edge_models:
        edge.validate()
    net = NetworkSystem(topology, node_models, edge_models, node_names)
    logger.debug(f"Assembled {net!r}")
    return net


def network_rhs(net: NetworkSystem, x, p, t: float = 0.0) -> np.ndarray:
    return net.rhs(x, p, t)


def state_index(net: NetworkSystem, node_id: int, symbol) -> int:
    """0-based flat index of state ``symbol`` at node ``node_id``.

    Node ids are 1-based labels; the returned index addresses the state
    vector directly, so node 1's first state is index 0.
    """
    name = getattr(symbol, "qualified", symbol)
    try:
        return net.state_layout[(int(node_id), name)]
    except KeyError:
        raise UnknownState(f"node {node_id} has no state {name}") from None


def state_symbol(net: NetworkSystem, index: int) -> Tuple[int, str]:
    for key, value in net.state_layout.items():
        if value == index:
            return key
    raise UnknownState(f"no state at flat index {index}")


def param_index(net: NetworkSystem, owner: Owner, name: str) -> int:
    try:
        return net.param_layout[((owner[0], int(owner[1])), name)]
    except KeyError:
        raise InvalidParameter(f"{owner[0]} {owner[1]} has no parameter {name}") from None


# network description files

ModelFactory = Callable[[Mapping[str, float]], Union[NodeModel, EdgeModel]]


def _field(entry: Mapping, key: str, where: str):
    if key not in entry:
        raise ConfigError(f"{where}.{key}", "is required")
    return entry[key]


def build_network(description: Mapping, registry: Mapping[str, ModelFactory]) -> NetworkSystem:
    """Build a ``NetworkSystem`` from a parsed description and a model registry.

    Nodes carry ``id``, ``model`` and optional ``name``, ``params`` and
    ``signals``; edges carry ``src``, ``dst``, ``model`` and optional ``params``.
    Node ids must be exactly 1..n.
    """
    nodes_data = description.get("nodes") or []
    edges_data = description.get("edges") or []
    if not nodes_data:
        raise ConfigError("nodes", "at least one node is required")
    ordered = sorted(nodes_data, key=lambda n: int(_field(n, "id", "nodes[]")))
    ids = [int(n["id"]) for n in ordered]
    if ids != list(range(1, len(ids) + 1)):
        raise IndexOutOfRange(f"node ids must be 1..{len(ids)}, got {ids}")

    def make(entry, where, expected):
        model = _field(entry, "model", where)
        if model not in registry:
            raise ConfigError(f"{where}.model", f"unknown model {model!r}")
        params = {str(k): float(v) for k, v in (entry.get("params") or {}).items()}
        built = registry[model](params)
        if not isinstance(built, expected):
            raise ConfigError(f"{where}.model", f"{model!r} is not a {expected.__name__}")
        return built

    nodes = []
    for entry in ordered:
        where = f"nodes[{entry['id']}]"
        node = make(entry, where, NodeModel)
        node.signals = {str(k): float(v) for k, v in (entry.get("signals") or {}).items()}
        nodes.append(node)
    edges = []
    pairs = []
    for position, entry in enumerate(edges_data, start=1):
        where = f"edges[{position}]"
        pairs.append((int(_field(entry, "src", where)), int(_field(entry, "dst", where))))
        edges.append(make(entry, where, EdgeModel))
    names = [str(n.get("name") or f"node{n['id']}") for n in ordered]
    return assemble(NetworkTopology(len(nodes), tuple(pairs)), nodes, edges, names)


def load_network_description(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid network file {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError("network", f"cannot read {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ParseError(f"network file {path} must contain a mapping")
    return dict(data)


__all__ = [
    "NetworkTopology",
    "NodeModel",
    "EdgeModel",
    "NetworkSystem",
    "assemble",
    "network_rhs",
    "state_index",
    "state_symbol",
    "param_index",
    "build_network",
    "load_network_description",
    "CURRENT_INPUTS",
    "VOLTAGE_STATES",
    "EDGE_INPUTS",
    "EDGE_OUTPUTS",
]
