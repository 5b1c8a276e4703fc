"""
Power-system block library.

Buses follow the classical machine model: an angle ``θ`` driven by the
frequency deviation ``ω`` and a voltage of fixed magnitude
``V = V_mag·(cos θ, sin θ)``. The electrical power drawn from a bus is
``P_e = V_re·I_re + V_im·I_im + P_load + dP`` where ``dP`` is the load step.

Two bus families are provided:

- ``swing``: swing dynamics with a proportional controller
  ``M·dω/dt = P_m - D·ω - P_e`` (the tuning specification);
- ``swing+pid``: the same swing equation whose mechanical power comes from a
  PID controller acting on ``ω`` (the system being tuned).
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import blocksys as bs
import symcore as sc
from errors import InvalidParameter
from netdyn import (
    EDGE_INPUTS,
    EDGE_OUTPUTS,
    EdgeModel,
    NetworkSystem,
    NodeModel,
    build_network,
    load_network_description,
    param_index,
)
from odesolve import Event

S = sc.Symbol.state
I = sc.Symbol.input
P = sc.Symbol.parameter


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidParameter(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class SwingParams:
    inertia: float
    damping: float = 0.0

    def __post_init__(self):
        if not _finite("inertia", self.inertia) > 0:
            raise InvalidParameter(f"inertia must be positive, got {self.inertia}")
        if not _finite("damping", self.damping) >= 0:
            raise InvalidParameter(f"damping must be non-negative, got {self.damping}")

    @classmethod
    def from_inertia_constant(cls, h: float, damping: float = 0.0) -> "SwingParams":
        """Inertia ``2H`` for an inertia constant ``H``."""
        return cls(2.0 * h, damping)


@dataclass(frozen=True)
class PidParams:
    k_p: float = 1.0
    k_i: float = 1.0
    k_d: float = 1.0
    setpoint: float = 1.0

    def __post_init__(self):
        for name in ("k_p", "k_i", "k_d", "setpoint"):
            _finite(name, getattr(self, name))


@dataclass(frozen=True)
class LoadDisturbance:
    bus: int
    delta_p: float
    time: float = 0.0

    def __post_init__(self):
        _finite("delta_p", self.delta_p)
        _finite("time", self.time)

    def event(self, net: NetworkSystem) -> Event:
        return Event(self.time, {param_index(net, ("node", self.bus), "dP"): self.delta_p})


def swing_block(params: SwingParams, name: str = "swing") -> bs.IOBlock:
    """``dω/dt = (P_m - D·ω - P_e)/M`` with inputs ``P_m``, ``P_e``."""
    omega, m, d = S("ω"), P("M"), P("D")
    return bs.make_block(
        name,
        [bs.differential(omega, (I("P_m") - d * omega - I("P_e")) / m)],
        inputs=[I("P_m"), I("P_e")],
        outputs=[omega],
        defaults={m: params.inertia, d: params.damping},
    )


def pid_block(params: PidParams, name: str = "pid") -> bs.IOBlock:
    """PID on ``input`` subtracted from a setpoint: ``out = setpoint - pid``."""
    u = I("input")
    integral, pid, out = S("int"), S("pid"), S("out")
    return bs.make_block(
        name,
        [
            bs.differential(integral, u),
            bs.explicit(pid, P("k_p") * u + P("k_i") * integral + P("k_d") * sc.dt(u)),
            bs.explicit(out, P("setpoint") - pid),
        ],
        inputs=[u],
        outputs=[out],
        defaults={
            P("k_p"): params.k_p,
            P("k_i"): params.k_i,
            P("k_d"): params.k_d,
            P("setpoint"): params.setpoint,
        },
    )


def power_source_block(power: float, name: str = "source") -> bs.IOBlock:
    """Constant mechanical power ``P = P_m``."""
    return bs.make_block(
        name,
        [bs.explicit(S("P"), P("P_m"))],
        outputs=[S("P")],
        defaults={P("P_m"): _finite("power", power)},
    )


def bus_terminal_block(load: float = 0.0, v_mag: float = 1.0, name: str = "grid") -> bs.IOBlock:
    """Angle, terminal voltage and electrical power of a classical machine bus."""
    theta, omega = S("θ"), I("ω")
    v_re, v_im, p_e = S("V_re"), S("V_im"), S("P_e")
    return bs.make_block(
        name,
        [
            bs.differential(theta, omega),
            bs.explicit(v_re, P("V_mag") * sc.cos(theta)),
            bs.explicit(v_im, P("V_mag") * sc.sin(theta)),
            bs.explicit(p_e, v_re * I("I_re") + v_im * I("I_im") + P("P_load") + P("dP")),
        ],
        inputs=[omega, I("I_re"), I("I_im")],
        outputs=[v_re, v_im, p_e],
        defaults={P("P_load"): _finite("load", load), P("dP"): 0.0, P("V_mag"): _finite("v_mag", v_mag)},
    )


def _check_voltage(v_mag: float):
    if not _finite("V_mag", v_mag) > 0:
        raise InvalidParameter(f"V_mag must be positive, got {v_mag}")


def proportional_bus_block(
    inertia: float,
    gain: float,
    load: float = 0.0,
    power: Optional[float] = None,
    v_mag: float = 1.0,
    name: str = "bus",
) -> bs.IOBlock:
    """Hand-written flat swing bus with proportional control ``D·ω``."""
    params = SwingParams(inertia, gain)
    _check_voltage(v_mag)
    theta, omega = S("θ"), S("ω")
    v_re, v_im = S("V_re"), S("V_im")
    p_e = v_re * I("I_re") + v_im * I("I_im") + P("P_load") + P("dP")
    return bs.make_block(
        name,
        [
            bs.differential(omega, (P("P_m") - P("D") * omega - p_e) / P("M")),
            bs.differential(theta, omega),
            bs.explicit(v_re, P("V_mag") * sc.cos(theta)),
            bs.explicit(v_im, P("V_mag") * sc.sin(theta)),
        ],
        inputs=[I("I_re"), I("I_im")],
        outputs=[v_re, v_im, omega],
        defaults={
            P("M"): params.inertia,
            P("D"): params.damping,
            P("P_m"): _finite("power", load if power is None else power),
            P("P_load"): _finite("load", load),
            P("dP"): 0.0,
            P("V_mag"): float(v_mag),
        },
    )


_BUS_PROMOTIONS = {
    "grid.θ": "θ",
    "grid.P_load": "P_load",
    "grid.dP": "dP",
    "grid.V_mag": "V_mag",
    "swing.M": "M",
    "swing.D": "D",
}


def composed_swing_bus_block(
    inertia: float,
    gain: float,
    load: float = 0.0,
    power: Optional[float] = None,
    v_mag: float = 1.0,
    name: str = "bus",
) -> bs.IOBlock:
    """The proportional bus built by composing swing, terminal and source blocks."""
    _check_voltage(v_mag)
    system = bs.connect(
        [
            swing_block(SwingParams(inertia, gain)),
            bus_terminal_block(load, v_mag),
            power_source_block(load if power is None else power),
        ],
        [
            ("grid.P_e", "swing.P_e"),
            ("swing.ω", "grid.ω"),
            ("source.P", "swing.P_m"),
        ],
        promoted_outputs=["grid.V_re", "grid.V_im", "swing.ω"],
        name_promotions={**_BUS_PROMOTIONS, "source.P_m": "P_m"},
        name=name,
    )
    return bs.connect_system(system)


def swing_pid_block(
    swing: SwingParams = SwingParams(1.0, 1.0),
    pid: PidParams = PidParams(),
    name: str = "swing_pid",
) -> bs.IOBlock:
    """Closed loop of a swing node whose ``P_m`` is set by a PID on ``ω``; open input ``P_e``."""
    system = bs.connect(
        [swing_block(swing), pid_block(pid)],
        [("pid.out", "swing.P_m"), ("swing.ω", "pid.input")],
        promoted_outputs=["swing.ω"],
        name_promotions={
            "pid.int": "int",
            "swing.M": "M",
            "swing.D": "D",
            "pid.k_p": "k_p",
            "pid.k_i": "k_i",
            "pid.k_d": "k_d",
            "pid.setpoint": "P_m",
        },
        name=name,
    )
    return bs.connect_system(system)


def swing_pid_bus_block(
    inertia: float,
    gain: float,
    load: float = 0.0,
    gains: PidParams = PidParams(0.5, 0.0, 0.5),
    power: Optional[float] = None,
    v_mag: float = 1.0,
    name: str = "bus",
) -> bs.IOBlock:
    """Swing bus with proportional gain ``D`` and a PID inner loop supplying ``P_m``."""
    _check_voltage(v_mag)
    setpoint = load if power is None else power
    pid = PidParams(gains.k_p, gains.k_i, gains.k_d, _finite("power", setpoint))
    system = bs.connect(
        [swing_block(SwingParams(inertia, gain)), pid_block(pid), bus_terminal_block(load, v_mag)],
        [
            ("grid.P_e", "swing.P_e"),
            ("swing.ω", "grid.ω"),
            ("swing.ω", "pid.input"),
            ("pid.out", "swing.P_m"),
        ],
        promoted_outputs=["grid.V_re", "grid.V_im", "swing.ω"],
        name_promotions={
            **_BUS_PROMOTIONS,
            "pid.int": "int",
            "pid.setpoint": "P_m",
            "pid.k_p": "k_p",
            "pid.k_i": "k_i",
            "pid.k_d": "k_d",
        },
        name=name,
    )
    return bs.connect_system(system)


_BUS_STATES = ("ω", "θ", "V_re", "V_im")


def proportional_bus(
    inertia: float,
    gain: float,
    load: float = 0.0,
    power: Optional[float] = None,
    v_mag: float = 1.0,
) -> NodeModel:
    block = proportional_bus_block(inertia, gain, load, power, v_mag)
    return NodeModel(bs.compile(block, state_order=_BUS_STATES), model="swing")


def swing_pid_bus(
    inertia: float,
    gain: float,
    load: float = 0.0,
    gains: PidParams = PidParams(0.5, 0.0, 0.5),
    power: Optional[float] = None,
    v_mag: float = 1.0,
) -> NodeModel:
    block = swing_pid_bus_block(inertia, gain, load, gains, power, v_mag)
    return NodeModel(bs.compile(block, state_order=_BUS_STATES + ("int",)), model="swing+pid")


def admittance_line_block(g: float = 0.0, b: float = -1.0, name: str = "line") -> bs.IOBlock:
    """``I_src = (G + jB)(V_src - V_dst)`` and ``I_dst = -I_src`` as (re, im) pairs."""
    v_src_re, v_src_im, v_dst_re, v_dst_im = (I(n) for n in EDGE_INPUTS)
    i_src_re, i_src_im, i_dst_re, i_dst_im = (S(n) for n in EDGE_OUTPUTS)
    d_re = v_src_re - v_dst_re
    d_im = v_src_im - v_dst_im
    return bs.make_block(
        name,
        [
            bs.explicit(i_src_re, P("G") * d_re - P("B") * d_im),
            bs.explicit(i_src_im, P("G") * d_im + P("B") * d_re),
            bs.explicit(i_dst_re, -i_src_re),
            bs.explicit(i_dst_im, -i_src_im),
        ],
        inputs=[v_src_re, v_src_im, v_dst_re, v_dst_im],
        outputs=[i_src_re, i_src_im, i_dst_re, i_dst_im],
        defaults={P("G"): _finite("G", g), P("B"): _finite("B", b)},
    )


def admittance_line(g: float = 0.0, b: float = -1.0) -> EdgeModel:
    compiled = bs.compile_map(
        admittance_line_block(g, b), output_order=EDGE_OUTPUTS, input_order=EDGE_INPUTS
    )
    return EdgeModel(compiled, model="admittance-line")


# registry for network description files


def _take(params: Mapping[str, float], allowed: Dict[str, Optional[float]], model: str) -> Dict[str, float]:
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise InvalidParameter(f"model {model} has no parameters {unknown}")
    values = dict(allowed)
    values.update({k: float(v) for k, v in params.items()})
    return values


def _swing_from_params(params: Mapping[str, float]) -> NodeModel:
    v = _take(params, {"M": None, "D": 0.0, "P_m": None, "P_load": 0.0, "dP": 0.0, "V_mag": 1.0}, "swing")
    if v["M"] is None:
        raise InvalidParameter("model swing requires M")
    node = proportional_bus(v["M"], v["D"], v["P_load"], v["P_m"], v["V_mag"])
    node.parameters = {"dP": v["dP"]}
    return node


def _swing_pid_from_params(params: Mapping[str, float]) -> NodeModel:
    v = _take(
        params,
        {
            "M": None,
            "D": 0.0,
            "P_m": None,
            "P_load": 0.0,
            "dP": 0.0,
            "V_mag": 1.0,
            "k_p": 0.5,
            "k_i": 0.0,
            "k_d": 0.5,
        },
        "swing+pid",
    )
    if v["M"] is None:
        raise InvalidParameter("model swing+pid requires M")
    gains = PidParams(v["k_p"], v["k_i"], v["k_d"])
    node = swing_pid_bus(v["M"], v["D"], v["P_load"], gains, v["P_m"], v["V_mag"])
    node.parameters = {"dP": v["dP"]}
    return node


def _line_from_params(params: Mapping[str, float]) -> EdgeModel:
    v = _take(params, {"G": 0.0, "B": -1.0}, "admittance-line")
    return admittance_line(v["G"], v["B"])


MODEL_REGISTRY = {
    "swing": _swing_from_params,
    "swing+pid": _swing_pid_from_params,
    "admittance-line": _line_from_params,
}


def load_network(path: Union[str, Path]) -> NetworkSystem:
    return build_network(load_network_description(path), MODEL_REGISTRY)


__all__ = [
    "SwingParams",
    "PidParams",
    "LoadDisturbance",
    "swing_block",
    "pid_block",
    "power_source_block",
    "bus_terminal_block",
    "proportional_bus_block",
    "composed_swing_bus_block",
    "swing_pid_block",
    "swing_pid_bus_block",
    "proportional_bus",
    "swing_pid_bus",
    "admittance_line_block",
    "admittance_line",
    "MODEL_REGISTRY",
    "load_network",
]
