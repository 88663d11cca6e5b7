"""Experiment configuration: a YAML document mapped onto dataclasses.

A config names the phase to run, the streams, the placement, the transport
and the stop condition. Phase-specific knobs live under ``params``. The
resolved config is written next to the results so any run can be repeated.

``streams`` may be given either as a list or as a template::

    streams:
      count: 8
      port_base: 9000
      template:
        generators: [{block_size: 2048000, packet_size: 2000}]
"""

from __future__ import annotations

import copy
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..patterns import GeneratorConfig
from ..receiver import RingConfig
from ..sender import StopCondition, StreamConfig
from ..topology import PRESETS, AssignmentPlan, CcxLayout, ConfigError
from ..transport import DATAGRAM, RAW, FaultPlan, HostCostModel


class Phase(str, enum.Enum):
    MAX_RATE = "max-rate"
    LOSSLESS_RATE = "lossless-rate"
    SIZE_SWEEP = "size-sweep"
    ASSIGNMENT_SEARCH = "assign-search"
    SOAK = "soak"
    FAULT_ORACLE = "fault-oracle"


TRANSPORTS = ("loopback", "udp", "raw")


@dataclass
class ExperimentConfig:
    phase: Phase
    streams: list[StreamConfig]
    stop: StopCondition = field(default_factory=StopCondition)
    placement: AssignmentPlan | None = None
    core_map: dict[int, list[int]] | None = None
    ccx: int = 0
    layout: CcxLayout = field(default_factory=CcxLayout)
    transport: str = "loopback"
    frame_mode: str = DATAGRAM  # loopback only: carry bare datagrams or full frames
    interface: str | None = None  # raw transport
    simulate: HostCostModel | None = None  # virtual-clock host model instead of real time
    faults: FaultPlan | None = None
    ring: RingConfig = field(default_factory=RingConfig)
    burst_size: int = 256
    seed: int = 0
    output_dir: str = "results"
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.frame_mode not in (DATAGRAM, RAW):
            raise ConfigError(f"frame_mode must be {DATAGRAM!r} or {RAW!r}")
        if self.transport == "raw" and not self.interface:
            raise ConfigError("raw transport needs an interface")
        if self.faults is not None and (self.transport != "loopback" or self.simulate is not None):
            raise ConfigError("fault injection runs on the plain loopback transport only")
        ports = [s.port for s in self.streams]
        if len(set(ports)) != len(ports):
            raise ConfigError("stream ports must be distinct")
        for s in self.streams:
            s.validate()
        if self.burst_size < 1:
            raise ConfigError("burst_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "streams": [s.to_dict() for s in self.streams],
            "stop": self.stop.to_dict(),
            "placement": self.placement.to_dict() if self.placement else None,
            "core_map": {int(k): list(v) for k, v in self.core_map.items()} if self.core_map else None,
            "ccx": self.ccx,
            "layout": {"physical_cores": self.layout.physical_cores,
                       "logical_per_physical": self.layout.logical_per_physical,
                       "interrupt_position": self.layout.interrupt_position},
            "transport": self.transport,
            "frame_mode": self.frame_mode,
            "interface": self.interface,
            "simulate": _cost_to_dict(self.simulate),
            "faults": self.faults.to_dict() if self.faults else None,
            "ring": self.ring.to_dict(),
            "burst_size": self.burst_size,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "params": copy.deepcopy(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            phase = Phase(d.pop("phase"))
        except KeyError:
            raise ConfigError("config needs a 'phase'") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        try:
            cfg = cls(
                phase=phase,
                streams=_streams(d.pop("streams", [])),
                stop=StopCondition.from_dict(d.pop("stop", None)),
                placement=_placement(d.pop("placement", None)),
                core_map=_core_map(d.pop("core_map", None)),
                layout=CcxLayout(**(d.pop("layout", None) or {})),
                simulate=_cost(d.pop("simulate", None)),
                faults=FaultPlan(**d.pop("faults")) if d.get("faults") else None,
                ring=RingConfig(**(d.pop("ring", None) or {})),
                params=dict(d.pop("params", None) or {}),
                **{k: v for k, v in d.items() if v is not None and k != "faults"},
            )
        except ConfigError:
            raise
        except (TypeError, KeyError, ValueError, AttributeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        cfg.validate()
        return cfg

    def with_overrides(self, seed=None, duration=None, packets=None, transport=None, out=None) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.seed = seed
            if cfg.faults is not None:
                cfg.faults = FaultPlan(**{**cfg.faults.to_dict(), "seed": seed})
        if duration is not None:
            cfg.stop = StopCondition(duration_s=duration)
        if packets is not None:
            cfg.stop = StopCondition(packets=packets)
        if transport is not None:
            cfg.transport = transport
        if out is not None:
            cfg.output_dir = str(out)
        cfg.validate()
        return cfg


def _streams(spec) -> list[StreamConfig]:
    if isinstance(spec, dict):
        count = int(spec["count"])
        base = int(spec.get("port_base", 9000))
        first_id = int(spec.get("first_stream_id", 0))
        out = []
        for i in range(count):
            t = copy.deepcopy(spec["template"])
            t.setdefault("stream_id", first_id + i)
            t.setdefault("port", base + i)
            out.append(StreamConfig.from_dict(t))
        return out
    return [StreamConfig.from_dict(s) for s in spec]


def _placement(spec) -> AssignmentPlan | None:
    if spec is None:
        return None
    if isinstance(spec, str):
        try:
            return PRESETS[spec]
        except KeyError:
            raise ConfigError(f"unknown placement preset {spec!r}; known: {sorted(PRESETS)}") from None
    return AssignmentPlan.from_dict(spec)


def _core_map(spec) -> dict[int, list[int]] | None:
    if not spec:
        return None
    return {int(k): [int(c) for c in v] for k, v in spec.items()}


def _cost(spec) -> HostCostModel | None:
    if not spec:
        return None
    return HostCostModel(**spec)


def _cost_to_dict(cost: HostCostModel | None) -> dict | None:
    if cost is None:
        return None
    return {"base_ns": cost.base_ns, "segment_ns": cost.segment_ns,
            "segment_bytes": cost.segment_bytes, "queue_depth": cost.queue_depth}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` and ``7.5e9`` as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d[\d_]*(?:\.[\d_]*)?|\.\d[\d_]*)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def loads(text: str) -> ExperimentConfig:
    data = yaml.load(text, Loader=_Loader)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return ExperimentConfig.from_dict(data)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def save(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg))
    return path


def single_stream(packet_size: int = 64, block_size: int = 16384, port: int = 9000, stream_id: int = 0,
                  **gen) -> StreamConfig:
    return StreamConfig(stream_id, port, [GeneratorConfig(block_size, packet_size, **gen)])
