"""Scenario configuration: one JSON file drives a whole reproducible run.

The schema is versioned and strict: unknown fields are rejected with their
full path, every value is validated by the owning module's dataclass, and
the seed is mandatory at the top level (runs never draw wall-clock
entropy).  All sections are optional and default to the module defaults;
the seed is threaded into every subsystem from the single top-level value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .controller import ControllerParams, make_link
from .epidemic import WorldConfig
from .escrow import PenaltyPolicy
from .sensing import CombineRule, DetectorConfig

SCHEMA_VERSION = 1

DEFAULT_ANCHORS = [(0.0, 0.0), (20.0, 0.0), (0.0, 10.0), (20.0, 10.0)]


class ConfigError(ValueError):
    """Invalid scenario configuration; the message carries the field path."""


@dataclass
class EscrowConfig:
    policy: PenaltyPolicy = PenaltyPolicy.ADAPTIVE
    rho: float = 0.5
    initial_balance: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.initial_balance < 0:
            raise ValueError("initial_balance must be >= 0")


@dataclass
class HilConfig:
    """Hardware-in-the-loop bridge: which agent is replayed and how noisy
    the synthetic ranging exchanges are."""
    agent_index: int = 0
    ranging_jitter: float = 2.5e-10   # seconds of timestamp jitter
    reply_delay: float = 5e-9
    final_delay: float = 7e-9

    def __post_init__(self):
        if self.agent_index < 0:
            raise ValueError("agent_index must be >= 0")
        if self.ranging_jitter < 0:
            raise ValueError("ranging_jitter must be >= 0")


@dataclass
class OutputConfig:
    directory: str = "out"
    agent_trace: bool = False   # per-agent per-step trace CSV (large)


@dataclass
class ScenarioConfig:
    seed: int
    steps: int = 100
    world: WorldConfig = field(default_factory=WorldConfig)
    controller: ControllerParams = field(default_factory=ControllerParams)
    escrow: EscrowConfig = field(default_factory=EscrowConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    anchors: list[tuple[float, float]] = field(
        default_factory=lambda: list(DEFAULT_ANCHORS))
    hil: HilConfig = field(default_factory=HilConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps: must be >= 1")
        if len(self.anchors) < 3:
            raise ConfigError("anchors: at least 3 anchors required")
        if self.hil.agent_index >= self.world.n_agents:
            raise ConfigError("hil.agent_index: no such agent")


def _build_section(cls, doc: dict, path: str, **fixed):
    """Instantiate a config dataclass from a JSON object, strictly."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = {f.name for f in fields(cls)} - set(fixed)
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    try:
        return cls(**doc, **fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_world(doc: dict, seed: int) -> WorldConfig:
    doc = dict(doc)
    if "room" in doc:
        room = doc["room"]
        if (not isinstance(room, (list, tuple)) or len(room) != 2):
            raise ConfigError("world.room: expected [width, height]")
        doc["room"] = (float(room[0]), float(room[1]))
    return _build_section(WorldConfig, doc, "world", seed=seed)


def _parse_controller(doc: dict) -> ControllerParams:
    doc = dict(doc)
    link_spec = doc.pop("link", None)
    try:
        link = make_link(link_spec)
    except ValueError as exc:
        raise ConfigError(f"controller.link: {exc}") from exc
    return _build_section(ControllerParams, doc, "controller", link=link)


def _parse_escrow(doc: dict) -> EscrowConfig:
    doc = dict(doc)
    if "policy" in doc:
        try:
            doc["policy"] = PenaltyPolicy(doc["policy"])
        except ValueError:
            raise ConfigError(
                f"escrow.policy: unknown policy {doc['policy']!r}; expected one "
                f"of {[p.value for p in PenaltyPolicy]}") from None
    return _build_section(EscrowConfig, doc, "escrow")


def _parse_detector(doc: dict) -> DetectorConfig:
    doc = dict(doc)
    if "combine" in doc:
        try:
            doc["combine"] = CombineRule(str(doc["combine"]).lower())
        except ValueError:
            raise ConfigError(
                f"detector.combine: expected 'and' or 'or', "
                f"got {doc['combine']!r}") from None
    return _build_section(DetectorConfig, doc, "detector")


def _parse_anchors(doc) -> list[tuple[float, float]]:
    if not isinstance(doc, list):
        raise ConfigError("anchors: expected a list of [x, y] pairs")
    out = []
    for i, item in enumerate(doc):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"anchors[{i}]: expected [x, y]")
        out.append((float(item[0]), float(item[1])))
    return out


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    known = {"version", "seed", "steps", "world", "controller", "escrow",
             "detector", "anchors", "hil", "outputs"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"version: unsupported schema version {version}")
    if "seed" not in doc:
        raise ConfigError("seed: required (runs never use wall-clock entropy)")
    seed = doc["seed"]
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")
    try:
        steps = int(doc.get("steps", 100))
    except (TypeError, ValueError):
        raise ConfigError("steps: must be an integer") from None
    return ScenarioConfig(
        seed=seed,
        steps=steps,
        world=_parse_world(doc.get("world", {}), seed),
        controller=_parse_controller(doc.get("controller", {})),
        escrow=_parse_escrow(doc.get("escrow", {})),
        detector=_parse_detector(doc.get("detector", {})),
        anchors=(_parse_anchors(doc["anchors"]) if "anchors" in doc
                 else list(DEFAULT_ANCHORS)),
        hil=_build_section(HilConfig, doc.get("hil", {}), "hil"),
        outputs=_build_section(OutputConfig, doc.get("outputs", {}), "outputs"),
    )


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)
