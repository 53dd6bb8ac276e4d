"""
Pydantic models for scenario configuration and run arguments.
Every section carries the documented defaults; unknown keys are rejected.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .frameworks import FRAMEWORK_NAMES


class ScenarioError(ValueError):
    """Raised when scenario text is malformed or violates an invariant."""


class StrictModel(BaseModel):
    """Base class: immutable, unknown keys rejected."""
    model_config = ConfigDict(extra='forbid', frozen=True)


class SpecDecodeConfig(StrictModel):
    """Speculative decoding parameters."""
    eta: float = Field(0.6, ge=0.0, le=1.0, description="Drafting threshold")
    max_draft: int = Field(8, ge=1, description="Cap on draft length")
    k: int = Field(3, ge=1, description="Top-k candidates for parallel drafting")


class MonitorConfig(StrictModel):
    """State monitoring parameters."""
    alpha: float = Field(0.8, ge=0.0, le=1.0, description="EMA retention factor")
    bin_width: int = Field(16, ge=1, description="Tokens per delay-predictor bin")
    default_delay: float = Field(0.025, gt=0.0, description="Seconds answered before any observation")


class CloudProfile(StrictModel):
    """Cloud middle-submodel deployment and its ground-truth delay model."""
    P: int = Field(4, ge=1, description="Pipeline length (stages)")
    d0: float = Field(0.025, gt=0.0, description="Base batch delay in seconds")
    n_sat: int = Field(64, ge=1, description="Batched tokens before the delay grows")
    slope: float = Field(1.285e-4, ge=0.0, description="Seconds per token beyond saturation")
    A: int = Field(8192, gt=0, description="Hidden-state bytes per token")
    max_batch_tokens: Optional[int] = Field(None, ge=1, description="Optional cap on batched token size")


class DeviceMode(StrictModel):
    """Computing/communication mode of a device."""
    compute_scale: float = Field(1.0, gt=0.0, description="Multiplier on all device compute delays")
    bandwidth_scale: float = Field(1.0, gt=0.0, description="Multiplier on both link bandwidths")


class DeviceSpec(StrictModel):
    """Device profile; ``count`` replicates it."""
    name: Optional[str] = Field(None, description="Label for reports")
    count: int = Field(1, ge=1, description="Number of identical devices")
    shallow_per_token_s: float = Field(4.39e-5, gt=0.0, description="Shallow-layer seconds per token")
    head_s: float = Field(5e-4, gt=0.0, description="Output head seconds per invocation")
    draft_step_s: float = Field(5e-3, gt=0.0, description="Draft model seconds per step")
    uplink_bps: float = Field(8e6, gt=0.0, description="Uplink bytes per second")
    downlink_bps: float = Field(12e6, gt=0.0, description="Downlink bytes per second")
    modes: List[DeviceMode] = Field(default_factory=list, description="Available modes")
    mode_schedule: Optional[List[int]] = Field(None, description="Cyclic mode indices per switch period")
    random_modes: bool = Field(False, description="Pick a seeded random mode each switch period")
    switch_every: int = Field(5, ge=1, description="Requests generated between mode switches")

    @model_validator(mode='after')
    def check_modes(self):
        if self.mode_schedule is not None:
            if not self.mode_schedule:
                raise ValueError("mode_schedule must not be empty")
            bad = [i for i in self.mode_schedule if not 0 <= i < len(self.modes)]
            if bad:
                raise ValueError(f"mode_schedule indices {bad} out of range for {len(self.modes)} modes")
        if self.random_modes and not self.modes:
            raise ValueError("random_modes requires at least one mode")
        return self


class PromptLengths(StrictModel):
    """Prompt-length distribution."""
    kind: Literal['fixed', 'lognormal', 'specbench', 'cnndm'] = Field('specbench')
    value: Optional[int] = Field(None, ge=1, description="Length for kind=fixed")
    mean: Optional[float] = Field(None, gt=0.0, description="Mean for kind=lognormal")
    std: Optional[float] = Field(None, gt=0.0, description="Std for kind=lognormal")
    min_len: int = Field(8, ge=1)
    max_len: int = Field(4096, ge=1)

    @model_validator(mode='after')
    def check_kind(self):
        if self.kind == 'fixed' and self.value is None:
            raise ValueError("kind=fixed requires value")
        if self.kind == 'lognormal' and (self.mean is None or self.std is None):
            raise ValueError("kind=lognormal requires mean and std")
        if self.min_len > self.max_len:
            raise ValueError(f"min_len {self.min_len} exceeds max_len {self.max_len}")
        return self


class ExplicitArrival(StrictModel):
    """A request injected at a fixed time, in addition to Poisson arrivals."""
    device: int = Field(..., ge=0)
    time: float = Field(..., ge=0.0)
    prompt_len: int = Field(..., ge=1)


class Workload(StrictModel):
    """Request generation and corpus."""
    rate: float = Field(..., ge=0.0, description="System-wide requests per second")
    horizon: float = Field(..., gt=0.0, description="Arrival horizon in seconds")
    prompt_lengths: PromptLengths = Field(default_factory=PromptLengths)
    max_new: int = Field(128, ge=1, description="Maximum generated tokens per request")
    explicit_arrivals: List[ExplicitArrival] = Field(default_factory=list)
    corpus_text: Optional[str] = Field(None, description="Whitespace-separated token text")
    corpus_seed: int = Field(0, ge=0, description="Seed of the synthetic corpus")
    corpus_tokens: int = Field(20000, ge=2, description="Synthetic corpus length")
    vocab_size: int = Field(48, ge=3, description="Synthetic vocabulary size incl. EOS")


class ModelConfig(StrictModel):
    """Toy target/draft models."""
    target_order: int = Field(2, ge=0)
    draft_order: int = Field(1, ge=0)
    smoothing: float = Field(0.0, ge=0.0)
    w_ce: float = Field(0.1, ge=0.0, description="Cross-entropy weight used by the distill-loss verb")


class SlaConfig(StrictModel):
    """Service level agreements."""
    prefill_s_per_128: float = Field(0.2, gt=0.0, description="TTFT budget per 128 prompt tokens")
    decode_s_per_10: float = Field(0.5, gt=0.0, description="Budget per 10 generated tokens")


class Scenario(StrictModel):
    """Full experiment description."""
    devices: List[DeviceSpec] = Field(..., min_length=1)
    cloud: CloudProfile = Field(default_factory=CloudProfile)
    workload: Workload
    model: ModelConfig = Field(default_factory=ModelConfig)
    framework: str = Field('hat', description="Framework variant")
    fixed_chunk_size: int = Field(128, ge=1, description="Chunk size of the fixed-chunk variant")
    specdec: SpecDecodeConfig = Field(default_factory=SpecDecodeConfig)
    monitor: MonitorConfig = Field(default_factory=MonitorConfig)
    slas: SlaConfig = Field(default_factory=SlaConfig)
    seed: int = Field(0, ge=0)

    @field_validator('framework')
    @classmethod
    def check_framework(cls, v):
        if v not in FRAMEWORK_NAMES:
            raise ValueError(f"unknown framework {v!r}, expected one of {sorted(FRAMEWORK_NAMES)}")
        return v

    @model_validator(mode='after')
    def check_arrival_devices(self):
        n = self.num_devices
        bad = [a.device for a in self.workload.explicit_arrivals if a.device >= n]
        if bad:
            raise ValueError(f"explicit arrival devices {bad} out of range for {n} devices")
        return self

    @property
    def num_devices(self) -> int:
        return sum(d.count for d in self.devices)

    def expanded_devices(self) -> List[DeviceSpec]:
        return [spec for spec in self.devices for _ in range(spec.count)]


class SweepAxis(StrictModel):
    key: str = Field(..., min_length=1, description="Dotted scenario path, 'framework' or 'seed'")
    values: List[Any] = Field(..., min_length=1)


class RunArgs(StrictModel):
    """Arguments of one CLI execution."""
    scenario_path: Path
    seed: Optional[int] = Field(None, ge=0)
    framework: Optional[str] = None
    out_dir: Path = Path('./results')
    sweeps: List[SweepAxis] = Field(default_factory=list)
    event_log: bool = False
    jobs: int = Field(1, ge=1)
    db_path: Optional[Path] = None


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = '.'.join(str(p) for p in err['loc']) or '<root>'
        parts.append(f"{loc}: {err['msg']}")
    return '; '.join(parts)


def parse_scenario(text: str) -> Scenario:
    """Parse JSON scenario text, filling defaults and validating invariants."""
    try:
        return Scenario.model_validate_json(text)
    except ValidationError as e:
        raise ScenarioError(_format_errors(e)) from None


def load_scenario(path: Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding='utf-8'))


def serialize_scenario(scenario: Scenario) -> str:
    return scenario.model_dump_json(indent=2)


def default_scenario() -> Scenario:
    """A minimal scenario with every default filled."""
    return Scenario(devices=[DeviceSpec()], workload=Workload(rate=6.0, horizon=60.0))


def parse_sweep(spec: str) -> SweepAxis:
    """Parse ``key=v1,v2``; values are JSON scalars when they parse, else strings."""
    if '=' not in spec:
        raise ScenarioError(f"sweep {spec!r} must look like key=v1,v2")
    key, raw = spec.split('=', 1)
    values = []
    for item in raw.split(','):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(json.loads(item))
        except json.JSONDecodeError:
            values.append(item)
    try:
        return SweepAxis(key=key.strip(), values=values)
    except ValidationError as e:
        raise ScenarioError(f"sweep {spec!r}: {_format_errors(e)}") from None


def with_overrides(scenario: Scenario, overrides: Dict[str, Any]) -> Scenario:
    """Return a re-validated copy with dotted-path values replaced."""
    data = scenario.model_dump(mode='json')
    for key, value in overrides.items():
        node = data
        parts = key.split('.')
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            elif part in node:
                node = node[part]
            else:
                raise ScenarioError(f"unknown scenario path {key!r}")
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        elif last in node:
            node[last] = value
        else:
            raise ScenarioError(f"unknown scenario path {key!r}")
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(_format_errors(e)) from None
