"""读取并校验场景配置文件 (TOML)，构建几何、边界算子与初始密度。"""
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt, ValidationError, \
    model_validator

from boundary_operators import BoundaryOperatorSpec
from config import EXPANSION_DEFAULTS, HONESTY_DEFAULTS, REPORT_CONFIG, SCENARIO_DIR
from densities import PiecewiseDensity, sample_ensemble
from errors import ScenarioConfigError
from geometry import ConvexBilliard, ConvexPolygon, Disk, IntervalUnion, VelocitySpec

logger = logging.getLogger(__name__)

Pair = tuple[float, float]


class _Block(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


# ---------------------------------------------------------------------------
# 各配置块
# ---------------------------------------------------------------------------

class ScenarioMeta(_Block):
    name: str
    description: str = ''


class VelocityBlock(_Block):
    kind: Literal['speeds', 'annulus'] = 'speeds'
    speeds: list[PositiveFloat] = [1.0]
    weights: list[NonNegativeFloat] = [1.0]
    min_speed: PositiveFloat = 1.0
    max_speed: PositiveFloat = 1.0

    @model_validator(mode='after')
    def _check(self):
        if self.kind == 'speeds' and len(self.speeds) != len(self.weights):
            raise ValueError("speeds and weights must have the same length")
        if self.kind == 'annulus' and self.min_speed > self.max_speed:
            raise ValueError("min_speed must not exceed max_speed")
        return self


class IntervalGeometry(_Block):
    kind: Literal['interval-union']
    rule: Literal['uniform', 'geometric', 'explicit'] = 'uniform'
    offset: float = 0.0
    spacing: PositiveFloat = 2.0
    width: PositiveFloat = 1.0
    ratio: float = Field(0.5, gt=0, le=1)
    intervals: list[Pair] = []

    @model_validator(mode='after')
    def _check(self):
        if self.rule == 'explicit' and not self.intervals:
            raise ValueError("explicit rule needs a non-empty 'intervals' list")
        if self.rule != 'explicit' and self.width >= self.spacing:
            raise ValueError("width must be smaller than spacing")
        return self


class BilliardGeometry(_Block):
    kind: Literal['billiard']
    shape: Literal['disk', 'polygon'] = 'disk'
    center: Pair = (0.0, 0.0)
    radius: PositiveFloat = 1.0
    vertices: list[Pair] = []
    velocity: VelocityBlock = VelocityBlock()

    @model_validator(mode='after')
    def _check(self):
        if self.shape == 'polygon' and len(self.vertices) < 3:
            raise ValueError("polygon needs at least three vertices")
        return self


class KernelRow(_Block):
    source: int = Field(alias='from', ge=0)
    to: list[tuple[int, NonNegativeFloat]]


class BoundaryBlock(_Block):
    kind: Literal['shift', 'kernel', 'specular'] = 'shift'
    r: float = Field(1.0, gt=0, le=1)
    rows: list[KernelRow] = []


class DensityBlock(_Block):
    kind: Literal['piecewise', 'ensemble'] = 'piecewise'
    pieces: list[tuple[float, float, float]] = []
    n_particles: PositiveInt = 100_000
    seed: Optional[int] = None
    mass: PositiveFloat = 1.0
    center: Optional[Pair] = None
    radius: Optional[PositiveFloat] = None

    @model_validator(mode='after')
    def _check(self):
        if self.kind == 'ensemble' and self.seed is None:
            raise ValueError("an ensemble needs a seed")
        if (self.center is None) != (self.radius is None):
            raise ValueError("give both center and radius of the sampling disk, or neither")
        return self


class RunBlock(_Block):
    times: list[NonNegativeFloat] = Field(min_length=1)
    tol: PositiveFloat = EXPANSION_DEFAULTS['tol']
    n_cap: PositiveInt = EXPANSION_DEFAULTS['n_cap']
    lambdas: list[PositiveFloat] = []
    windows: list[Pair] = []
    honesty_windows: list[Pair] = []
    window_samples: int = Field(HONESTY_DEFAULTS['window_samples'], ge=2)
    oracle_particles: int = Field(0, ge=0)
    dump_ensemble: bool = False
    output_dir: Optional[str] = None

    @model_validator(mode='after')
    def _check(self):
        for s, t in self.windows + self.honesty_windows:
            if not 0 <= s <= t:
                raise ValueError(f"window ({s}, {t}) must satisfy 0 <= s <= t")
        return self


class ScenarioConfig(_Block):
    scenario: ScenarioMeta
    geometry: Annotated[Union[IntervalGeometry, BilliardGeometry], Field(discriminator='kind')]
    boundary: BoundaryBlock = BoundaryBlock()
    density: DensityBlock = DensityBlock()
    run: RunBlock


# ---------------------------------------------------------------------------
# 构建好的场景
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    geometry: object
    spec: BoundaryOperatorSpec
    density: object
    source: str

    @property
    def name(self):
        return self.config.scenario.name

    @property
    def run(self):
        return self.config.run

    @property
    def is_billiard(self):
        return isinstance(self.geometry, ConvexBilliard)

    @property
    def output_dir(self):
        return self.run.output_dir or os.path.join(REPORT_CONFIG['output_dir'], self.name)


def list_builtin():
    """内置场景名称列表"""
    if not os.path.isdir(SCENARIO_DIR):
        return []
    return sorted(os.path.splitext(f)[0] for f in os.listdir(SCENARIO_DIR) if f.endswith('.toml'))


def resolve_path(source):
    """接受文件路径或内置场景名"""
    if os.path.isfile(source):
        return source
    builtin = os.path.join(SCENARIO_DIR, f"{source}.toml")
    if os.path.isfile(builtin):
        return builtin
    raise ScenarioConfigError('scenario', f"no file or built-in scenario named {source!r} "
                                          f"(built-ins: {', '.join(list_builtin())})")


def _apply_overrides(raw, overrides):
    # 键为点分路径，如 'run.tol'
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split('.')
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return raw


def _field_path(error):
    parts = [str(p) for p in error['loc'] if p not in ('interval-union', 'billiard')]
    return '.'.join(parts) or 'scenario'


def _cross_check(config):
    # 跨配置块的一致性检查，逐条指明出错字段
    billiard = config.geometry.kind == 'billiard'
    if billiard != (config.boundary.kind == 'specular'):
        raise ScenarioConfigError('boundary.kind', "billiards take 'specular', interval unions 'shift' or 'kernel'")
    if billiard != (config.density.kind == 'ensemble'):
        raise ScenarioConfigError('density.kind', "billiards start from 'ensemble', interval unions from 'piecewise'")
    if billiard:
        for name in ('lambdas', 'honesty_windows', 'oracle_particles'):
            if getattr(config.run, name):
                raise ScenarioConfigError(f'run.{name}', "only available on interval unions")
    elif not config.density.pieces:
        raise ScenarioConfigError('density.pieces', "must not be empty")
    if config.boundary.kind == 'kernel' and not config.boundary.rows:
        raise ScenarioConfigError('boundary.rows', "a kernel boundary needs rows")
    return config


def parse_config(raw, overrides=None):
    """字典 -> ScenarioConfig；校验失败时抛出带字段路径的 ScenarioConfigError"""
    try:
        config = ScenarioConfig.model_validate(_apply_overrides(raw, overrides))
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ScenarioConfigError(_field_path(first), first['msg']) from exc
    return _cross_check(config)


def load_scenario(source, overrides=None):
    """读取 TOML 场景文件并构建全部对象"""
    path = resolve_path(source)
    logger.info("loading scenario from %s", path)
    try:
        with open(path, 'rb') as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioConfigError('scenario', f"cannot parse {path}: {exc}") from exc
    return build_scenario(parse_config(raw, overrides), source=path)


def build_scenario(config, source=''):
    geometry = _build_geometry(config.geometry)
    spec = _build_boundary(config.boundary, geometry)
    density = _build_density(config.density, geometry)
    return Scenario(config, geometry, spec, density, source)


def _build_geometry(block):
    try:
        if block.kind == 'interval-union':
            if block.rule == 'uniform':
                return IntervalUnion.uniform(block.spacing, block.width, block.offset)
            if block.rule == 'geometric':
                return IntervalUnion.geometric(block.spacing, block.width, block.ratio, block.offset)
            return IntervalUnion(intervals=tuple(tuple(p) for p in block.intervals), name='explicit')
        if block.shape == 'disk':
            domain = Disk(tuple(block.center), block.radius)
        else:
            domain = ConvexPolygon(tuple(tuple(v) for v in block.vertices))
        v = block.velocity
        velocity = VelocitySpec(v.kind, tuple(v.speeds), tuple(v.weights), v.min_speed, v.max_speed)
        return ConvexBilliard(domain, velocity)
    except ValueError as exc:
        raise ScenarioConfigError('geometry', str(exc)) from exc


def _build_boundary(block, geometry):
    rows = tuple((row.source, tuple(row.to)) for row in block.rows)
    for k, row in rows:
        for j in (k, *(j for j, _ in row)):
            if isinstance(geometry, IntervalUnion) and not geometry.has(j):
                raise ScenarioConfigError('boundary.rows', f"interval {j} does not exist")
    try:
        return BoundaryOperatorSpec(block.kind, block.r, rows)
    except ValueError as exc:
        raise ScenarioConfigError('boundary', str(exc)) from exc


def _build_density(block, geometry):
    try:
        if block.kind == 'piecewise':
            return PiecewiseDensity.from_pieces(geometry, block.pieces)
        region = None if block.center is None else (tuple(block.center), block.radius)
        return sample_ensemble(geometry, block.n_particles, block.seed, mass=block.mass, region=region)
    except ValueError as exc:
        field = 'density.pieces' if block.kind == 'piecewise' else 'density.radius'
        raise ScenarioConfigError(field, str(exc)) from exc
