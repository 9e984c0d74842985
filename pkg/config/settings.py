"""Run configuration: INI files validated section by section.

Sections [model], [train], [data] and [run] are required; [gradcheck],
[stability], [cost] and [sweep] are optional. Unknown sections or keys are
rejected. The dataset root may be overridden through EP_DATA_ROOT (process
environment or a `.env` file).
"""
import configparser
import logging
import os
from pathlib import Path
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config.constants import (
    ENV_DATA_ROOT,
    GRADCHECK_BETAS,
    GRADCHECK_THRESHOLD,
    ORACLE_EPSILON,
    ORACLE_RELAX_STEPS,
    ORACLE_RESIDUAL_TOL,
    STABILITY_SAMPLES,
    STABILITY_WINDOW,
    SWEEP_KAPPAS,
    SWEEP_SAMPLES,
)
from exceptions import ConfigError
from models.topology import build_topology
from training.oracle import OracleConfig
from training.trainer import TrainConfig

load_dotenv()

logger = logging.getLogger(__name__)

MNIST_FILES = ('train_images', 'train_labels', 'test_images', 'test_labels')


def _split(value, cast):
    if isinstance(value, str):
        return tuple(cast(part.strip()) for part in value.split(',') if part.strip())
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True, populate_by_name=True)


class ModelSection(_Section):
    input_shape: tuple[int, ...]
    hidden: tuple[str, ...] = ()
    n_classes: int = Field(gt=0)
    n_perclass: int = Field(default=1, ge=1)
    kappa: float = Field(gt=0)
    init_gain: float = Field(default=1.0, gt=0)
    init_nonnegative: bool = False

    @field_validator('input_shape', mode='before')
    @classmethod
    def _shape(cls, value):
        return _split(value, int)

    @field_validator('hidden', mode='before')
    @classmethod
    def _layers(cls, value):
        return _split(value, str)


class TrainSection(_Section):
    lam: float = Field(alias='lambda', gt=0, le=1)
    t_free: int = Field(gt=0)
    t_nudge: int = Field(gt=0)
    beta: float = Field(gt=0)
    bias_mode: Literal['random_sign', 'three_phase'] = 'random_sign'
    optimizer: Literal['sgd', 'adamw'] = 'sgd'
    learning_rate: float = Field(ge=0)
    weight_decay: float = Field(default=0.0, ge=0)
    batch_size: int = Field(default=1, ge=1)
    epochs: int = Field(default=1, ge=0)
    dynamics: Literal['stochastic', 'meanfield'] = 'stochastic'
    carry_state: Literal['nudged', 'reset'] = 'nudged'


class DataSection(_Section):
    dataset: Literal['mnist', 'moving_bar', 'random'] = 'mnist'
    root: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_subset: Optional[int] = Field(default=None, gt=0)
    test_subset: Optional[int] = Field(default=None, gt=0)
    n_train: int = Field(default=64, gt=0)
    n_test: int = Field(default=32, gt=0)
    frames: int = Field(default=5, ge=2)
    size: int = Field(default=8, gt=2)

    def resolve(self, key):
        """Absolute path of a dataset file key, honouring the data root."""
        value = getattr(self, key)
        if value is None:
            raise ConfigError(f"[data] {key} is required for the {self.dataset} dataset", key=key)
        path = Path(value)
        root = os.getenv(ENV_DATA_ROOT) or self.root
        if not path.is_absolute() and root:
            path = Path(root) / path
        return path

    def require_files(self, keys=MNIST_FILES):
        """Fail fast unless every listed dataset file exists."""
        if self.dataset != 'mnist':
            return {}
        paths = {}
        for key in keys:
            path = self.resolve(key)
            if not path.is_file():
                raise ConfigError(f"[data] {key}: file not found: {path}", key=key)
            paths[key] = path
        return paths


class RunSection(_Section):
    seed: int = Field(default=0, ge=0)
    out_dir: str = 'runs'
    workers: int = Field(default=1, ge=1)
    shard_size: int = Field(default=1, ge=1)
    log_level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = 'INFO'
    progress: bool = False
    checkpoint: Optional[str] = None


class GradcheckSection(_Section):
    threshold: float = GRADCHECK_THRESHOLD
    beta: float = Field(default=0.01, gt=0)
    betas: tuple[float, ...] = GRADCHECK_BETAS
    epsilon: float = Field(default=ORACLE_EPSILON, gt=0)
    relax_steps: int = Field(default=ORACLE_RELAX_STEPS, ge=1)
    residual_tol: float = Field(default=ORACLE_RESIDUAL_TOL, gt=0)
    n_samples: int = Field(default=2, gt=0)

    @field_validator('betas', mode='before')
    @classmethod
    def _betas(cls, value):
        return _split(value, float)


class StabilitySection(_Section):
    n_samples: int = Field(default=STABILITY_SAMPLES, gt=0)
    window: int = Field(default=STABILITY_WINDOW, gt=0)
    layer: int = Field(default=1, gt=0)
    spike_rasters: bool = False


class CostSection(_Section):
    ifr: Optional[tuple[float, ...]] = None
    bidirectional: bool = True
    n_samples: int = Field(default=128, gt=0)

    @field_validator('ifr', mode='before')
    @classmethod
    def _rates(cls, value):
        return _split(value, float)


class SweepSection(_Section):
    kappas: tuple[float, ...] = SWEEP_KAPPAS
    n_samples: int = Field(default=SWEEP_SAMPLES, gt=0)
    perclass: tuple[int, ...] = ()

    @field_validator('kappas', mode='before')
    @classmethod
    def _kappas(cls, value):
        return _split(value, float)

    @field_validator('perclass', mode='before')
    @classmethod
    def _perclass(cls, value):
        return _split(value, int)


SECTIONS = {
    'model': ModelSection,
    'train': TrainSection,
    'data': DataSection,
    'run': RunSection,
    'gradcheck': GradcheckSection,
    'stability': StabilitySection,
    'cost': CostSection,
    'sweep': SweepSection,
}
REQUIRED_SECTIONS = ('model', 'train', 'data', 'run')


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: ModelSection
    train: TrainSection
    data: DataSection
    run: RunSection
    gradcheck: GradcheckSection = GradcheckSection()
    stability: StabilitySection = StabilitySection()
    cost: CostSection = CostSection()
    sweep: SweepSection = SweepSection()
    source: Optional[str] = None

    def train_config(self):
        return TrainConfig(
            kappa=self.model.kappa,
            n_perclass=self.model.n_perclass,
            seed=self.run.seed,
            workers=self.run.workers,
            shard_size=self.run.shard_size,
            progress=self.run.progress,
            **self.train.model_dump(by_alias=True),
        )

    def oracle_config(self):
        return OracleConfig(
            epsilon=self.gradcheck.epsilon,
            relax_steps=self.gradcheck.relax_steps,
            residual_tol=self.gradcheck.residual_tol,
            lam=self.train.lam,
        )

    def topology(self, n_perclass=None):
        n_perclass = self.model.n_perclass if n_perclass is None else n_perclass
        return build_topology(self.model.input_shape, self.model.hidden, self.model.n_classes, n_perclass)

    @property
    def out_dir(self):
        return Path(self.run.out_dir)


def _section_error(section, err):
    first = err.errors()[0]
    key = '.'.join(str(part) for part in first['loc']) or section
    return ConfigError(f"[{section}] {key}: {first['msg']}", key=key)


def parse_config(text, source=None, overrides=None):
    """Validate INI text; `overrides` maps 'section.key' to replacement values."""
    parser = configparser.ConfigParser(delimiters=('=',), inline_comment_prefixes=('#',), interpolation=None)
    try:
        parser.read_string(text, source=source or '<config>')
    except configparser.Error as err:
        raise ConfigError(f"cannot parse {source or 'config'}: {err}") from err

    raw = {name: dict(parser.items(name)) for name in parser.sections()}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split('.', 1)
        raw.setdefault(section, {})[key] = value

    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]", key=unknown[0])
    for name in REQUIRED_SECTIONS:
        if name not in raw:
            raise ConfigError(f"missing section [{name}]", key=name)

    sections = {}
    for name, values in raw.items():
        try:
            sections[name] = SECTIONS[name].model_validate(values)
        except ValidationError as err:
            raise _section_error(name, err) from err

    config = RunConfig(source=source, **sections)
    try:
        config.topology()
        config.train_config()
    except ValidationError as err:
        raise _section_error('train', err) from err
    except ValueError as err:
        raise ConfigError(f"[model] {err}", key='hidden') from err
    return config


def load_config(path, overrides=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", key='config')
    config = parse_config(path.read_text(), str(path), overrides)
    logger.debug("loaded config %s", path)
    return config
