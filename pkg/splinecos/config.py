"""Run configuration: JSON parsing, validation and source loading."""
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from splinecos.basis import Weight
from splinecos.errors import ValidationError
from splinecos.model import (BasisConfig, Family, ModelConfig, PredictorSource, PriorConfig,
                             ResponseSource, VarianceFunction, check_bernoulli)
from splinecos.sampler import SamplerConfig
from splinecos.storage_service import storage_service

logger = logging.getLogger(__name__)

EMIT_CHOICES = ("chains", "summary")


@dataclass(frozen=True)
class SourceConfig:
    id: str
    path: Path
    family: Family = Family.GAUSSIAN
    reliable: bool = False
    variance: VarianceFunction = VarianceFunction.CONSTANT
    weight: Weight = Weight.AVERAGE
    as_centroids: bool = False

    def to_dict(self) -> Dict:
        return {"id": self.id, "path": str(self.path), "family": self.family.value,
                "reliable": self.reliable, "variance": self.variance.value,
                "weight": self.weight.value, "as_centroids": self.as_centroids}


@dataclass(frozen=True)
class DataConfig:
    responses: Tuple[SourceConfig, ...]
    predictors: Tuple[SourceConfig, ...] = ()


@dataclass(frozen=True)
class OutputConfig:
    directory: Path = Path("fit_output")
    emit: Tuple[str, ...] = EMIT_CHOICES


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    data: DataConfig
    sampler: SamplerConfig
    output: OutputConfig = field(default_factory=OutputConfig)
    source: Optional[Path] = None

    def to_dict(self) -> Dict:
        return {
            "model": self.model.to_dict(),
            "data": {"responses": [s.to_dict() for s in self.data.responses],
                     "predictors": [s.to_dict() for s in self.data.predictors]},
            "sampler": asdict(self.sampler),
            "output": {"directory": str(self.output.directory), "emit": list(self.output.emit)},
        }

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None,
                       out: Optional[Union[str, Path]] = None) -> "RunConfig":
        """Apply command-line overrides; None leaves a field unchanged."""
        sampler = self.sampler
        if seed is not None:
            sampler = replace(sampler, seed=seed)
        if threads is not None:
            sampler = replace(sampler, threads=threads)
        output = self.output if out is None else replace(self.output, directory=Path(out))
        return replace(self, sampler=sampler, output=output)


_MISSING = object()


class _Reader:
    """Typed access to a JSON object that reports errors by key path."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ValidationError(f"{path or 'config'}: expected an object")
        self.data = data
        self.path = path
        self.used = set()

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def get(self, name: str, kind, default=_MISSING):
        self.used.add(name)
        if name not in self.data or (self.data[name] is None and default is not _MISSING):
            if default is _MISSING:
                raise ValidationError(f"{self.key(name)}: required")
            return default
        value = self.data[name]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (kind in (int, float) and isinstance(value, bool)):
            name_of = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            raise ValidationError(f"{self.key(name)}: expected {name_of}, got {json.dumps(value)}")
        return value

    def enum(self, name: str, enum_cls, default):
        value = self.get(name, str, default.value)
        try:
            return enum_cls(value)
        except ValueError:
            choices = ", ".join(e.value for e in enum_cls)
            raise ValidationError(f"{self.key(name)}: '{value}' is not one of {choices}") from None

    def child(self, name: str, default=_MISSING) -> "_Reader":
        return _Reader(self.get(name, dict, default), self.key(name))

    def pair(self, name: str, kind, default=_MISSING) -> tuple:
        value = self.get(name, list, default)
        if len(value) != 2:
            raise ValidationError(f"{self.key(name)}: expected two entries, got {len(value)}")
        items = []
        for i, item in enumerate(value):
            if kind is float and isinstance(item, int) and not isinstance(item, bool):
                item = float(item)
            if not isinstance(item, kind) or isinstance(item, bool):
                raise ValidationError(f"{self.key(name)}[{i}]: expected {kind.__name__}")
            items.append(item)
        return tuple(items)

    def finish(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ValidationError(f"{self.path or 'config'}: unknown keys {', '.join(unknown)}")


def _basis(reader: _Reader) -> BasisConfig:
    basis = BasisConfig(n_basis=reader.pair("n_basis", int, [20, 20]),
                        order=reader.pair("order", int, [3, 3]))
    reader.finish()
    for axis in range(2):
        if basis.order[axis] < 1 or basis.n_basis[axis] < basis.order[axis]:
            raise ValidationError(f"{reader.path}: axis {axis + 1} needs 1 <= order <= n_basis")
    return basis


def _model(reader: _Reader) -> ModelConfig:
    domain_raw = reader.get("domain", list)
    if len(domain_raw) != 2:
        raise ValidationError(f"{reader.key('domain')}: expected [[lo1, hi1], [lo2, hi2]]")
    domain = []
    for i, interval in enumerate(domain_raw):
        if (not isinstance(interval, list) or len(interval) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in interval)):
            raise ValidationError(f"{reader.key('domain')}[{i}]: expected [lo, hi]")
        if not interval[1] > interval[0]:
            raise ValidationError(f"{reader.key('domain')}[{i}]: need lo < hi, got {interval}")
        domain.append((float(interval[0]), float(interval[1])))

    basis = _basis(reader.child("basis", {}))
    predictor_basis = None
    raw = reader.get("predictor_basis", (dict, list), None)
    if isinstance(raw, dict):
        predictor_basis = (_basis(_Reader(raw, reader.key("predictor_basis"))),)
    elif isinstance(raw, list):
        predictor_basis = tuple(_basis(_Reader(item, f"{reader.key('predictor_basis')}[{i}]"))
                                for i, item in enumerate(raw))

    priors_reader = reader.child("priors", {})
    prior_kwargs = {}
    for name, default in asdict(PriorConfig()).items():
        prior_kwargs[name] = priors_reader.get(name, float, default)
        if not prior_kwargs[name] > 0:
            raise ValidationError(f"{priors_reader.key(name)}: must be positive, got {prior_kwargs[name]}")
    priors_reader.finish()

    kappa_w = reader.get("kappa_w", float, None)
    if kappa_w is not None and not kappa_w > 0:
        raise ValidationError(f"{reader.key('kappa_w')}: must be positive, got {kappa_w}")
    config = ModelConfig(
        domain=tuple(domain),
        basis=basis,
        predictor_basis=predictor_basis,
        priors=PriorConfig(**prior_kwargs),
        kappa_w=kappa_w,
        sample_kappa_w=reader.get("sample_kappa_w", bool, None),
        threshold=reader.get("threshold", float, 0.0),
    )
    reader.finish()
    return config


def _source(reader: _Reader, base: Path, response: bool) -> SourceConfig:
    path = Path(reader.get("path", str))
    if not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ValidationError(f"{reader.key('path')}: file not found: {path}")
    kwargs = dict(
        id=reader.get("id", str),
        path=path,
        variance=reader.enum("variance", VarianceFunction, VarianceFunction.CONSTANT),
        weight=reader.enum("weight", Weight, Weight.AVERAGE),
        as_centroids=reader.get("as_centroids", bool, False),
    )
    if response:
        kwargs["family"] = reader.enum("family", Family, Family.GAUSSIAN)
        kwargs["reliable"] = reader.get("reliable", bool, False)
    reader.finish()
    return SourceConfig(**kwargs)


def _data(reader: _Reader, base: Path, model: ModelConfig) -> DataConfig:
    responses = reader.get("responses", list)
    predictors = reader.get("predictors", list, [])
    reader.finish()
    data = DataConfig(
        responses=tuple(_source(_Reader(r, f"{reader.key('responses')}[{i}]"), base, True)
                        for i, r in enumerate(responses)),
        predictors=tuple(_source(_Reader(p, f"{reader.key('predictors')}[{i}]"), base, False)
                         for i, p in enumerate(predictors)),
    )
    if not data.responses:
        raise ValidationError(f"{reader.key('responses')}: at least one response source is required")
    for kind, sources in (("responses", data.responses), ("predictors", data.predictors)):
        seen = set()
        for i, source in enumerate(sources):
            if source.id in seen:
                raise ValidationError(f"{reader.key(kind)}[{i}].id: duplicate id '{source.id}'")
            seen.add(source.id)
    reliable = [i for i, r in enumerate(data.responses) if r.reliable]
    if len(reliable) != 1:
        raise ValidationError(f"{reader.key('responses')}: exactly one source must be reliable, "
                              f"got {len(reliable)}")
    if any(r.family is Family.BERNOULLI for r in data.responses):
        check_bernoulli(model, prefix="model.")
    return data


def _sampler(reader: _Reader) -> SamplerConfig:
    chains = reader.get("chains", int, 1)
    kwargs = dict(
        n_iter=reader.get("n_iter", int, 10000),
        burn_in=reader.get("burn_in", int, 2000),
        thin=reader.get("thin", int, 5),
        chains=chains,
        seed=reader.get("seed", int),
        threads=reader.get("threads", int, None),
        progress=reader.get("progress", bool, False),
    )
    reader.finish()
    try:
        return SamplerConfig(**kwargs)
    except ValidationError as e:
        raise ValidationError(f"{reader.path}: {e}") from e


def _output(reader: _Reader, base: Path) -> OutputConfig:
    directory = Path(reader.get("directory", str, "fit_output"))
    if not directory.is_absolute():
        directory = base / directory
    emit = reader.get("emit", list, list(EMIT_CHOICES))
    for i, item in enumerate(emit):
        if item not in EMIT_CHOICES:
            raise ValidationError(f"{reader.key('emit')}[{i}]: '{item}' is not one of {', '.join(EMIT_CHOICES)}")
    reader.finish()
    return OutputConfig(directory=directory, emit=tuple(emit))


def parse_run_config(data: Dict, base: Union[str, Path] = ".", source: Optional[Path] = None) -> RunConfig:
    """Validate a decoded config object; relative paths resolve against `base`."""
    base = Path(base)
    root = _Reader(data, "")
    model = _model(root.child("model"))
    config = RunConfig(
        model=model,
        data=_data(root.child("data"), base, model),
        sampler=_sampler(root.child("sampler")),
        output=_output(root.child("output", {}), base),
        source=source,
    )
    root.finish()
    return config


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a JSON run config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    config = parse_run_config(data, path.parent, source=path)
    logger.info("loaded config %s: %d responses, %d predictors", path,
                len(config.data.responses), len(config.data.predictors))
    return config


def load_sources(config: RunConfig) -> Tuple[List[ResponseSource], List[PredictorSource]]:
    """Read every observation table named by the config into model sources."""
    responses = []
    for sc in config.data.responses:
        supports, values = storage_service.read_observations(sc.path, sc.weight)
        source = ResponseSource(id=sc.id, supports=supports, values=values, variance_fn=sc.variance,
                                family=sc.family, reliable=sc.reliable)
        responses.append(source.as_centroids() if sc.as_centroids else source)
    predictors = []
    for sc in config.data.predictors:
        supports, values = storage_service.read_observations(sc.path, sc.weight)
        source = PredictorSource(id=sc.id, supports=supports, values=values, variance_fn=sc.variance)
        predictors.append(source.as_centroids() if sc.as_centroids else source)
    return responses, predictors


def fit_config_dict(model: ModelConfig, responses: List[Dict], predictors: List[Dict],
                    seed: int, directory: str, sampler: Optional[Dict] = None) -> Dict:
    """A run config object in the on-disk layout, as written by `simulate`."""
    sampler_section = {"n_iter": 10000, "burn_in": 2000, "thin": 5, "chains": 1, "seed": seed}
    sampler_section.update(sampler or {})
    model_section = model.to_dict()
    if model_section["predictor_basis"] is None:
        del model_section["predictor_basis"]
    return {
        "model": model_section,
        "data": {"responses": responses, "predictors": predictors},
        "sampler": sampler_section,
        "output": {"directory": directory, "emit": list(EMIT_CHOICES)},
    }
