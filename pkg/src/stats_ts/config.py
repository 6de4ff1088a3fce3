"""``key = value`` run configuration with [data]/[train]/[schedule]/[denoiser]/[eval] sections."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

from .errors import ContractError
from .scheduler import StsWeights
from .training import TrainConfig

CONFIG_FORMAT = "stats-ts-config/1"

# (section, key) -> TrainConfig attribute
_TRAIN_KEYS = {
    ("train", "seed"): "seed",
    ("train", "epochs"): "epochs",
    ("train", "sts_epochs"): "sts_epochs",
    ("train", "batch_size"): "batch_size",
    ("train", "lr"): "lr",
    ("train", "sts_lr"): "sts_lr",
    ("train", "patience"): "patience",
    ("train", "grad_clip"): "grad_clip",
    ("train", "divergence"): "divergence",
    ("train", "stride"): "stride",
    ("train", "split"): "split",
    ("train", "learn_schedule"): "learn_schedule",
    ("train", "adam_beta1"): "adam_beta1",
    ("train", "adam_beta2"): "adam_beta2",
    ("train", "adam_eps"): "adam_eps",
    ("schedule", "num_steps"): "num_steps",
    ("schedule", "template"): "template",
    ("schedule", "beta_start"): "beta_start",
    ("schedule", "beta_end"): "beta_end",
    ("schedule", "clamp_eps"): "clamp_eps",
    ("schedule", "variance"): "variance",
    ("denoiser", "history"): "history",
    ("denoiser", "horizon"): "horizon",
    ("denoiser", "bands"): "bands",
    ("denoiser", "hidden"): "hidden",
    ("denoiser", "gate_hidden"): "gate_hidden",
    ("denoiser", "embed_dim"): "embed_dim",
    ("denoiser", "r_min"): "r_min",
    ("denoiser", "r_max"): "r_max",
}


@dataclass
class DataConfig:
    source: str = "synthetic"
    synthetic: str = "sin2"
    length: int = 4000
    channels: int = 2
    noise: float | None = None
    path: str = ""
    delimiter: str = ","
    header: bool = True
    timestamp: str = ""


@dataclass
class EvalConfig:
    num_samples: int = 100
    stride: int = 1
    point: str = "mean"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def as_dict(self):
        return {
            "format": CONFIG_FORMAT,
            "data": asdict(self.data),
            "train": self.train.as_dict(),
            "eval": asdict(self.eval),
        }


def _convert(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        raise ContractError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(float(x) for x in raw.split(","))
    return raw


def default_config_text() -> str:
    return resources.files("stats_ts").joinpath("default.ini").read_text()


def _parser(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=None, interpolation=None)
    cp.read_string(text)
    return cp


def parse_config(text: str | None = None) -> RunConfig:
    """Defaults from the shipped file, overridden by ``text`` when given."""
    cp = _parser(default_config_text())
    if text is not None:
        user = _parser(text)
        for section in user.sections():
            if section not in cp:
                raise ContractError(f"unknown config section [{section}]")
            for key, value in user[section].items():
                if key not in cp[section]:
                    raise ContractError(f"unknown config key {key!r} in [{section}]")
                cp[section][key] = value

    data = DataConfig()
    for f in fields(DataConfig):
        raw = cp["data"][f.name]
        if f.name == "noise":
            data.noise = float(raw) if raw.strip() else None
        else:
            setattr(data, f.name, _convert(raw, getattr(data, f.name)))

    kwargs = {}
    defaults = {f.name: f.default for f in fields(TrainConfig) if f.name != "weights"}
    for (section, key), attr in _TRAIN_KEYS.items():
        kwargs[attr] = _convert(cp[section][key], defaults[attr])
    weights = StsWeights(**{k: float(cp["schedule"][f"lambda_{k}"]) for k in StsWeights().as_dict()})
    train = TrainConfig(weights=weights, **kwargs)

    ev = EvalConfig()
    for f in fields(EvalConfig):
        setattr(ev, f.name, _convert(cp["eval"][f.name], getattr(ev, f.name)))
    if ev.num_samples < 1 or ev.stride < 1:
        raise ContractError("eval num_samples and stride must be >= 1")
    return RunConfig(data, train, ev)


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config()
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    """Serialize to the same ``key = value`` layout accepted by :func:`parse_config`."""
    t = cfg.train
    lines = ["[data]"]
    for f in fields(DataConfig):
        v = getattr(cfg.data, f.name)
        lines.append(f"{f.name} = {'' if v is None else _fmt(v)}")
    sections = {"train": [], "schedule": [], "denoiser": []}
    for (section, key), attr in _TRAIN_KEYS.items():
        sections[section].append(f"{key} = {_fmt(getattr(t, attr))}")
    for k, v in t.weights.as_dict().items():
        sections["schedule"].append(f"lambda_{k} = {_fmt(v)}")
    for name, body in sections.items():
        lines += ["", f"[{name}]"] + body
    lines += ["", "[eval]"] + [f"{f.name} = {_fmt(getattr(cfg.eval, f.name))}" for f in fields(EvalConfig)]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)
