"""Flat key = value experiment configuration files.

All keys live in one ``[experiment]`` section and map one-to-one onto
:class:`~gppto.harness.ExperimentConfig` fields. Lists are comma separated.
Unknown keys are rejected so typos do not silently fall back to defaults.

Example::

    [experiment]
    n = 10
    budget_list = 30, 60, 100
    sigma_s_list = 0.1, 1.0
    policies = gp_pto, random
    runs_per_cell = 20
"""

import configparser
from pathlib import Path

from .harness import ExperimentConfig, config_fields

SECTION = "experiment"


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv):
    def parse(s):
        items = [p.strip() for p in s.split(",") if p.strip()]
        if not items:
            raise ValueError("empty list")
        return [conv(p) for p in items]
    return parse


def _optional(conv):
    return lambda s: None if s.strip().lower() in ("", "none") else conv(s)


_INT = {"n", "num_types", "runs_per_cell", "seed", "n_jobs", "max_backtracks", "max_iters",
        "offline_max_iters", "patience"}
_BOOL = {"gp_map", "warm_start"}
_PARSERS = {
    "sigma_s_list": _list(float),
    "budget_list": _list(float),
    "policies": _list(str),
    "seeds": _optional(_list(int)),
    "start": _optional(_list(float)),
    "goal": _optional(_list(float)),
    "map_file": _optional(str),
    "mean_const": _optional(float),
    "query_density": _optional(int),
}


def _parser(name):
    if name in _PARSERS:
        return _PARSERS[name]
    if name in _INT:
        return int
    if name in _BOOL:
        return _bool
    return float


def parse_values(raw):
    """Convert ``{key: text}`` into typed ExperimentConfig keyword arguments."""
    known = config_fields()
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
    out = {}
    for key, text in raw.items():
        try:
            out[key] = _parser(key)(text)
        except ValueError as err:
            raise ValueError(f"bad value for {key!r}: {err}") from err
    return out


def load_config(path, **overrides):
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except OSError as err:
        raise OSError(f"could not read config {path}: {err}") from err
    except configparser.Error as err:
        raise ValueError(f"{path}: {err}") from err
    extra = [s for s in cp.sections() if s != SECTION]
    if extra:
        raise ValueError(f"{path}: unexpected sections {extra}; use [{SECTION}]")
    raw = dict(cp[SECTION]) if cp.has_section(SECTION) else {}
    kwargs = parse_values(raw)
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


def dump_config(config):
    """Render a config back to file text (round-trips through :func:`load_config`)."""
    lines = [f"[{SECTION}]"]
    for name in config_fields():
        v = getattr(config, name)
        if v is None:
            text = "none"
        elif isinstance(v, (list, tuple)):
            text = ", ".join(str(x) for x in v)
        else:
            text = str(v)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"
