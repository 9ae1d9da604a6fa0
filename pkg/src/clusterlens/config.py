"""Human-readable key=value config files (a flat TOML subset) for the
synthetic generator and reservation policies."""
from __future__ import annotations

from typing import Any

from .synth import Burst, ConfigError, SynthConfig


def parse_kv(text: str) -> dict[str, Any]:
    """Parse `key = value` lines; supports ints, floats, booleans, quoted
    strings and flat [a, b, c] lists. '#' starts a comment."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        out[key.strip()] = _parse_value(value.strip(), lineno)
    return out


def _parse_value(token: str, lineno: int) -> Any:
    if not token:
        raise ConfigError(f"line {lineno}: empty value")
    if token.startswith("[") and token.endswith("]"):
        inner = token[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(t.strip(), lineno) for t in inner.split(",")]
    if token in ("true", "false"):
        return token == "true"
    if (token.startswith('"') and token.endswith('"')) or (
        token.startswith("'") and token.endswith("'")
    ):
        return token[1:-1]
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse value {token!r}") from None


def load_kv(path: str) -> dict[str, Any]:
    with open(path) as fh:
        return parse_kv(fh.read())


def synth_config_from_dict(data: dict[str, Any]) -> SynthConfig:
    data = dict(data)
    bursts = ()
    centers = data.pop("burst_centers_s", [])
    counts = data.pop("burst_counts", [])
    widths = data.pop("burst_widths_s", [1.0] * len(centers))
    if centers:
        if not (len(centers) == len(counts) == len(widths)):
            raise ConfigError("burst_centers_s, burst_counts and burst_widths_s "
                              "must have equal length")
        bursts = tuple(Burst(float(c), int(n), float(w))
                       for c, n, w in zip(centers, counts, widths))
    tuple_fields = {
        "sched_delay_s", "exec_short_range_s", "exec_long_range_s",
        "production_request", "other_request",
    }
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if not hasattr(SynthConfig, key) and key not in SynthConfig.__dataclass_fields__:
            raise ConfigError(f"unknown synth config key {key!r}")
        kwargs[key] = tuple(value) if key in tuple_fields else value
    cfg = SynthConfig(bursts=bursts, **kwargs)
    cfg.validate()
    return cfg


def load_synth_config(path: str) -> SynthConfig:
    return synth_config_from_dict(load_kv(path))


def load_policy_config(path: str) -> dict[str, Any]:
    """Policy spec: variant plus parameters; the distribution for margin
    policies is measured from the input trace at simulation time."""
    data = load_kv(path)
    variant = data.get("variant")
    if variant not in ("request-static", "borg-decay", "change-quantile-margin"):
        raise ConfigError(f"unknown policy variant {variant!r}")
    if variant == "change-quantile-margin":
        q = data.get("q", 0.9)
        if not 0.0 < q < 1.0:
            raise ConfigError("q must be in (0, 1)")
    return data
