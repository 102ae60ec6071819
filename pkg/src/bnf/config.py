"""Flat ``key = value`` run configuration shared by all subcommands."""

DEFAULTS = {
    "mu": 0.025,
    "sigma_sb": 0.1,
    "sigma_sm": 0.1,
    "radius": 20,
    "fraction": 0.1,
    "softmax_term": True,
    "pcg_tol": 1e-8,
    "pcg_max_iter": 0,  # 0: ceil(10 * sqrt(n))
    "ridge": 0.0,
    "epochs": 50,
    "lr": 0.05,
    "batch": 256,
    "samples": 80000,
    "fit_bias": True,
    "icm_sweeps": 10,
    "seed": 0,
    "threads": 1,
}


class ConfigError(ValueError):
    pass


def _parse_value(raw, key, lineno):
    raw = raw.strip()
    want = type(DEFAULTS[key])
    if want is bool:
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ConfigError(f"line {lineno}: {key} expects true/false, got {raw!r}")
    try:
        return want(raw) if want is float else int(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {want.__name__}, got {raw!r}") from None


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(value, key, lineno)
    return out


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def resolve(file_values=None, flags=None):
    """Defaults, overridden by the config file, overridden by explicit flags (non-None)."""
    merged = dict(DEFAULTS)
    merged.update(file_values or {})
    merged.update({k: v for k, v in (flags or {}).items() if v is not None and k in DEFAULTS})
    return merged
