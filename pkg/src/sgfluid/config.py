"""Experiment configuration: INI sections mirroring the package modules.

Every key has a default; unknown sections or keys are rejected.  The resolved
configuration is written back as INI next to every output.
"""

import configparser
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SgfluidError
from .integrator import SimConfig
from .lattice import SpectralVelocity, build_lattice
from .noise import PROFILES, make_noise
from .operators import norms
from .rng import NS_FIELD, stream

# section -> key -> (type, default)
SCHEMA = {
    "lattice": {"k_max": (int, 8), "alpha": (float, 1.0)},
    "physics": {"nu": (float, 2.0)},
    "noise": {
        "profile": (str, "low"),
        "scale": (float, 0.05),
        "eps": (float, 0.0),
        "sat": (float, 1.0),
        "n_low": (int, 8),
        "power": (float, 2.0),
    },
    "sim": {
        "dt": (float, 1e-3),
        "t_end": (float, 10.0),
        "record_every": (str, "10"),  # integer, or "inf" for the terminal row only
        "seed": (int, 0),
        "c_cfl": (float, 1.0),
    },
    "coupling": {
        "rho": (float, 50.0),
        "x0": (str, "zero"),
        "x0_tilde": (str, "random 7 1.0"),
        "stabilizing": (bool, True),
        "h_budget": (str, "auto"),
    },
    "ensemble": {
        "n_paths": (int, 128),
        "checkpoints": (str, "auto"),  # "auto" or comma-separated times
        "burnin": (str, "auto"),
        "dictionary_size": (int, 64),
    },
    "outputs": {"directory": (str, "sgfluid-out")},
    "check": {
        "theta_samples": (int, 1000),
        "theta_seed": (int, 0),
        "theta_refine": (bool, True),
        "allow_infeasible": (bool, False),
    },
}


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict  # section -> key -> typed value

    def __getitem__(self, section):
        return self.values[section]

    def with_overrides(self, **overrides):
        """Copy with ``section__key=value`` overrides (values already typed)."""
        vals = {s: dict(kv) for s, kv in self.values.items()}
        for name, v in overrides.items():
            sec, key = name.split("__", 1)
            if sec not in vals or key not in vals[sec]:
                raise ConfigError(f"unknown key [{sec}] {key}")
            vals[sec][key] = v
        return ExperimentConfig(vals)

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        for sec, kv in self.values.items():
            cp[sec] = {k: _fmt(v) for k, v in kv.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    # -- builders ------------------------------------------------------------
    def lattice(self):
        return build_lattice(self["lattice"]["k_max"], self["lattice"]["alpha"])

    def noise(self, lat):
        n = self["noise"]
        if n["profile"] == "none":
            return None
        return make_noise(lat, n["profile"], n["scale"], n["eps"], n["sat"], n["n_low"], n["power"])

    def record_every(self):
        return parse_record_every(self["sim"]["record_every"])

    def sim(self, lat=None):
        lat = self.lattice() if lat is None else lat
        s = self["sim"]
        return SimConfig(lat, self["physics"]["nu"], s["dt"], s["t_end"], self.noise(lat),
                         self.record_every(), s["seed"], s["c_cfl"])

    def checkpoints(self):
        c = self["ensemble"]["checkpoints"].strip()
        if c == "auto":
            return None
        return np.array([float(x) for x in c.split(",")])

    def burnin(self):
        b = self["ensemble"]["burnin"].strip()
        return None if b == "auto" else float(b)

    def h_budget(self):
        b = self["coupling"]["h_budget"].strip()
        return None if b == "auto" else float(b)


def parse_record_every(text):
    t = str(text).strip().lower()
    if t in ("inf", "none", "terminal"):
        return None
    try:
        n = int(t)
    except ValueError:
        raise ConfigError(f"record_every must be a positive integer or 'inf', got {text!r}") from None
    if n < 1:
        raise ConfigError(f"record_every must be >= 1, got {n}")
    return n


def defaults():
    return ExperimentConfig({s: {k: d for k, (_, d) in kv.items()} for s, kv in SCHEMA.items()})


def parse_config(text, source="<config>"):
    """Parse INI text; unspecified keys keep their defaults.  ``;`` and ``#`` start comments."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    vals = defaults().values
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, raw in cp[sec].items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}: unknown key '{key}' in [{sec}]")
            typ = SCHEMA[sec][key][0]
            try:
                vals[sec][key] = _parse_bool(raw) if typ is bool else typ(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{source}: [{sec}] {key} = {raw!r}: {exc}") from None
    cfg = ExperimentConfig(vals)
    validate(cfg, source)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


def validate(cfg, source="<config>"):
    """Build every object once so that bad values surface before any run."""
    if cfg["noise"]["profile"] not in PROFILES:
        raise ConfigError(f"{source}: [noise] profile must be one of {PROFILES}")
    parse_record_every(cfg["sim"]["record_every"])
    try:
        lat = cfg.lattice()
        cfg.sim(lat)
        parse_field(cfg["coupling"]["x0"], lat)
        parse_field(cfg["coupling"]["x0_tilde"], lat)
        cfg.checkpoints()
        cfg.burnin()
        cfg.h_budget()
    except (SgfluidError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if cfg["ensemble"]["n_paths"] < 1:
        raise ConfigError(f"{source}: [ensemble] n_paths must be >= 1")


def parse_field(text, lat):
    """Initial state from a spec string.

    ``zero``; ``mode K1 K2 AMP`` (a real shear wave); ``random SEED VNORM``
    (spectrum |k|^-2 rescaled to the given V-norm).
    """
    parts = text.split()
    if not parts:
        raise ConfigError("empty field spec")
    kind = parts[0].lower()
    try:
        if kind == "zero" and len(parts) == 1:
            return SpectralVelocity.zeros(lat)
        if kind == "mode" and len(parts) == 4:
            return SpectralVelocity.mode(lat, (int(parts[1]), int(parts[2])), float(parts[3]))
        if kind == "random" and len(parts) == 3:
            u = SpectralVelocity.random(lat, stream(int(parts[1]), NS_FIELD, 0), slope=2.0)
            return u * (float(parts[2]) / np.sqrt(norms(u).vsq))
    except ValueError as exc:
        raise ConfigError(f"bad field spec {text!r}: {exc}") from None
    raise ConfigError(f"bad field spec {text!r}; use 'zero', 'mode K1 K2 AMP' or 'random SEED VNORM'")
