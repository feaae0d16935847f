"""INI configuration (sections of key: value pairs) for the CLI."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigurationError

DEFAULTS = {
    "multiplier": {"family": "msqg", "delta": "0.0"},
    "grid": {"n": "72", "dealias": "2/3"},
    "schedule": {"a": "7", "b": "1.2", "beta": "0.5", "alpha": "0.01", "M": "auto", "steps_per_tau": "66"},
    "tolerances": {"newton": "1e-5", "nash": "1e-5", "hamiltonian": "1e-6", "operator": "1e-12", "antidiv": "1e-10"},
    "time": {"check_centers": "1.40, -1.55"},
    "hamiltonian": {"n": "128", "t_end": "0.5", "dt": "1e-3", "kmax": "4", "seed": "0"},
    "estimates": {"ops": "T, S, S', S1, S2, S11, S22, S12", "trilinear": "S0, S1, S2, S11, S22, S12", "resolutions": "32, 64", "trials": "20", "alpha": "0.5", "seed": "0"},
    "microlocal": {"lams": "16, 32", "amplitude": "2.0", "modulation": "0.5", "seed": "0"},
    "constants": {},
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass
class Config:
    family: str
    multiplier_params: dict
    n: int
    dealias: Fraction
    schedule: dict
    tolerances: dict
    check_centers: tuple
    hamiltonian: dict
    estimates: dict
    microlocal: dict
    constants: dict = field(default_factory=dict)
    source: str | None = None


def load_config(path=None) -> Config:
    """Read an INI file over the defaults; missing file or bad values raise ConfigurationError."""
    cp = configparser.ConfigParser(delimiters=(":", "="), interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {p} not found")
        try:
            cp.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigurationError(str(exc)) from exc
    unknown = set(cp.sections()) - set(DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
    try:
        mult = dict(cp["multiplier"])
        family = mult.pop("family")
        sch = cp["schedule"]
        ham = cp["hamiltonian"]
        est = cp["estimates"]
        mic = cp["microlocal"]
        return Config(
            family=family,
            multiplier_params={k: float(v) for k, v in mult.items()},
            n=cp["grid"].getint("n"),
            dealias=Fraction(cp["grid"]["dealias"]),
            schedule={
                "a": sch.getfloat("a"), "b": sch.getfloat("b"), "beta": sch.getfloat("beta"),
                "alpha": sch.getfloat("alpha"), "M": None if sch["M"].strip() == "auto" else sch.getfloat("M"), "steps_per_tau": sch.getint("steps_per_tau"),
            },
            tolerances={k: float(v) for k, v in cp["tolerances"].items()},
            check_centers=_floats(cp["time"]["check_centers"]),
            hamiltonian={
                "n": ham.getint("n"), "t_end": ham.getfloat("t_end"), "dt": ham.getfloat("dt"),
                "kmax": ham.getint("kmax"), "seed": ham.getint("seed"),
            },
            estimates={
                "ops": _names(est["ops"]), "trilinear": _names(est["trilinear"]),
                "resolutions": _ints(est["resolutions"]), "trials": est.getint("trials"),
                "alpha": est.getfloat("alpha"), "seed": est.getint("seed"),
            },
            microlocal={
                "lams": _ints(mic["lams"]), "amplitude": mic.getfloat("amplitude"),
                "modulation": mic.getfloat("modulation"), "seed": mic.getint("seed"),
            },
            constants={k: float(v) for k, v in cp["constants"].items()},
            source=None if path is None else str(path),
        )
    except (KeyError, ValueError, ZeroDivisionError) as exc:
        raise ConfigurationError(f"bad configuration value: {exc}") from exc
