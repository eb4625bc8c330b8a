"""Experiment configuration: TOML files with SI-suffixed values.

Schema (all sections except [circuit] optional)::

    seed = 42
    [circuit]
    topology = "tonic"            # tonic | phasic | mixed | pearson_anson
    rl1 = "5k"                    # Ohm; omit for phasic
    rl2 = "5k"
    c1 = "5n"                     # F
    c2 = "2n"
    cin = "0.3n"                  # phasic/mixed only
    e1 = 1.5                      # V (magnitudes)
    e2 = 1.5
    c_stray = "1n"
    r_src = 50                    # source resistance for voltage clamp
    [circuit.device]              # both devices; or [circuit.device1] / 2
    material = "vo2-table2"       # preset, or inline cp/dh_tr/kappa/...
    r_ch = "56n"
    l_ch = "100n"
    r_e = 150
    r_shunt = "13k"               # omit for no leakage path
    [stimulus]
    protocol = "dc t0=10us t1=2ms amp=60uA"   # or file = "drive.stim"
    [solver]
    t_end = "2ms"
    rel_tol = 1e-6
    abs_tol_v = 1e-9
    abs_tol_u = 1e-9
    dense_interval = "100n"       # or "adaptive"
    min_step = 1e-16
    max_step = "1u"
    [analysis]
    spike_threshold = 0.3         # V above resting
    min_separation = "2u"         # s
    [output]
    directory = "out"             # default: $MOTTNEURON_OUTDIR or cwd
    basename = "run"

Numeric values may be plain numbers (SI base units) or strings with a
magnitude suffix f/p/n/u/m/k/M/G, optionally followed by a unit word that is
ignored ("13k", "2nF", "82.5uA", "100ns").
"""

import os
import re
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import device, stimulus
from .circuit import NeuronCircuit
from .errors import ConfigurationError
from .solver import SolverConfig

_SI = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3,
       "k": 1e3, "M": 1e6, "G": 1e9}

_SI_RE = re.compile(
    r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*([fpnuµmkMG]?)"
    r"\s*[a-zA-ZΩ]*\s*$")


def parse_si(value, where="value"):
    """Parse a plain number or an SI-suffixed string into a float."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ConfigurationError(f"{where}: expected number or string, "
                                 f"got {type(value).__name__}")
    m = _SI_RE.match(value)
    if not m:
        raise ConfigurationError(f"{where}: cannot parse quantity {value!r}")
    scale = _SI[m.group(2)] if m.group(2) else 1.0
    return float(m.group(1)) * scale


def _get(table, key, where, default=None, required=False):
    if key in table:
        return parse_si(table[key], f"{where}.{key}")
    if required:
        raise ConfigurationError(f"missing required key {where}.{key}")
    return default


def device_from_table(table, where="circuit.device"):
    """Build a (MaterialParams, DeviceGeometry) pair from a config table."""
    if "material" in table:
        mat = device.material_preset(table["material"])
    else:
        try:
            mat = device.MaterialParams(
                cp=_get(table, "cp", where, required=True),
                dh_tr=_get(table, "dh_tr", where, required=True),
                kappa=_get(table, "kappa", where, required=True),
                rho_met=_get(table, "rho_met", where, required=True),
                rho_ins=_get(table, "rho_ins", where, required=True),
                dT=_get(table, "dT", where, required=True),
                name=str(table.get("name", "custom")),
            )
        except ConfigurationError:
            raise
        except Exception as exc:
            raise ConfigurationError(f"{where}: {exc}") from exc
    geo = device.DeviceGeometry(
        r_ch=_get(table, "r_ch", where, default=56e-9),
        l_ch=_get(table, "l_ch", where, default=100e-9),
        r_e=_get(table, "r_e", where, default=0.0),
        r_shunt=_get(table, "r_shunt", where, default=None),
    )
    return (mat, geo)


def circuit_from_table(table):
    where = "circuit"
    if "topology" not in table:
        raise ConfigurationError("circuit.topology is required")
    devtab = table.get("device", {"material": "vo2-table2"})
    dev1 = device_from_table(table.get("device1", devtab), "circuit.device1")
    dev2 = device_from_table(table.get("device2", devtab), "circuit.device2")
    try:
        return NeuronCircuit(
            topology=str(table["topology"]),
            rl1=_get(table, "rl1", where),
            rl2=_get(table, "rl2", where, required=True),
            c1=_get(table, "c1", where, default=0.0),
            c2=_get(table, "c2", where, default=0.0),
            cin=_get(table, "cin", where),
            e1=_get(table, "e1", where, required=True),
            e2=_get(table, "e2", where, default=0.0),
            c_stray=_get(table, "c_stray", where, default=0.0),
            r_src=_get(table, "r_src", where, default=50.0),
            dev1=dev1, dev2=dev2,
        )
    except ConfigurationError:
        raise


def solver_from_table(table):
    dense = table.get("dense_interval", 10e-9)
    if isinstance(dense, str) and dense.strip() == "adaptive":
        dense = None
    elif dense is not None:
        dense = parse_si(dense, "solver.dense_interval")
    kwargs = dict(dense_interval=dense)
    for key in ("rel_tol", "abs_tol_v", "abs_tol_u", "min_step", "max_step",
                "initial_step"):
        if key in table:
            kwargs[key] = parse_si(table[key], f"solver.{key}")
    return SolverConfig(**kwargs)


@dataclass(frozen=True)
class AnalysisParams:
    spike_threshold: float = 0.3
    min_separation: float = 2e-6

    def detect_kwargs(self):
        return {"threshold": self.spike_threshold,
                "min_separation": self.min_separation}


@dataclass(frozen=True)
class ExperimentConfig:
    circuit: NeuronCircuit
    program: stimulus.StimulusProgram
    solver: SolverConfig
    analysis: AnalysisParams
    t_end: float
    seed: int
    out_dir: str
    basename: str
    source_path: str | None = None


def default_out_dir():
    return os.environ.get("MOTTNEURON_OUTDIR", ".")


def load_config(path):
    """Load and validate an experiment config file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: TOML syntax error: {exc}") from exc
    return config_from_dict(raw, source_path=path)


def config_from_dict(raw, source_path=None):
    if "circuit" not in raw:
        raise ConfigurationError("config needs a [circuit] section")
    circ = circuit_from_table(raw["circuit"])

    stim_tab = raw.get("stimulus", {})
    if "file" in stim_tab:
        base = os.path.dirname(source_path or ".")
        stim_path = os.path.join(base, stim_tab["file"])
        try:
            with open(stim_path) as fh:
                text = fh.read()
        except FileNotFoundError:
            raise ConfigurationError(f"stimulus file not found: {stim_path}")
    else:
        text = stim_tab.get("protocol", "")
    program = stimulus.parse_protocol(text)

    solver_tab = raw.get("solver", {})
    cfg = solver_from_table(solver_tab)
    t_end = solver_tab.get("t_end", None)
    if t_end is not None:
        t_end = parse_si(t_end, "solver.t_end")
    elif program.span > 0:
        t_end = program.span
    else:
        raise ConfigurationError("solver.t_end is required when the "
                                 "stimulus program is empty")

    ana_tab = raw.get("analysis", {})
    analysis = AnalysisParams(
        spike_threshold=_get(ana_tab, "spike_threshold", "analysis",
                             default=0.3),
        min_separation=_get(ana_tab, "min_separation", "analysis",
                            default=2e-6),
    )

    out_tab = raw.get("output", {})
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigurationError("seed must be an integer")
    return ExperimentConfig(
        circuit=circ, program=program, solver=cfg, analysis=analysis,
        t_end=t_end, seed=seed,
        out_dir=str(out_tab.get("directory", default_out_dir())),
        basename=str(out_tab.get("basename", "run")),
        source_path=source_path,
    )
