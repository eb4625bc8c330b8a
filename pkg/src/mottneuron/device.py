"""Mott-memristor compact model: materials, geometry, and device operations.

The device is a cylindrical conduction channel whose metallic core radius,
normalized as u = r_met / r_ch, is the single state variable. Resistance,
thermal conductance and the enthalpy cost of growing the metallic core are
closed-form functions of u; Joule heating against radial heat loss drives
du/dt. Parasitics (series electrode resistance, parallel film leakage) wrap
the channel as R_e in series with (R_ch(u) || R_shunt).
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ConvergenceError, DomainError

U_FLOOR = 1e-4
U_CEIL = 0.9999

_RELAX_MAX_ITER = 1_000_000


@dataclass(frozen=True)
class MaterialParams:
    """Mott material constants.

    cp: volumetric heat capacity (J m^-3 K^-1)
    dh_tr: volumetric latent heat of the insulator-metal transition (J m^-3)
    kappa: thermal conductivity of the insulating phase (W m^-1 K^-1)
    rho_met / rho_ins: metallic / insulating resistivity (Ohm m)
    dT: temperature rise from ambient to the transition (K)
    """

    cp: float
    dh_tr: float
    kappa: float
    rho_met: float
    rho_ins: float
    dT: float
    name: str = "custom"

    def __post_init__(self):
        for field in ("cp", "dh_tr", "kappa", "rho_met", "rho_ins", "dT"):
            if getattr(self, field) <= 0:
                raise DomainError(f"MaterialParams.{field} must be > 0")
        if self.rho_ins <= self.rho_met:
            raise DomainError("rho_ins must exceed rho_met")


@dataclass(frozen=True)
class DeviceGeometry:
    """Conduction-channel dimensions and device parasitics.

    r_shunt=None means no parallel leakage path (infinite shunt).
    """

    r_ch: float = 56e-9
    l_ch: float = 100e-9
    r_e: float = 0.0
    r_shunt: float | None = None

    def __post_init__(self):
        if self.r_ch <= 0 or self.l_ch <= 0:
            raise DomainError("channel radius and length must be > 0")
        if self.r_e < 0:
            raise DomainError("r_e must be >= 0")
        if self.r_shunt is not None and self.r_shunt <= 0:
            raise DomainError("r_shunt must be > 0 when present")


# VO2 constants used for the circuit dynamics simulations.
VO2_TABLE2 = MaterialParams(
    cp=3.30e6, dh_tr=2.35e8, kappa=3.5, rho_met=3e-6, rho_ins=1e-2,
    dT=43.0, name="vo2-table2",
)

# VO2 thermodynamic constants used for the transition-energetics comparison
# (temperature rise 40 K, total volumetric enthalpy 3.67e8 J/m^3).
VO2_TABLE1 = MaterialParams(
    cp=3.30e6, dh_tr=2.35e8, kappa=3.5, rho_met=3e-6, rho_ins=1e-2,
    dT=40.0, name="vo2-table1",
)


def _nbo2_table1():
    warnings.warn(
        "NbO2 preset carries only thermodynamic constants (cp, dh_tr, dT); "
        "kappa and resistivities default to the VO2 values, so only "
        "transition energetics and relative switching-speed comparisons are "
        "meaningful for NbO2.",
        stacklevel=3,
    )
    return MaterialParams(
        cp=2.6e6, dh_tr=1.6e8, kappa=VO2_TABLE2.kappa,
        rho_met=VO2_TABLE2.rho_met, rho_ins=VO2_TABLE2.rho_ins,
        dT=800.0, name="nbo2-table1",
    )


def material_preset(name):
    """Look up a built-in material preset by name."""
    key = name.strip().lower()
    if key == "vo2-table2":
        return VO2_TABLE2
    if key == "vo2-table1":
        return VO2_TABLE1
    if key == "nbo2-table1":
        return _nbo2_table1()
    raise DomainError(
        f"unknown material preset {name!r}; "
        "choose from vo2-table2, vo2-table1, nbo2-table1"
    )


def pack_device(mat, geo, u_floor=U_FLOOR, u_ceil=U_CEIL):
    """Pack a (material, geometry) pair into the kernel parameter block."""
    area = math.pi * geo.r_ch ** 2
    dev = np.empty(kernels.DEV_LEN)
    dev[kernels.D_RINS] = mat.rho_ins * geo.l_ch / area
    dev[kernels.D_RATIO] = mat.rho_ins / mat.rho_met - 1.0
    dev[kernels.D_QCOEF] = 2.0 * math.pi * geo.l_ch * mat.kappa * mat.dT
    dev[kernels.D_HVOL] = math.pi * geo.l_ch * geo.r_ch ** 2
    dev[kernels.D_CPDT] = mat.cp * mat.dT
    dev[kernels.D_2DH] = 2.0 * mat.dh_tr
    dev[kernels.D_RE] = geo.r_e
    dev[kernels.D_GSH] = 0.0 if geo.r_shunt is None else 1.0 / geo.r_shunt
    dev[kernels.D_UFLOOR] = u_floor
    dev[kernels.D_UCEIL] = u_ceil
    return dev


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(u < U_FLOOR) or np.any(u > U_CEIL):
        raise DomainError(f"u must lie in [{U_FLOOR}, {U_CEIL}]")
    return u


def channel_resistance(u, mat, geo):
    """Channel resistance R_ch(u) in Ohm. Strictly decreasing in u."""
    u = _check_u(u)
    r_ins = mat.rho_ins * geo.l_ch / (math.pi * geo.r_ch ** 2)
    out = r_ins / (1.0 + (mat.rho_ins / mat.rho_met - 1.0) * u * u)
    return float(out) if out.ndim == 0 else out


def thermal_conductance(u, mat, geo):
    """State-dependent thermal conductance Gamma_th(u) in W/K."""
    u = np.asarray(u, dtype=float)
    if np.any(u >= 1.0):
        raise DomainError("thermal conductance diverges as u -> 1")
    u = _check_u(u)
    out = 2.0 * math.pi * geo.l_ch * mat.kappa / np.log(1.0 / u)
    return float(out) if out.ndim == 0 else out


def enthalpy_derivative(u, mat, geo):
    """Differential enthalpy cost of metallization, d(dH)/du in J."""
    u = _check_u(u)
    lu = np.log(u)
    geom = (1.0 - u * u + 2.0 * u * u * lu) / (2.0 * u * lu * lu)
    out = (math.pi * geo.l_ch * geo.r_ch ** 2
           * (mat.cp * mat.dT * geom + 2.0 * mat.dh_tr * u))
    return float(out) if out.ndim == 0 else out


def state_derivative(u, i, mat, geo):
    """du/dt for channel current i: Joule heating against radial heat loss."""
    u = _check_u(u)
    i = np.asarray(i, dtype=float)
    if not np.all(np.isfinite(i)):
        raise DomainError("current must be finite")
    p_joule = i * i * channel_resistance(u, mat, geo)
    q = thermal_conductance(u, mat, geo) * mat.dT
    out = (p_joule - q) / enthalpy_derivative(u, mat, geo)
    return float(out) if out.ndim == 0 else out


def transition_energy(mat, geo):
    """Total enthalpy to metallize the full channel volume, in J."""
    volume = math.pi * geo.r_ch ** 2 * geo.l_ch
    return (mat.cp * mat.dT + mat.dh_tr) * volume


def thermal_time_scale(mat, geo):
    """Characteristic u-relaxation time, enthalpy slope over heat flux at u=0.5."""
    return enthalpy_derivative(0.5, mat, geo) / (
        thermal_conductance(0.5, mat, geo) * mat.dT
    )


def _relax_tolerance(mat, geo):
    return 1e-3 * (U_CEIL - U_FLOOR) / thermal_time_scale(mat, geo)


@dataclass(frozen=True)
class IVCurve:
    """Quasi-static I-V sweep result.

    voltage/current are measured across/into the full branch (R_e plus
    channel-parallel-shunt); u is the relaxed state at each point. n_up
    points at the start of the down-sweep half (== len for one-way sweeps).
    """

    mode: str
    voltage: np.ndarray
    current: np.ndarray
    u: np.ndarray
    n_up: int

    def ndr_segment(self):
        """Boolean mask of points whose local dV/dI is negative (up-sweep)."""
        v = self.voltage[: self.n_up]
        i = self.current[: self.n_up]
        dv = np.gradient(v, i)
        mask = np.zeros(len(self.voltage), dtype=bool)
        mask[: self.n_up] = dv < 0.0
        return mask


def _branch_resistance(u, mat, geo):
    rch = channel_resistance(u, mat, geo)
    if geo.r_shunt is not None:
        rp = rch * geo.r_shunt / (rch + geo.r_shunt)
    else:
        rp = rch
    return geo.r_e + rp


def saddle_voltage_estimate(mat, geo):
    """Branch voltage where the insulating equilibrium disappears (grid scan)."""
    u = np.geomspace(U_FLOOR, 0.5, 4000)
    q = thermal_conductance(u, mat, geo) * mat.dT
    rch = channel_resistance(u, mat, geo)
    v_ch = np.sqrt(q * rch)
    if geo.r_shunt is not None:
        rp = rch * geo.r_shunt / (rch + geo.r_shunt)
    else:
        rp = rch
    v_branch = v_ch * (geo.r_e + rp) / rp
    return float(np.max(v_branch))


def _metallic_current(mat, geo, u=0.95):
    i_ch = math.sqrt(thermal_conductance(u, mat, geo) * mat.dT
                     / channel_resistance(u, mat, geo))
    if geo.r_shunt is not None:
        rch = channel_resistance(u, mat, geo)
        return i_ch * (rch + geo.r_shunt) / geo.r_shunt
    return i_ch


def quasi_static_iv(mat, geo, mode="force-current", sweep=None, resolution=None):
    """Quasi-static sweep: relax u to equilibrium at each drive point.

    mode "force-current" yields the continuous S-shaped curve; "force-voltage"
    yields the hysteretic loop. sweep is (start, stop) for an up-then-down
    loop, or an explicit drive array taken as-is. Defaults cover the full
    switching range at 0.1 uA / 1 mV resolution.
    """
    if mode not in ("force-current", "force-voltage"):
        raise DomainError(f"unknown sweep mode {mode!r}")
    force_v = mode == "force-voltage"
    if sweep is None or isinstance(sweep, tuple):
        if sweep is None:
            lo = 0.0
            hi = (1.25 * saddle_voltage_estimate(mat, geo) if force_v
                  else 1.2 * _metallic_current(mat, geo))
        else:
            lo, hi = sweep
        if resolution is None:
            resolution = 1e-3 if force_v else 1e-7
        n = max(int(round((hi - lo) / resolution)), 2)
        up = np.linspace(lo, hi, n + 1)
        drives = np.concatenate([up, up[-2::-1]])
        n_up = len(up)
    else:
        drives = np.asarray(sweep, dtype=float)
        n_up = len(drives)

    dev = pack_device(mat, geo)
    out_v = np.empty(len(drives))
    out_i = np.empty(len(drives))
    out_u = np.empty(len(drives))
    fail = kernels.qs_sweep(drives, force_v, dev, U_FLOOR,
                            _relax_tolerance(mat, geo), _RELAX_MAX_ITER,
                            out_v, out_i, out_u)
    if fail >= 0:
        last = (out_v[fail - 1], out_i[fail - 1]) if fail > 0 else None
        raise ConvergenceError(
            f"quasi-static relaxation stalled at sweep point {fail}",
            last_value=last,
        )
    return IVCurve(mode=mode, voltage=out_v, current=out_i, u=out_u, n_up=n_up)


def threshold_voltage(mat, geo, resolution=1e-3, v_max=None):
    """Switching threshold from a force-voltage up-sweep (across device + R_e).

    Returns the source voltage at which the insulating branch jumps metallic.
    """
    if v_max is None:
        v_max = 1.25 * saddle_voltage_estimate(mat, geo)
    n = max(int(round(v_max / resolution)), 10)
    drives = np.linspace(0.0, v_max, n + 1)
    curve = quasi_static_iv(mat, geo, "force-voltage", sweep=drives)
    jumps = np.flatnonzero(np.diff(curve.u) > 0.1)
    if len(jumps) == 0:
        raise ConvergenceError(
            f"no insulating->metallic jump found in force-voltage sweep "
            f"up to {v_max:.3g} V"
        )
    return float(curve.voltage[jumps[0] + 1])


def threshold_voltage_from_s_curve(mat, geo, n_points=4000):
    """Cross-check threshold: voltage at the local maximum of the force-I curve."""
    i_max = 1.2 * _metallic_current(mat, geo)
    drives = np.linspace(0.0, i_max, n_points)
    curve = quasi_static_iv(mat, geo, "force-current", sweep=drives)
    v = curve.voltage
    # first local maximum of V(I): end of the insulating branch
    for k in range(1, len(v) - 1):
        if v[k] >= v[k - 1] and v[k] > v[k + 1]:
            return float(v[k])
    raise ConvergenceError("force-current curve has no local voltage maximum")
