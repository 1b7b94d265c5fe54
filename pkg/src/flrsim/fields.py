"""Grids, charge deposition, spectral Poisson solvers and field interpolation.

Everything lives on the unit torus T^2 x T, discretized by a periodic grid
with nodes at i/n.  Charge is assigned with the cloud-in-cell (trilinear)
kernel and fields are read back with the same kernel, so deposition and
interpolation are exact adjoints of each other.

Three elliptic problems are supported, all solved by Fourier division:

``QUASINEUTRAL``   V - eps^2 d^2_par V - Lap_perp V = rho - <rho>
``FIXED_IONS``         - eps^2 d^2_par V - Lap_perp V = rho - <rho>
``LIMIT``          V - Lap_perp V = rho - 1

The quasineutral operator carries an identity term from linearized adiabatic
electrons; it screens parallel modes only weakly (through eps^2) but keeps the
zero mode invertible.  The fixed-ion operator loses the identity term, so its
right-hand side must be compatible: the background density is one, and a total
charge away from one signals an upstream bug.  The limit operator is the
eps -> 0 form with purely perpendicular screening; its electric field has no
parallel component.

Transform convention: unnormalized forward FFT, 1/N on the inverse, integer
wavenumbers in {-n/2, ..., n/2 - 1}; the Nyquist mode of first derivatives is
set to zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

FIELD_MAGIC = b"FLRS"
FIELD_FORMAT_VERSION = 1

#: tolerated total-charge defect for the fixed-ion solve
CHARGE_BALANCE_TOL = 1e-10


class ChargeImbalanceError(RuntimeError):
    """Total charge incompatible with the fixed-ion background."""


class SnapshotFormatError(RuntimeError):
    """Bad magic bytes, version or payload size in a snapshot file."""


class PoissonModel(Enum):
    QUASINEUTRAL = "quasineutral"
    FIXED_IONS = "fixed_ions"
    LIMIT = "limit"


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid resolutions; n1, n2 perpendicular, n3 parallel."""

    n1: int
    n2: int
    n3: int

    def __post_init__(self):
        for name, n in (("n1", self.n1), ("n2", self.n2), ("n3", self.n3)):
            if n < 4 or n % 2 != 0:
                raise ValueError(
                    f"grid resolution {name}={n} must be >= 4 and even for the "
                    "spectral Nyquist convention"
                )

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def n_cells(self) -> int:
        return self.n1 * self.n2 * self.n3

    @property
    def cell_volume(self) -> float:
        return 1.0 / self.n_cells

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node coordinates i/n along each direction."""
        return tuple(np.arange(n) / n for n in self.shape)

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer wavenumbers, broadcast-ready along the three axes."""
        k1 = np.fft.fftfreq(self.n1, d=1.0 / self.n1)[:, None, None]
        k2 = np.fft.fftfreq(self.n2, d=1.0 / self.n2)[None, :, None]
        k3 = np.fft.fftfreq(self.n3, d=1.0 / self.n3)[None, None, :]
        return k1, k2, k3


@dataclass
class ScalarGridField:
    spec: GridSpec
    values: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        if self.values.shape != self.spec.shape:
            raise ValueError(
                f"field values shape {self.values.shape} != grid {self.spec.shape}"
            )

    def mean(self) -> float:
        return float(np.mean(self.values))

    def integral(self) -> float:
        """Torus integral by the (here exact) trapezoidal rule."""
        return float(np.mean(self.values))


@dataclass
class VectorGridField:
    """Field with perpendicular components e1, e2 and parallel component epar."""

    spec: GridSpec
    e1: np.ndarray
    e2: np.ndarray
    epar: np.ndarray

    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.e1, self.e2, self.epar


def _cic_corners(positions: np.ndarray, spec: GridSpec):
    """Base node indices, neighbor indices and linear weights per axis."""
    dims = np.array(spec.shape)
    scaled = (positions - np.floor(positions)) * dims
    i0 = scaled.astype(np.int64)
    # guard against scaled == n after rounding at the right edge
    np.minimum(i0, dims - 1, out=i0)
    frac = scaled - i0
    i1 = i0 + 1
    i1[i1 == dims] = 0
    return i0, i1, frac


def deposit_charge(
    positions: np.ndarray, weights: np.ndarray, spec: GridSpec
) -> ScalarGridField:
    """Cloud-in-cell deposition of weighted particles onto the density grid.

    The returned node values are densities (weights divided by the cell
    volume), so the grid integral of the density equals the total particle
    weight up to rounding.  Accumulation goes through one `np.bincount`, which
    makes the result independent of particle order and worker count.
    """
    if not np.all(np.isfinite(weights)):
        raise ValueError("non-finite particle weight; rejecting deposition")
    if not np.all(np.isfinite(positions)):
        raise ValueError("non-finite particle position; rejecting deposition")
    i0, i1, f = _cic_corners(positions, spec)
    n2, n3 = spec.n2, spec.n3
    w0 = 1.0 - f
    idx_parts = []
    wgt_parts = []
    for c1, g1 in ((i0[:, 0], w0[:, 0]), (i1[:, 0], f[:, 0])):
        for c2, g2 in ((i0[:, 1], w0[:, 1]), (i1[:, 1], f[:, 1])):
            for c3, g3 in ((i0[:, 2], w0[:, 2]), (i1[:, 2], f[:, 2])):
                idx_parts.append((c1 * n2 + c2) * n3 + c3)
                wgt_parts.append(weights * g1 * g2 * g3)
    idx = np.concatenate(idx_parts)
    wgt = np.concatenate(wgt_parts)
    acc = np.bincount(idx, weights=wgt, minlength=spec.n_cells)
    values = acc.reshape(spec.shape) / spec.cell_volume
    return ScalarGridField(spec=spec, values=values)


def _gather(values: np.ndarray, i0, i1, f) -> np.ndarray:
    w0 = 1.0 - f
    out = np.zeros(f.shape[0])
    for c1, g1 in ((i0[:, 0], w0[:, 0]), (i1[:, 0], f[:, 0])):
        for c2, g2 in ((i0[:, 1], w0[:, 1]), (i1[:, 1], f[:, 1])):
            for c3, g3 in ((i0[:, 2], w0[:, 2]), (i1[:, 2], f[:, 2])):
                out += values[c1, c2, c3] * (g1 * g2 * g3)
    return out


def eval_scalar(fld: ScalarGridField, positions: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a scalar grid field at particle positions."""
    i0, i1, f = _cic_corners(positions, fld.spec)
    return _gather(fld.values, i0, i1, f)


def eval_field(fld: VectorGridField, positions: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a vector field; same kernel as deposition."""
    i0, i1, f = _cic_corners(positions, fld.spec)
    out = np.empty((positions.shape[0], 3))
    out[:, 0] = _gather(fld.e1, i0, i1, f)
    out[:, 1] = _gather(fld.e2, i0, i1, f)
    out[:, 2] = _gather(fld.epar, i0, i1, f)
    return out


def _symbol(spec: GridSpec, eps: float, model: PoissonModel) -> np.ndarray:
    k1, k2, k3 = spec.wavenumbers()
    kperp2 = (2.0 * np.pi) ** 2 * (k1 * k1 + k2 * k2)
    kpar2 = (2.0 * np.pi) ** 2 * (k3 * k3)
    if model is PoissonModel.QUASINEUTRAL:
        return 1.0 + eps * eps * kpar2 + kperp2
    if model is PoissonModel.FIXED_IONS:
        return eps * eps * kpar2 + kperp2
    if model is PoissonModel.LIMIT:
        return np.broadcast_to(1.0 + kperp2, spec.shape)
    raise ValueError(f"unknown model {model}")


def solve_poisson(
    rho: ScalarGridField, eps: float, model: PoissonModel
) -> ScalarGridField:
    """Solve the selected elliptic problem for the potential.

    The right-hand side is rho minus its exact discrete mean for the
    quasineutral and fixed-ion models (so the zero mode of the potential
    vanishes), and rho - 1 for the limit model, whose background charge is the
    unit total mass.  The fixed-ion solve additionally demands that the total
    charge matches the unit ion background to within 1e-10.
    """
    if model is not PoissonModel.LIMIT and not eps > 0.0:
        raise ValueError(f"eps must be positive for model {model.value}, got {eps}")
    rho_hat = np.fft.fftn(rho.values)
    ncells = rho.spec.n_cells
    if model is PoissonModel.FIXED_IONS:
        total_charge = rho_hat[0, 0, 0].real / ncells
        if abs(total_charge - 1.0) > CHARGE_BALANCE_TOL:
            raise ChargeImbalanceError(
                "fixed-ion solve needs unit total charge against the ion "
                f"background; got {total_charge!r} (charge-imbalance bug upstream?)"
            )
    sigma = _symbol(rho.spec, eps, model)
    if model is PoissonModel.LIMIT:
        rho_hat[0, 0, 0] -= ncells  # subtract the unit background density
    else:
        rho_hat[0, 0, 0] = 0.0  # subtract the exact discrete mean
    if model is PoissonModel.FIXED_IONS:
        sigma = sigma.copy()
        sigma[0, 0, 0] = 1.0  # zero mode already removed from the rhs
    values = np.fft.ifftn(rho_hat / sigma).real
    return ScalarGridField(
        spec=rho.spec, values=values, mean_zero=model is not PoissonModel.LIMIT
    )


def spectral_gradient(
    fld: ScalarGridField,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spectral first derivatives (d1, d2, dpar); Nyquist modes dropped."""
    v_hat = np.fft.fftn(fld.values)
    k1, k2, k3 = fld.spec.wavenumbers()
    out = []
    for k, n in ((k1, fld.spec.n1), (k2, fld.spec.n2), (k3, fld.spec.n3)):
        factor = 2j * np.pi * np.where(k == -n // 2, 0.0, k)
        out.append(np.fft.ifftn(factor * v_hat).real)
    return tuple(out)


def field_from_potential(
    pot: ScalarGridField, eps: float, model: PoissonModel
) -> VectorGridField:
    """Electric field from the potential.

    Perpendicular components are -grad_perp V for every model.  The parallel
    component is -eps * dpar V in the scaled models and identically zero in
    the limit model.
    """
    d1, d2, dpar = spectral_gradient(pot)
    if model is PoissonModel.LIMIT:
        epar = np.zeros_like(dpar)
    else:
        epar = -eps * dpar
    return VectorGridField(spec=pot.spec, e1=-d1, e2=-d2, epar=epar)


def write_field_snapshot(fld: ScalarGridField, path) -> None:
    """Write a scalar field in the FLRS binary format.

    Layout: magic "FLRS", u32 version, u32 n1 n2 n3, then float64 node values
    in row-major order with x1 varying fastest.  All integers and floats are
    little-endian.
    """
    spec = fld.spec
    header = FIELD_MAGIC + struct.pack(
        "<IIII", FIELD_FORMAT_VERSION, spec.n1, spec.n2, spec.n3
    )
    payload = np.ascontiguousarray(fld.values.transpose(2, 1, 0), dtype="<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())
    except OSError as exc:
        raise OSError(f"writing field snapshot {path}: {exc}") from exc


def read_field_snapshot(path) -> ScalarGridField:
    """Read a scalar field written by `write_field_snapshot`."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"reading field snapshot {path}: {exc}") from exc
    if len(raw) < 20 or raw[:4] != FIELD_MAGIC:
        raise SnapshotFormatError(f"{path}: not an FLRS field snapshot")
    version, n1, n2, n3 = struct.unpack("<IIII", raw[4:20])
    if version != FIELD_FORMAT_VERSION:
        raise SnapshotFormatError(f"{path}: unsupported FLRS version {version}")
    expected = 20 + 8 * n1 * n2 * n3
    if len(raw) != expected:
        raise SnapshotFormatError(
            f"{path}: truncated FLRS payload ({len(raw)} bytes, expected {expected})"
        )
    values = np.frombuffer(raw[20:], dtype="<f8").reshape(n3, n2, n1).transpose(2, 1, 0)
    return ScalarGridField(spec=GridSpec(n1, n2, n3), values=values.copy())
