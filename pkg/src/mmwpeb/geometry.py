"""Antenna arrays, node placements and per-path channel geometry.

All geometry is two-dimensional. Angles are wrapped to [-pi, pi) and every
global angle is measured against the horizontal axis; array-relative angles
subtract the array orientation alpha. The reference point of every array is
its element centroid, which downstream large-array identities require.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class DegenerateGeometryError(ValueError):
    """Raised when node/scatterer placements coincide or collapse."""


def wrap_angle(theta):
    """Wrap angle(s) to [-pi, pi)."""
    return np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


def unit_vector(theta):
    """u(theta) = [cos(theta), sin(theta)], stacked along the last axis."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def perp_vector(theta):
    """u_perp(theta) = u(theta - pi/2) = [sin(theta), -cos(theta)]."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.sin(theta), -np.cos(theta)], axis=-1)


def _freeze(arr):
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ArrayGeometry:
    """Planar antenna array given as polar element offsets about the centroid.

    Attributes
    ----------
    offsets : (n,) float array
        Element distances d_j >= 0 from the reference point, meters.
    angles : (n,) float array
        Element angles psi_j in the local array frame, radians in [-pi, pi).
    alpha : float
        Array orientation w.r.t. the horizontal axis, radians.
    """

    offsets: np.ndarray
    angles: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        psi = wrap_angle(np.atleast_1d(self.angles))
        if d.size == 0:
            raise ValueError("array needs at least one element")
        if d.shape != psi.shape:
            raise ValueError("offsets and angles must have equal length")
        if np.any(d < 0):
            raise ValueError("element offsets must be nonnegative")
        # Re-center on the centroid so the reference point assumption holds
        # even for arrays specified about some other point.
        xy = d[:, None] * unit_vector(psi)
        centroid = xy.mean(axis=0)
        if np.linalg.norm(centroid) > 1e-12:
            xy = xy - centroid
            d = np.linalg.norm(xy, axis=1)
            psi = wrap_angle(np.arctan2(xy[:, 1], xy[:, 0]))
            psi[d == 0.0] = 0.0
        object.__setattr__(self, "offsets", _freeze(d))
        object.__setattr__(self, "angles", _freeze(psi))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def n_elements(self) -> int:
        return self.offsets.size

    def centroid_residual(self) -> float:
        """Norm of sum_j d_j u(psi_j); < 1e-9 m by construction."""
        return float(np.linalg.norm(
            (self.offsets[:, None] * unit_vector(self.angles)).sum(axis=0)))

    def aperture(self) -> float:
        """Largest element-to-element distance, meters."""
        xy = self.offsets[:, None] * unit_vector(self.angles)
        diff = xy[:, None, :] - xy[None, :, :]
        return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def build_ula(n: int, spacing: float, alpha: float = 0.0) -> ArrayGeometry:
    """Uniform linear array along the local x-axis, centroid at the origin."""
    if n < 1:
        raise ValueError("ULA needs n >= 1 elements")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pos = (np.arange(n) - (n - 1) / 2.0) * spacing
    psi = np.where(pos >= 0, 0.0, np.pi)
    return ArrayGeometry(np.abs(pos), psi, alpha)


def build_uca(n: int, spacing: float, alpha: float = 0.0) -> ArrayGeometry:
    """Uniform circular array with adjacent-element chord length `spacing`."""
    if n < 2:
        raise ValueError("UCA needs n >= 2 elements")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    radius = spacing / (2.0 * np.sin(np.pi / n))
    psi = 2.0 * np.pi * np.arange(n) / n
    return ArrayGeometry(np.full(n, radius), psi, alpha)


@dataclass(frozen=True)
class Placement:
    """Tx/Rx/scatterer positions plus an optional velocity on one side.

    `scatterers` holds the single-bounce incidence points, one per NLOS path;
    `velocity` (m/s) is attached to exactly the side named by `moving`.
    """

    p_tx: np.ndarray
    p_rx: np.ndarray
    scatterers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    velocity: np.ndarray | None = None
    moving: str | None = None

    def __post_init__(self):
        p_tx = np.asarray(self.p_tx, dtype=float).reshape(2)
        p_rx = np.asarray(self.p_rx, dtype=float).reshape(2)
        sc = np.asarray(self.scatterers, dtype=float).reshape(-1, 2)
        if np.linalg.norm(p_rx - p_tx) < 1e-12:
            raise DegenerateGeometryError("Tx and Rx positions coincide")
        for k, s in enumerate(sc):
            if (np.linalg.norm(s - p_tx) < 1e-12
                    or np.linalg.norm(s - p_rx) < 1e-12):
                raise DegenerateGeometryError(
                    f"scatterer {k} coincides with an endpoint")
        if (self.velocity is None) != (self.moving is None):
            raise ValueError("velocity and moving side must be set together")
        if self.moving is not None and self.moving not in ("tx", "rx"):
            raise ValueError("moving must be 'tx' or 'rx'")
        v = None
        if self.velocity is not None:
            v = _freeze(np.asarray(self.velocity, dtype=float).reshape(2))
        object.__setattr__(self, "p_tx", _freeze(p_tx))
        object.__setattr__(self, "p_rx", _freeze(p_rx))
        object.__setattr__(self, "scatterers", _freeze(sc))
        object.__setattr__(self, "velocity", v)

    @property
    def n_paths(self) -> int:
        return 1 + self.scatterers.shape[0]


@dataclass(frozen=True)
class ChannelGeometry:
    """Per-path delays, angles, distances and radial/tangential speeds.

    Arrays are indexed by path l = 0..L-1 with l = 0 the LOS path. For l = 0
    the scatterer distances `d_ts`/`d_rs` are filled with the Tx-Rx distance
    so every field has length L; they are not used by any LOS formula.
    """

    tau: np.ndarray            # absolute path delays, s
    dtau: np.ndarray           # tau_l - tau_0, s (dtau[0] == 0)
    theta_tx: np.ndarray       # global AOD per path, rad
    theta_rx: np.ndarray       # global AOA per path, rad
    theta_tx_rel: np.ndarray   # theta_tx - alpha_tx
    theta_rx_rel: np.ndarray   # theta_rx - alpha_rx
    d_tr: float                # Tx-Rx distance, m
    d_ts: np.ndarray           # Tx-scatterer distances, m
    d_rs: np.ndarray           # Rx-scatterer distances, m
    dtheta: np.ndarray         # wrapped theta_rx - theta_tx per path
    v_radial: np.ndarray | None    # v^T u(theta_side,l), m/s
    rho: np.ndarray | None         # v^T u_perp(theta_side,l), m/s
    moving: str | None
    collinear: np.ndarray = field(default=None)  # paths with dtau ~ 0

    def __post_init__(self):
        for name in ("tau", "dtau", "theta_tx", "theta_rx", "theta_tx_rel",
                     "theta_rx_rel", "d_ts", "d_rs", "dtheta", "collinear"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        if self.v_radial is not None:
            object.__setattr__(self, "v_radial", _freeze(self.v_radial))
            object.__setattr__(self, "rho", _freeze(self.rho))

    @property
    def n_paths(self) -> int:
        return self.tau.size

    @property
    def is_dynamic(self) -> bool:
        return self.v_radial is not None


def channel_geometry(placement: Placement,
                     array_tx: ArrayGeometry,
                     array_rx: ArrayGeometry) -> ChannelGeometry:
    """Map a placement to the geometric channel parameters of every path.

    The LOS AOA satisfies theta_rx[0] = theta_tx[0] + pi; path delays obey
    c tau_l = d_ts,l + d_rs,l. A scatterer on the Tx-Rx segment (dtau = 0)
    is legal but flagged in `collinear`.
    """
    p_t, p_r = placement.p_tx, placement.p_rx
    sc = placement.scatterers
    L = placement.n_paths
    c = SPEED_OF_LIGHT

    d_tr = float(np.linalg.norm(p_r - p_t))

    theta_t0 = float(np.arctan2(p_r[1] - p_t[1], p_r[0] - p_t[0]))
    theta_tx = np.empty(L)
    theta_rx = np.empty(L)
    d_ts = np.full(L, d_tr)
    d_rs = np.full(L, d_tr)
    tau = np.empty(L)
    tau[0] = d_tr / c
    theta_tx[0] = theta_t0
    theta_rx[0] = theta_t0 + np.pi

    for l in range(1, L):
        s = sc[l - 1]
        dt = float(np.linalg.norm(s - p_t))
        dr = float(np.linalg.norm(r := (s - p_r)))
        if dt < 1e-12 or dr < 1e-12:
            raise DegenerateGeometryError(
                f"scatterer {l} coincides with an endpoint")
        d_ts[l] = dt
        d_rs[l] = dr
        tau[l] = (dt + dr) / c
        theta_tx[l] = np.arctan2(s[1] - p_t[1], s[0] - p_t[0])
        theta_rx[l] = np.arctan2(r[1], r[0])

    theta_tx = wrap_angle(theta_tx)
    theta_rx = wrap_angle(theta_rx)
    dtau = tau - tau[0]
    dtheta = wrap_angle(theta_rx - theta_tx)
    collinear = np.zeros(L, dtype=bool)
    collinear[1:] = dtau[1:] < 1e-15

    v_radial = rho = None
    if placement.moving is not None:
        v = placement.velocity
        theta_side = theta_tx if placement.moving == "tx" else theta_rx
        v_radial = unit_vector(theta_side) @ v
        rho = perp_vector(theta_side) @ v

    return ChannelGeometry(
        tau=tau, dtau=dtau,
        theta_tx=theta_tx, theta_rx=theta_rx,
        theta_tx_rel=wrap_angle(theta_tx - array_tx.alpha),
        theta_rx_rel=wrap_angle(theta_rx - array_rx.alpha),
        d_tr=d_tr, d_ts=d_ts, d_rs=d_rs, dtheta=dtheta,
        v_radial=v_radial, rho=rho, moving=placement.moving,
        collinear=collinear)


@dataclass(frozen=True)
class PathGains:
    """Complex path coefficients h_l and the common reflection coefficient."""

    h: np.ndarray
    gamma_refl: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if np.any(np.abs(h) <= 0):
            raise ValueError("path gains must be nonzero")
        object.__setattr__(self, "h", _freeze(h))

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.h)


def path_gains(geom: ChannelGeometry, gamma_refl: float, lambda_c: float,
               rng: np.random.Generator) -> PathGains:
    """Free-space LOS gain plus reflection-scaled NLOS gains, random phases.

    |h_0| = lambda_c / (4 pi d_TR), |h_l| = gamma_refl lambda_c /
    (4 pi (d_ts,l + d_rs,l)); all phases i.i.d. uniform on [0, 2 pi).
    """
    if not 0.0 < gamma_refl <= 1.0:
        raise ValueError("gamma_refl must lie in (0, 1]")
    L = geom.n_paths
    mag = np.empty(L)
    mag[0] = lambda_c / (4.0 * np.pi * geom.d_tr)
    if L > 1:
        mag[1:] = gamma_refl * lambda_c / (
            4.0 * np.pi * (geom.d_ts[1:] + geom.d_rs[1:]))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=L)
    return PathGains(h=mag * np.exp(1j * phases), gamma_refl=gamma_refl)
