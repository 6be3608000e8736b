"""Channel-parameter information mapped to position-parameter information.

Builds the Jacobian of the channel parameter vector w.r.t. the position
parameter vector (receiver or transmitter estimand, static or dynamic, with
or without knowledge of the time of transmission), forms the equivalent FIM
by Schur complement over the nuisance parameters, and extracts the scalar
position/orientation/velocity error bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from mmwpeb.geometry import (
    SPEED_OF_LIGHT,
    ChannelGeometry,
    perp_vector,
    unit_vector,
    _freeze,
)
from mmwpeb.fim_exact import FisherMatrix

_COND_LIMIT = 1e12


class NotIdentifiableError(ValueError):
    """Raised when the requested parameters are not identifiable.

    Carries the condition number of the offending block in
    `condition_number`.
    """

    def __init__(self, message: str, condition_number: float):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


@dataclass(frozen=True)
class TransformationMatrix:
    """T with [T]_ij = d phi_j / d phi~_i, rows labelled by position
    parameters and columns by channel parameters."""

    values: np.ndarray
    row_labels: tuple
    col_labels: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.row_labels), len(self.col_labels)):
            raise ValueError("label counts must match the matrix shape")
        object.__setattr__(self, "values", _freeze(vals))
        object.__setattr__(self, "row_labels", tuple(self.row_labels))
        object.__setattr__(self, "col_labels", tuple(self.col_labels))

    def row(self, label: str) -> int:
        return self.row_labels.index(label)

    def col(self, label: str) -> int:
        return self.col_labels.index(label)

    def drop_rows(self, labels) -> "TransformationMatrix":
        """Treat the named position parameters as known (delete their rows)."""
        keep = [i for i, lbl in enumerate(self.row_labels)
                if lbl not in set(labels)]
        return TransformationMatrix(
            self.values[keep], tuple(self.row_labels[i] for i in keep),
            self.col_labels)


def position_labels(n_paths: int, mode: str, dynamic: bool,
                    ktt: bool = False) -> tuple:
    """Position parameter labels: p, alpha, [v,] timing, gains, scatterers."""
    if mode not in ("rx", "tx"):
        raise ValueError("mode must be 'rx' or 'tx'")
    out = ["x_m", "y_m", "alpha_rad"]
    if dynamic:
        out += ["vx_mps", "vy_mps"]
    if not ktt:
        out.append("tau_s_s")
    out += ["h_re_0", "h_im_0"]
    for l in range(1, n_paths):
        out += [f"sx_{l}_m", f"sy_{l}_m", f"h_re_{l}", f"h_im_{l}"]
    return tuple(out)


def transformation_matrix(geom: ChannelGeometry, mode: str,
                          dynamic: bool | None = None,
                          ktt: bool = False) -> TransformationMatrix:
    """Jacobian between channel and position parameter vectors.

    mode "rx": the receiver position/orientation (and velocity, if dynamic)
    are unknown, the transmitter side is known; "tx" is the converse. With
    `ktt` the common timing column is the absolute LOS delay and maps onto
    the estimated position instead of a free nuisance parameter.
    """
    if dynamic is None:
        dynamic = geom.is_dynamic
    if dynamic:
        if not geom.is_dynamic:
            raise ValueError("dynamic transformation needs a moving geometry")
        if geom.moving != mode:
            raise ValueError(
                f"velocity is attached to the {geom.moving} side; dynamic "
                f"mode '{mode}' does not match")

    L = geom.n_paths
    c = SPEED_OF_LIGHT
    own_is_rx = mode == "rx"
    theta_own = geom.theta_rx if own_is_rx else geom.theta_tx
    d_own = geom.d_rs if own_is_rx else geom.d_ts

    rows = position_labels(L, mode, dynamic, ktt)
    timing_label = "tau_0_s" if ktt else "tau_s_s"
    cols = [timing_label]
    for l in range(L):
        if l > 0:
            cols.append(f"dtau_{l}_s")
        cols.append(f"theta_t_{l}_rad")
        cols.append(f"theta_r_{l}_rad")
        if dynamic:
            cols.append(f"v_{l}_mps")
        cols.append(f"h_re_{l}")
        cols.append(f"h_im_{l}")
    cols = tuple(cols)

    t = np.zeros((len(rows), len(cols)))
    ri = {lbl: i for i, lbl in enumerate(rows)}
    ci = {lbl: i for i, lbl in enumerate(cols)}
    pos = [ri["x_m"], ri["y_m"]]

    u0_own = unit_vector(theta_own[0])
    if ktt:
        # u(theta_own,0) points from the estimated node toward the known one,
        # so the LOS range shrinks along it: d tau_0 / d p_own = -u0_own / c.
        t[pos, ci[timing_label]] = -u0_own / c
    else:
        t[ri["tau_s_s"], ci["tau_s_s"]] = 1.0

    for l in range(L):
        th_t, th_r = geom.theta_tx[l], geom.theta_rx[l]
        up_own = perp_vector(theta_own[l])
        d_ang = geom.d_tr if l == 0 else d_own[l]

        if l > 0:
            col = ci[f"dtau_{l}_s"]
            t[pos, col] = (u0_own - unit_vector(theta_own[l])) / c
            t[ri[f"sx_{l}_m"], col], t[ri[f"sy_{l}_m"], col] = (
                unit_vector(th_t) + unit_vector(th_r)) / c

        col_t, col_r = ci[f"theta_t_{l}_rad"], ci[f"theta_r_{l}_rad"]
        col_own = col_r if own_is_rx else col_t
        col_far = col_t if own_is_rx else col_r
        t[pos, col_own] = up_own / d_ang
        if l == 0:
            t[pos, col_far] = up_own / geom.d_tr
        alpha_col = col_r if own_is_rx else col_t
        t[ri["alpha_rad"], alpha_col] = -1.0
        if l > 0:
            srow = [ri[f"sx_{l}_m"], ri[f"sy_{l}_m"]]
            t[srow, col_t] = -perp_vector(th_t) / geom.d_ts[l]
            t[srow, col_r] = -perp_vector(th_r) / geom.d_rs[l]

        if dynamic:
            col_v = ci[f"v_{l}_mps"]
            rho = geom.rho[l]
            t[pos, col_v] = -rho * up_own / d_ang
            t[[ri["vx_mps"], ri["vy_mps"]], col_v] = unit_vector(theta_own[l])
            if l > 0:
                t[[ri[f"sx_{l}_m"], ri[f"sy_{l}_m"]], col_v] = (
                    rho * up_own / d_own[l])

        t[ri[f"h_re_{l}"], ci[f"h_re_{l}"]] = 1.0
        t[ri[f"h_im_{l}"], ci[f"h_im_{l}"]] = 1.0

    return TransformationMatrix(t, rows, cols)


def _equilibrated(sym: np.ndarray):
    """Jacobi scaling that makes conditioning unit-free.

    Information matrices mix units (s^-2, m^-2, rad^-2, ...) whose raw
    condition numbers are meaningless; D^-1/2 A D^-1/2 with D = diag(A) is
    the scale-invariant quantity the identifiability threshold applies to.
    """
    d = np.diag(sym).copy()
    if np.any(d <= 0):
        return None, None
    s = 1.0 / np.sqrt(d)
    return sym * s[:, None] * s[None, :], s


def _psd_condition(sym: np.ndarray) -> float:
    eq, _ = _equilibrated(sym)
    if eq is None:
        return float("inf")
    return float(np.linalg.cond(eq))


def _solve_psd(block: np.ndarray, rhs: np.ndarray, what: str,
               allow_singular: bool = False) -> np.ndarray:
    """Solve a (near-)PSD system via symmetric factorization, raising the
    typed identifiability error on ill-conditioned blocks.

    With `allow_singular` a rank-deficient block is inverted on its range
    only. That is the correct Schur-complement limit when the lost
    directions carry no information at all (zero rows), as happens for a
    scatterer sitting exactly on the Tx-Rx segment.
    """
    sym = 0.5 * (block + block.T)
    if allow_singular:
        d = np.diag(sym).copy()
        floor = 1e-14 * max(d.max(), 1e-300)
        nz = np.flatnonzero(d > floor)
        x = np.zeros((sym.shape[0], rhs.shape[1]))
        if nz.size == 0:
            return x
        s = 1.0 / np.sqrt(d[nz])
        eq = sym[np.ix_(nz, nz)] * s[:, None] * s[None, :]
        w, v = np.linalg.eigh(eq)
        keep = w > 1e-10 * w.max()
        inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
        rhs_eq = s[:, None] * rhs[nz]
        x[nz] = s[:, None] * (v @ (inv_w[:, None] * (v.T @ rhs_eq)))
        return x
    eq, s = _equilibrated(sym)
    cond = float("inf") if eq is None else float(np.linalg.cond(eq))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NotIdentifiableError(f"{what} block is singular", cond)
    try:
        cho = scipy.linalg.cho_factor(eq, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NotIdentifiableError(f"{what} block is singular", cond) from exc
    return s[:, None] * scipy.linalg.cho_solve(cho, s[:, None] * rhs)


def efim(j_phi: FisherMatrix, t: TransformationMatrix,
         keep: int) -> FisherMatrix:
    """Equivalent FIM on the first `keep` position parameters.

    Computes T_po J T_po^T - T_po J T_np^T (T_np J T_np^T)^{-1} T_np J
    T_po^T; equals the inverse of the top-left keep x keep block of
    (T J T^T)^{-1} whenever the full transformed matrix is invertible.
    Raises NotIdentifiableError when the nuisance block, or the resulting
    EFIM itself, is numerically singular.
    """
    if t.col_labels != j_phi.labels:
        raise ValueError("transformation columns do not match FIM labels")
    if not 1 <= keep < len(t.row_labels):
        raise ValueError("keep must name a proper leading block")
    tj = t.values @ j_phi.values          # rows: position params
    full = tj @ t.values.T
    a = full[:keep, :keep]
    b = full[:keep, keep:]
    d = full[keep:, keep:]
    x = _solve_psd(d, b.T, "nuisance")
    e = a - b @ x
    e = 0.5 * (e + e.T)
    cond = _psd_condition(e)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NotIdentifiableError("equivalent FIM is singular", cond)
    return FisherMatrix(t.row_labels[:keep], e)


def _inverse_entries(e: FisherMatrix, labels) -> float | None:
    """Sum of inverse-matrix diagonal entries for the named labels, or None
    when the matrix is numerically singular."""
    sym = 0.5 * (e.values + e.values.T)
    eq, s = _equilibrated(sym)
    if eq is None or np.linalg.cond(eq) > _COND_LIMIT:
        return None
    try:
        cho = scipy.linalg.cho_factor(eq, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return None
    inv = s[:, None] * scipy.linalg.cho_solve(cho, np.eye(e.size)) * s[None, :]
    total = 0.0
    for lbl in labels:
        val = inv[e.index(lbl), e.index(lbl)]
        if val < 0:
            return None
        total += val
    return total


def peb(e: FisherMatrix) -> float:
    """Position error bound sqrt([E^-1]_xx + [E^-1]_yy), meters.

    Singular information yields math.inf (the "infinite PEB" signal used by
    the scenario runners)."""
    total = _inverse_entries(e, ("x_m", "y_m"))
    return float("inf") if total is None else float(np.sqrt(total))


def oeb(e: FisherMatrix) -> float:
    """Orientation error bound sqrt([E^-1]_alpha,alpha), radians."""
    total = _inverse_entries(e, ("alpha_rad",))
    return float("inf") if total is None else float(np.sqrt(total))


def veb(e: FisherMatrix) -> float:
    """Velocity error bound sqrt([E^-1]_vx,vx + [E^-1]_vy,vy), m/s."""
    if "vx_mps" not in e.labels:
        raise ValueError("EFIM carries no velocity parameters")
    total = _inverse_entries(e, ("vx_mps", "vy_mps"))
    return float("inf") if total is None else float(np.sqrt(total))
