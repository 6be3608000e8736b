"""Exact Fisher information of the channel parameter vector.

The channel parameter vector stacks, per path, the differential delay,
array-relative AOD/AOA, (in the dynamic case) the radial speed, and the
real/imaginary parts of the complex gain, with a single common timing
parameter up front. The FIM follows the complex-Gaussian identity

    J_ij = (1/sigma^2) sum_{b,p} Re{ dm^H (W W^H)^{-1} dm }

evaluated either for a realized reference signal or in expectation over an
i.i.d. reference signal with identity beams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mmwpeb.geometry import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    ChannelGeometry,
    PathGains,
    perp_vector,
    unit_vector,
    _freeze,
)
from mmwpeb.waveform import (
    BeamConfig,
    WaveformConfig,
    dirichlet_q,
    dirichlet_q_cotdiff,
)


class UnsupportedConfigError(ValueError):
    """Raised when an operation is asked for a configuration it excludes."""


@dataclass(frozen=True)
class FisherMatrix:
    """Real symmetric information matrix with a parameter-label index."""

    labels: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError("Fisher matrix must be square")
        if len(self.labels) != vals.shape[0]:
            raise ValueError("label count must match matrix size")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def entry(self, row: str, col: str) -> float:
        return float(self.values[self.index(row), self.index(col)])

    def submatrix(self, labels) -> "FisherMatrix":
        idx = [self.index(lbl) for lbl in labels]
        return FisherMatrix(tuple(labels), self.values[np.ix_(idx, idx)])

    def symmetry_error(self) -> float:
        """Relative asymmetry ||J - J^T|| / ||J||."""
        scale = np.linalg.norm(self.values)
        if scale == 0:
            return 0.0
        return float(np.linalg.norm(self.values - self.values.T) / scale)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(
            0.5 * (self.values + self.values.T)).min())

    def validate(self, sym_tol: float = 1e-10, psd_tol: float = 1e-9):
        """Assert the symmetric-PSD contract (tolerances relative)."""
        if self.symmetry_error() > sym_tol:
            raise ValueError("Fisher matrix is not symmetric")
        tr = float(np.trace(self.values))
        if self.min_eigenvalue() < -psd_tol * max(tr, 0.0):
            raise ValueError("Fisher matrix is not positive semidefinite")


@dataclass(frozen=True)
class ChannelParams:
    """Evaluation point of the channel parameter vector.

    `timing` selects the common delay interpretation: "sync" for the
    synchronization offset tau_s (no knowledge of the transmission time) or
    "absolute" for the LOS delay tau_0 (perfect KTT), which downstream
    Jacobians map onto position.
    """

    tau_ref: float
    dtau: np.ndarray
    theta_t_rel: np.ndarray
    theta_r_rel: np.ndarray
    h: np.ndarray
    v: np.ndarray | None = None
    timing: str = "sync"

    def __post_init__(self):
        dtau = np.asarray(self.dtau, dtype=float)
        if abs(dtau[0]) > 1e-18:
            raise ValueError("dtau[0] must be zero (LOS reference)")
        if self.timing not in ("sync", "absolute"):
            raise ValueError("timing must be 'sync' or 'absolute'")
        L = dtau.size
        for name in ("theta_t_rel", "theta_r_rel", "h"):
            if np.asarray(getattr(self, name)).size != L:
                raise ValueError(f"{name} must have one entry per path")
        object.__setattr__(self, "dtau", _freeze(dtau))
        object.__setattr__(self, "theta_t_rel",
                           _freeze(np.asarray(self.theta_t_rel, dtype=float)))
        object.__setattr__(self, "theta_r_rel",
                           _freeze(np.asarray(self.theta_r_rel, dtype=float)))
        object.__setattr__(self, "h",
                           _freeze(np.asarray(self.h, dtype=complex)))
        if self.v is not None:
            v = np.asarray(self.v, dtype=float)
            if v.size != L:
                raise ValueError("v must have one entry per path")
            object.__setattr__(self, "v", _freeze(v))

    @classmethod
    def from_geometry(cls, geom: ChannelGeometry, gains: PathGains,
                      tau_s: float = 0.0, ktt: bool = False,
                      dynamic: bool | None = None) -> "ChannelParams":
        if dynamic is None:
            dynamic = geom.is_dynamic
        if dynamic and not geom.is_dynamic:
            raise ValueError("dynamic parameters need a moving geometry")
        return cls(
            tau_ref=float(geom.tau[0]) if ktt else float(tau_s),
            dtau=geom.dtau,
            theta_t_rel=geom.theta_tx_rel,
            theta_r_rel=geom.theta_rx_rel,
            h=gains.h,
            v=geom.v_radial if dynamic else None,
            timing="absolute" if ktt else "sync")

    @property
    def n_paths(self) -> int:
        return self.dtau.size

    @property
    def is_dynamic(self) -> bool:
        return self.v is not None

    @property
    def timing_label(self) -> str:
        return "tau_s_s" if self.timing == "sync" else "tau_0_s"

    def labels(self) -> tuple:
        """Parameter labels in canonical order (5L static, 6L dynamic)."""
        out = [self.timing_label]
        for l in range(self.n_paths):
            if l > 0:
                out.append(f"dtau_{l}_s")
            out.append(f"theta_t_{l}_rad")
            out.append(f"theta_r_{l}_rad")
            if self.is_dynamic:
                out.append(f"v_{l}_mps")
            out.append(f"h_re_{l}")
            out.append(f"h_im_{l}")
        return tuple(out)

    def to_vector(self) -> np.ndarray:
        out = [self.tau_ref]
        for l in range(self.n_paths):
            if l > 0:
                out.append(self.dtau[l])
            out.append(self.theta_t_rel[l])
            out.append(self.theta_r_rel[l])
            if self.is_dynamic:
                out.append(self.v[l])
            out.append(self.h[l].real)
            out.append(self.h[l].imag)
        return np.array(out)

    def from_vector(self, vec) -> "ChannelParams":
        vec = np.asarray(vec, dtype=float)
        L = self.n_paths
        step = 6 if self.is_dynamic else 5
        if vec.size != step * L:
            raise ValueError("vector length does not match parameter count")
        dtau = np.zeros(L)
        th_t = np.empty(L)
        th_r = np.empty(L)
        v = np.empty(L) if self.is_dynamic else None
        h = np.empty(L, dtype=complex)
        k = 1
        for l in range(L):
            if l > 0:
                dtau[l] = vec[k]
                k += 1
            th_t[l] = vec[k]
            th_r[l] = vec[k + 1]
            k += 2
            if self.is_dynamic:
                v[l] = vec[k]
                k += 1
            h[l] = vec[k] + 1j * vec[k + 1]
            k += 2
        return ChannelParams(tau_ref=float(vec[0]), dtau=dtau,
                             theta_t_rel=th_t, theta_r_rel=th_r, h=h, v=v,
                             timing=self.timing)


def _steering_tables(cfg: WaveformConfig, array_tx: ArrayGeometry,
                     array_rx: ArrayGeometry, params: ChannelParams):
    """Per-subcarrier steering matrices and their angle derivatives.

    Returns (A_T, Ad_T, A_R, Ad_R) with shapes (P, N, L); Ad = dA/dtheta.
    """
    om = cfg.omega_c + cfg.omega_p
    out = []
    for array, theta in ((array_tx, params.theta_t_rel),
                         (array_rx, params.theta_r_rel)):
        proj = unit_vector(array.angles) @ unit_vector(theta).T     # (N, L)
        tau_el = array.offsets[:, None] * proj / SPEED_OF_LIGHT
        dproj = unit_vector(array.angles) @ (-perp_vector(theta)).T
        dtau_el = array.offsets[:, None] * dproj / SPEED_OF_LIGHT
        a = np.exp(1j * om[:, None, None] * tau_el[None])
        ad = (1j * om[:, None, None] * dtau_el[None]) * a
        out.extend([a, ad])
    return out[0], out[1], out[2], out[3]


def _dynamic_kernels(cfg: WaveformConfig, params: ChannelParams):
    """Dirichlet kernel tables of the Doppler-extended model.

    Q, QC are (P, P, L) over (output p, input q, path); E is (N_B, P, L)
    holding the block/subcarrier phases; tb the effective block times.
    """
    om = cfg.omega_p
    om_tot = cfg.omega_c + om
    v = params.v
    phi = (om[:, None, None] - om[None, :, None]
           - om_tot[None, :, None] * v[None, None, :] / SPEED_OF_LIGHT
           ) * cfg.t_s / 2.0
    q = dirichlet_q(phi, cfg.n_dft)
    qc = dirichlet_q_cotdiff(phi, cfg.n_dft)
    b = np.arange(cfg.n_blocks)
    block_phase = (om_tot[None, :, None] / SPEED_OF_LIGHT
                   * v[None, None, :]
                   * b[:, None, None] * cfg.n_symbol * cfg.t_s)
    psi = om[None, :, None] * (params.dtau[None, None, :] + params.tau_ref) \
        - block_phase
    e = np.exp(-1j * psi)
    tb = (b * cfg.n_symbol + (cfg.n_dft - 1) / 2.0) * cfg.t_s
    return q, qc, e, tb


def _derivative_stack(cfg: WaveformConfig, beams: BeamConfig,
                      array_tx: ArrayGeometry, array_rx: ArrayGeometry,
                      params: ChannelParams, x: np.ndarray,
                      want_mean: bool, want_derivs: bool):
    """Shared evaluation core for the model mean and its derivatives.

    Returns (mean, stack, labels) where stack has shape
    (n_params, N_B, P, M_R); unsolicited outputs are None.
    """
    x = np.asarray(x, dtype=complex)
    expected = (cfg.n_blocks, cfg.n_subcarriers, beams.precoder.shape[0])
    if x.shape != expected:
        raise ValueError(f"x must have shape {expected}, got {x.shape}")
    a_t, ad_t, a_r, ad_r = _steering_tables(cfg, array_tx, array_rx, params)
    w = beams.combiner
    r = np.einsum("mn,pnl->pml", w, a_r)
    rd = np.einsum("mn,pnl->pml", w, ad_r)
    t = np.einsum("pjl,bpj->bpl", a_t, x)
    td = np.einsum("pjl,bpj->bpl", ad_t, x)
    g = cfg.gain
    h = params.h
    om = cfg.omega_p
    om_tot = cfg.omega_c + om
    L = params.n_paths
    labels = params.labels()

    if not params.is_dynamic:
        phase = g * np.exp(-1j * om[:, None]
                           * (params.tau_ref + params.dtau[None, :]))
        c0 = phase * h[None, :]
        mean = np.einsum("pl,bpl,pml->bpm", c0, t, r) if want_mean else None
        if not want_derivs:
            return mean, None, labels
        stack = np.empty((len(labels), *expected[:2], w.shape[0]),
                         dtype=complex)
        k = 0
        stack[k] = np.einsum("p,pl,bpl,pml->bpm", -1j * om, c0, t, r)
        k += 1
        for l in range(L):
            cl = c0[:, l]
            if l > 0:
                stack[k] = np.einsum("p,bp,pm->bpm", -1j * om * cl,
                                     t[:, :, l], r[:, :, l])
                k += 1
            stack[k] = np.einsum("p,bp,pm->bpm", cl, td[:, :, l], r[:, :, l])
            stack[k + 1] = np.einsum("p,bp,pm->bpm", cl, t[:, :, l],
                                     rd[:, :, l])
            dh = np.einsum("p,bp,pm->bpm", phase[:, l], t[:, :, l],
                           r[:, :, l])
            stack[k + 2] = dh
            stack[k + 3] = 1j * dh
            k += 4
        return mean, stack, labels

    q, qc, e, tb = _dynamic_kernels(cfg, params)
    f = g * e * t          # (N_B, P(q), L)
    fd = g * e * td
    mean = (np.einsum("l,bql,pql,qml->bpm", h, f, q, r)
            if want_mean else None)
    if not want_derivs:
        return mean, None, labels
    stack = np.empty((len(labels), *expected[:2], w.shape[0]), dtype=complex)
    k = 0
    stack[k] = np.einsum("l,q,bql,pql,qml->bpm", h, -1j * om, f, q, r)
    k += 1
    fac = om_tot / SPEED_OF_LIGHT
    for l in range(L):
        fl, fdl = f[:, :, l], fd[:, :, l]
        ql, qcl = q[:, :, l], qc[:, :, l]
        rl, rdl = r[:, :, l], rd[:, :, l]
        if l > 0:
            stack[k] = h[l] * np.einsum("q,bq,pq,qm->bpm", -1j * om, fl, ql,
                                        rl)
            k += 1
        stack[k] = h[l] * np.einsum("bq,pq,qm->bpm", fdl, ql, rl)
        stack[k + 1] = h[l] * np.einsum("bq,pq,qm->bpm", fl, ql, rdl)
        k += 2
        # dQ/dv and the block phase produce the cot-difference factor plus
        # the j(bM + (N-1)/2) Ts term, all scaled by (omega_c + omega_q)/c.
        dv = (np.einsum("q,bq,pq,qm->bpm", fac, fl, qcl, rl) * cfg.t_s / 2.0
              + 1j * np.einsum("q,b,bq,pq,qm->bpm", fac, tb, fl, ql, rl))
        stack[k] = h[l] * dv
        k += 1
        dh = np.einsum("bq,pq,qm->bpm", fl, ql, rl)
        stack[k] = dh
        stack[k + 1] = 1j * dh
        k += 2
    return mean, stack, labels


def model_mean(cfg: WaveformConfig, beams: BeamConfig,
               array_tx: ArrayGeometry, array_rx: ArrayGeometry,
               params: ChannelParams, x: np.ndarray) -> np.ndarray:
    """Noiseless post-combining observation mean m_b[p], (N_B, P, M_R).

    Static parameters use the per-subcarrier model; dynamic parameters
    activate the Dirichlet-kernel inter-carrier model, which reproduces the
    static output exactly in the v -> 0 limit.
    """
    mean, _, _ = _derivative_stack(cfg, beams, array_tx, array_rx, params, x,
                                   want_mean=True, want_derivs=False)
    return mean


def mean_derivatives(cfg: WaveformConfig, beams: BeamConfig,
                     array_tx: ArrayGeometry, array_rx: ArrayGeometry,
                     params: ChannelParams, x: np.ndarray,
                     which: str) -> np.ndarray:
    """Analytic derivative of `model_mean` w.r.t. one labelled parameter."""
    _, stack, labels = _derivative_stack(cfg, beams, array_tx, array_rx,
                                         params, x, want_mean=False,
                                         want_derivs=True)
    if which not in labels:
        raise ValueError(f"unknown parameter label {which!r}")
    return stack[labels.index(which)]


def _combiner_weight(beams: BeamConfig) -> np.ndarray:
    gram = beams.combiner @ beams.combiner.conj().T
    if np.linalg.cond(gram) > 1e12:
        raise ValueError("combiner Gram matrix W W^H is singular")
    return np.linalg.inv(gram)


def fim_channel(cfg: WaveformConfig, beams: BeamConfig,
                array_tx: ArrayGeometry, array_rx: ArrayGeometry,
                params: ChannelParams, x: np.ndarray,
                bp_mask: np.ndarray | None = None) -> FisherMatrix:
    """FIM of the channel parameter vector for a realized reference signal.

    `bp_mask` restricts the (block, subcarrier) sum to a subset of output
    terms; partitions of the sum add up to the full matrix, which is the
    parallelization contract of this operation.
    """
    _, stack, labels = _derivative_stack(cfg, beams, array_tx, array_rx,
                                         params, x, want_mean=False,
                                         want_derivs=True)
    if bp_mask is not None:
        stack = stack * np.asarray(bp_mask, dtype=float)[None, :, :, None]
    g = _combiner_weight(beams)
    j = np.einsum("ibpm,mn,jbpn->ij", stack.conj(), g, stack,
                  optimize=True).real
    return FisherMatrix(labels, j / cfg.noise_var)


def _basis_signals(cfg: WaveformConfig, n_tx: int) -> np.ndarray:
    """Deterministic signal basis whose FIM sum equals the expectation.

    The FIM is linear in x_b[p] x_b[p]^H, so summing it over scaled unit
    vectors e_k reproduces E[x x^H] = gamma_p P_T / N_T I exactly.
    """
    scale = np.sqrt(cfg.weights * cfg.p_tx / n_tx)
    basis = np.zeros((n_tx, cfg.n_blocks, cfg.n_subcarriers, n_tx),
                     dtype=complex)
    for k in range(n_tx):
        basis[k, :, :, k] = scale[None, :]
    return basis


def fim_channel_expected(cfg: WaveformConfig, array_tx: ArrayGeometry,
                         array_rx: ArrayGeometry,
                         params: ChannelParams,
                         beams: BeamConfig | None = None) -> FisherMatrix:
    """Expected FIM over an i.i.d. reference signal, identity beams only.

    The static case is evaluated in closed form; the dynamic case sums the
    realized FIM over a deterministic signal basis, which equals the
    expectation exactly because the FIM is quadratic in the signal.
    """
    n_tx, n_rx = array_tx.n_elements, array_rx.n_elements
    if beams is None:
        beams = BeamConfig.identity(n_tx, n_rx)
    elif not beams.is_identity:
        raise UnsupportedConfigError(
            "expected FIM is defined for identity precoder/combiner only")

    if params.is_dynamic:
        labels = params.labels()
        total = np.zeros((len(labels), len(labels)))
        for xk in _basis_signals(cfg, n_tx):
            total += fim_channel(cfg, beams, array_tx, array_rx, params,
                                 xk).values
        return FisherMatrix(labels, total)

    a_t, ad_t, a_r, ad_r = _steering_tables(cfg, array_tx, array_rx, params)
    om = cfg.omega_p
    h = params.h
    L = params.n_paths
    labels = params.labels()
    n_par = len(labels)

    # Per-parameter path coefficients plus (u, v) steering types; type 0 is
    # the plain response, type 1 its angle derivative.
    k_mat = np.zeros((n_par, L), dtype=complex)
    u_type = np.zeros(n_par, dtype=int)
    v_type = np.zeros(n_par, dtype=int)
    row = {"tau": 0}
    k = 1
    for l in range(L):
        if l > 0:
            row[f"dtau_{l}"] = k
            k += 1
        row[f"theta_t_{l}"] = k
        v_type[k] = 1
        row[f"theta_r_{l}"] = k + 1
        u_type[k + 1] = 1
        row[f"h_re_{l}"] = k + 2
        row[f"h_im_{l}"] = k + 3
        k += 4

    total = np.zeros((n_par, n_par))
    weight = cfg.n_blocks * cfg.weights * cfg.p_tx / (n_tx * cfg.noise_var)
    for p in range(cfg.n_subcarriers):
        st = np.concatenate([a_t[p], ad_t[p]], axis=1)    # (N_T, 2L)
        sr = np.concatenate([a_r[p], ad_r[p]], axis=1)
        gram_t = st.conj().T @ st
        gram_r = sr.conj().T @ sr
        phase = cfg.gain * np.exp(-1j * om[p]
                                  * (params.tau_ref + params.dtau))
        c0 = phase * h
        k_mat[:] = 0
        k_mat[row["tau"]] = -1j * om[p] * c0
        for l in range(L):
            if l > 0:
                k_mat[row[f"dtau_{l}"], l] = -1j * om[p] * c0[l]
            k_mat[row[f"theta_t_{l}"], l] = c0[l]
            k_mat[row[f"theta_r_{l}"], l] = c0[l]
            k_mat[row[f"h_re_{l}"], l] = phase[l]
            k_mat[row[f"h_im_{l}"], l] = 1j * phase[l]
        # entry(i, j) = Re{ K_i^H (U_block o V_block) K_j } with the blocks
        # selected by each parameter's steering type.
        for i in range(n_par):
            ui, vi = u_type[i] * L, v_type[i] * L
            for j in range(i, n_par):
                uj, vj = u_type[j] * L, v_type[j] * L
                blk = (gram_r[ui:ui + L, uj:uj + L]
                       * gram_t[vi:vi + L, vj:vj + L])
                val = weight[p] * np.real(
                    k_mat[i].conj() @ blk @ k_mat[j])
                total[i, j] += val
                if i != j:
                    total[j, i] += val
    return FisherMatrix(labels, total)
