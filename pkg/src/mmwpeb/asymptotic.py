"""Closed-form asymptotic EFIMs for large arrays and bandwidth.

Implements the large-system position/orientation EFIM for receiver and
transmitter estimands, the dynamic position/orientation/velocity EFIM, the
Bayesian EFIM under (im)perfect knowledge of the time of transmission, the
downlink/uplink scaling law, and the intermediate asymptotic channel FIM
whose Schur complement reproduces the closed forms and serves as their
oracle in the tests.

One parametric core covers both estimand sides: "own" denotes the node
whose position is estimated (and which moves, in the dynamic case), "far"
the known anchor side.
"""

from __future__ import annotations

import warnings
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
from mmwpeb.waveform import WaveformConfig, WaveformStats, saaf, waveform_stats
from mmwpeb.fim_exact import FisherMatrix, UnsupportedConfigError

# 1 + cos(dtheta) below this marks an exactly collinear scatterer; the
# rank-1 terms are then evaluated through their analytic limits.
_COLLINEAR_TOL = 1e-12

_STATIC_LABELS = ("x_m", "y_m", "alpha_rad")
_DYNAMIC_LABELS = ("x_m", "y_m", "alpha_rad", "vx_mps", "vy_mps")


@dataclass(frozen=True)
class KttModel:
    """Quality of the receiver's knowledge of the time of transmission."""

    level: str                  # "perfect" | "imperfect" | "none"
    sigma_clk: float = 0.0      # clock error std deviation, s (imperfect)

    def __post_init__(self):
        if self.level not in ("perfect", "imperfect", "none"):
            raise ValueError("level must be perfect, imperfect or none")
        if self.level == "imperfect" and self.sigma_clk <= 0:
            raise ValueError("imperfect KTT needs sigma_clk > 0")


@dataclass(frozen=True)
class AsymptoticEfim:
    """Decomposed asymptotic EFIM: total = delta (J_LOS + sum J_NLOS - J_ts)."""

    total: FisherMatrix
    j_los: np.ndarray
    j_nlos: tuple
    j_tau_s: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "j_los", _freeze(self.j_los))
        object.__setattr__(self, "j_tau_s", _freeze(self.j_tau_s))
        object.__setattr__(self, "j_nlos",
                           tuple(_freeze(j) for j in self.j_nlos))

    def recomposition_error(self) -> float:
        """Relative error of total vs its decomposition (identically ~0)."""
        rebuilt = self.delta * (self.j_los + sum(self.j_nlos,
                                                 np.zeros_like(self.j_los))
                                - self.j_tau_s)
        scale = np.linalg.norm(self.total.values)
        return float(np.linalg.norm(rebuilt - self.total.values)
                     / max(scale, 1e-30))


def receive_snr_factor(cfg: WaveformConfig, n_rx: int) -> float:
    """Common EFIM prefactor delta = N_R N_B P_T / sigma^2."""
    return n_rx * cfg.n_blocks * cfg.p_tx / cfg.noise_var


def _sides(geom: ChannelGeometry, array_tx: ArrayGeometry,
           array_rx: ArrayGeometry, own: str):
    """Per-path angles/distances/SAAFs grouped into own and far sides."""
    if own == "rx":
        th_own, th_far = geom.theta_rx, geom.theta_tx
        d_own, d_far = geom.d_rs, geom.d_ts
        s_own = saaf(array_rx, geom.theta_rx_rel)
        s_far = saaf(array_tx, geom.theta_tx_rel)
    elif own == "tx":
        th_own, th_far = geom.theta_tx, geom.theta_rx
        d_own, d_far = geom.d_ts, geom.d_rs
        s_own = saaf(array_tx, geom.theta_tx_rel)
        s_far = saaf(array_rx, geom.theta_rx_rel)
    else:
        raise ValueError("own side must be 'rx' or 'tx'")
    ssin = np.sin(th_own - th_far)
    cpl = 1.0 + np.cos(th_own - th_far)      # 1 + cos(dtheta)
    return th_own, d_own, s_own, d_far, s_far, ssin, cpl


def _static_parts(cfg: WaveformConfig, geom: ChannelGeometry,
                  gains: PathGains, array_tx: ArrayGeometry,
                  array_rx: ArrayGeometry, own: str, ktt: bool):
    """LOS/NLOS building blocks shared by the static theorems and the KTT
    variant: returns (J_LOS, [J_NLOS_l], z_ts, K_data, z_tau0, beta)."""
    from mmwpeb.waveform import effective_bandwidth, effective_carrier

    th_own, d_own, s_own, d_far, s_far, ssin, cpl = _sides(
        geom, array_tx, array_rx, own)
    beta = effective_bandwidth(cfg)
    wbar = effective_carrier(cfg)
    c = SPEED_OF_LIGHT
    h2 = gains.magnitudes ** 2
    L = geom.n_paths

    u0 = unit_vector(th_own[0])
    up0 = perp_vector(th_own[0])
    z_far0 = np.array([up0[0], up0[1], 0.0])
    z_own0 = np.array([up0[0], up0[1], -geom.d_tr])
    z_tau0 = np.array([-u0[0], -u0[1], 0.0])

    pref = h2[0] * wbar ** 2 / (c ** 2 * geom.d_tr ** 2)
    j_los = pref * (s_far[0] * np.outer(z_far0, z_far0)
                    + s_own[0] * np.outer(z_own0, z_own0))
    if ktt:
        j_los = j_los + h2[0] * (beta / c) ** 2 * np.outer(z_tau0, z_tau0)

    j_nlos = []
    z_ts = np.zeros(3)
    k_data = h2[0] * (beta / c) ** 2
    for l in range(1, L):
        if cpl[l] < _COLLINEAR_TOL:
            # Exactly collinear scatterer: the rank-1 term collapses onto
            # the LOS delay direction (KTT) or vanishes entirely (no KTT).
            u_t = unit_vector(geom.theta_tx[l])
            zdeg = np.array([u_t[0], u_t[1], 0.0])
            w = h2[l] * (beta / c) ** 2
            if ktt:
                j_nlos.append(w * np.outer(zdeg, zdeg))
                z_ts = z_ts + w * zdeg
            else:
                j_nlos.append(np.zeros((3, 3)))
            k_data += w
            continue
        denom = (cpl[l] ** 2 * c ** 2 / wbar ** 2
                 * (d_far[l] ** 2 / s_far[l] + d_own[l] ** 2 / s_own[l])
                 + ssin[l] ** 2 * c ** 2 / beta ** 2)
        f_l = 1.0 / denom
        up_sum = perp_vector(geom.theta_tx[l]) + perp_vector(geom.theta_rx[l])
        z_l = np.array([up_sum[0], up_sum[1], -cpl[l] * d_own[l]])
        if not ktt:
            z_l = z_l + ssin[l] * np.array([u0[0], u0[1], 0.0])
        j_nlos.append(h2[l] * f_l * np.outer(z_l, z_l))
        z_ts = z_ts + h2[l] * ssin[l] * f_l * z_l
        k_data += h2[l] * ssin[l] ** 2 * f_l
    return j_los, j_nlos, z_ts, k_data, z_tau0, beta


def _efim_po_asym(cfg: WaveformConfig, geom: ChannelGeometry,
                  gains: PathGains, array_tx: ArrayGeometry,
                  array_rx: ArrayGeometry, own: str) -> AsymptoticEfim:
    j_los, j_nlos, z_ts, k_ts, _, _ = _static_parts(
        cfg, geom, gains, array_tx, array_rx, own, ktt=False)
    j_ts = np.outer(z_ts, z_ts) / k_ts
    delta = receive_snr_factor(cfg, array_rx.n_elements)
    total = delta * (j_los + sum(j_nlos, np.zeros((3, 3))) - j_ts)
    return AsymptoticEfim(FisherMatrix(_STATIC_LABELS, total),
                          j_los, tuple(j_nlos), j_ts, delta)


def efim_po_asym_rx(cfg: WaveformConfig, geom: ChannelGeometry,
                    gains: PathGains, array_tx: ArrayGeometry,
                    array_rx: ArrayGeometry) -> AsymptoticEfim:
    """Asymptotic 3x3 EFIM for receiver position/orientation, no KTT."""
    return _efim_po_asym(cfg, geom, gains, array_tx, array_rx, "rx")


def efim_po_asym_tx(cfg: WaveformConfig, geom: ChannelGeometry,
                    gains: PathGains, array_tx: ArrayGeometry,
                    array_rx: ArrayGeometry) -> AsymptoticEfim:
    """Asymptotic 3x3 EFIM for transmitter position/orientation, no KTT."""
    return _efim_po_asym(cfg, geom, gains, array_tx, array_rx, "tx")


def efim_po_ktt(cfg: WaveformConfig, geom: ChannelGeometry,
                gains: PathGains, array_tx: ArrayGeometry,
                array_rx: ArrayGeometry, ktt: KttModel) -> AsymptoticEfim:
    """Asymptotic receiver EFIM under a clock prior of quality `ktt`.

    sigma_clk -> 0 recovers the perfect-KTT EFIM (no coupling loss) and
    sigma_clk -> infinity recovers the no-KTT theorem. The clock prior
    enters the coupling denominator as 1 / (delta c^2 sigma_clk^2); the
    1/c^2 converts the prior's s^-2 information to the m^-2 units shared
    by the other terms.
    """
    if geom.is_dynamic:
        raise UnsupportedConfigError(
            "KTT EFIM is defined for the static receiver estimand only")
    if ktt.level == "none":
        return efim_po_asym_rx(cfg, geom, gains, array_tx, array_rx)
    j_los, j_nlos, z_ts, k_data, z_tau0, beta = _static_parts(
        cfg, geom, gains, array_tx, array_rx, "rx", ktt=True)
    delta = receive_snr_factor(cfg, array_rx.n_elements)
    h2_0 = gains.magnitudes[0] ** 2
    z_ktt = h2_0 * (beta / SPEED_OF_LIGHT) ** 2 * z_tau0 + z_ts
    if ktt.level == "perfect":
        j_ts = np.zeros((3, 3))
    else:
        k_ktt = (1.0 / (delta * (SPEED_OF_LIGHT * ktt.sigma_clk) ** 2)
                 + k_data)
        j_ts = np.outer(z_ktt, z_ktt) / k_ktt
    total = delta * (j_los + sum(j_nlos, np.zeros((3, 3))) - j_ts)
    return AsymptoticEfim(FisherMatrix(_STATIC_LABELS, total),
                          j_los, tuple(j_nlos), j_ts, delta)


def efim_pov_asym(cfg: WaveformConfig, geom: ChannelGeometry,
                  gains: PathGains, array_tx: ArrayGeometry,
                  array_rx: ArrayGeometry,
                  stats: WaveformStats | None = None) -> AsymptoticEfim:
    """Asymptotic 5x5 position/orientation/velocity EFIM, no KTT.

    The estimated side is the moving one recorded in the geometry. Uses the
    narrowband approximation (omega_c >> omega_p), warning when the loaded
    grid stretches it.
    """
    if not geom.is_dynamic:
        raise ValueError("dynamic EFIM needs a moving geometry")
    own = geom.moving
    if np.max(np.abs(cfg.omega_p)) > 0.1 * cfg.omega_c:
        warnings.warn("loaded subcarriers are not narrowband relative to "
                      "the carrier; dynamic asymptotics degrade",
                      RuntimeWarning, stacklevel=2)
    if stats is None:
        stats = waveform_stats(cfg, geom.v_radial)

    th_own, d_own, s_own, d_far, s_far, ssin, cpl = _sides(
        geom, array_tx, array_rx, own)
    c = SPEED_OF_LIGHT
    wc = cfg.omega_c
    h2 = gains.magnitudes ** 2
    rho = geom.rho
    L = geom.n_paths

    u0 = unit_vector(th_own[0])
    up0 = perp_vector(th_own[0])
    z_far0 = np.array([up0[0], up0[1], 0.0, 0.0, 0.0])
    z_own0 = np.array([up0[0], up0[1], -geom.d_tr, 0.0, 0.0])
    # rho_0 z_v0: finite for vanishing tangential speed.
    w_v0 = np.array([-rho[0] * up0[0], -rho[0] * up0[1], 0.0,
                     geom.d_tr * u0[0], geom.d_tr * u0[1]])
    pref0 = h2[0] * stats.xi[0] * wc ** 2 / (c ** 2 * geom.d_tr ** 2)
    j_los = pref0 * (s_far[0] * np.outer(z_far0, z_far0)
                     + s_own[0] * np.outer(z_own0, z_own0)
                     + stats.t_rms[0] ** 2 * np.outer(w_v0, w_v0))

    j_nlos = []
    z_ts = np.zeros(5)
    k_ts = h2[0] * stats.xi[0] * (stats.beta_l[0] / c) ** 2
    for l in range(1, L):
        i_dt = (stats.beta_l[l] / c) ** 2
        i_own = wc ** 2 * s_own[l] / (c ** 2 * d_own[l] ** 2)
        i_far = wc ** 2 * s_far[l] / (c ** 2 * d_far[l] ** 2)
        i_v_unit = wc ** 2 * stats.t_rms[l] ** 2 / (c ** 2 * d_own[l] ** 2)
        i_v = rho[l] ** 2 * i_v_unit
        u_l = unit_vector(th_own[l])
        w_tv = np.array([0.0, 0.0, -rho[l] * d_own[l],
                         d_own[l] * u_l[0], d_own[l] * u_l[1]])
        if cpl[l] < _COLLINEAR_TOL:
            # Collinear limit: only the orientation/velocity coupling term
            # survives; the path's delay feeds the timing pool only.
            if i_own + i_v > 0:
                f_tv = i_own * i_v_unit / (i_own + i_v)
                j_nlos.append(h2[l] * stats.xi[l] * f_tv * np.outer(w_tv,
                                                                    w_tv))
            else:
                j_nlos.append(np.zeros((5, 5)))
            k_ts += h2[l] * stats.xi[l] * i_dt
            continue
        chi = (cpl[l] ** 2 * i_dt * (i_far + i_own + i_v)
               + ssin[l] ** 2 * i_far * (i_own + i_v))
        if chi == 0.0:
            j_nlos.append(np.zeros((5, 5)))
            continue
        f_dt_th = i_dt * i_own * i_far / chi
        f_dt_v_unit = i_dt * i_v_unit * i_far / chi       # f / rho^2
        f_th_v_unit = (i_own * i_v_unit
                       * (cpl[l] ** 2 * i_dt + ssin[l] ** 2 * i_far) / chi)
        up_sum = perp_vector(geom.theta_tx[l]) + perp_vector(geom.theta_rx[l])
        head = up_sum + ssin[l] * u0
        z_dt_th = np.array([head[0], head[1], -cpl[l] * d_own[l], 0.0, 0.0])
        w_dt_v = np.array([rho[l] * head[0], rho[l] * head[1], 0.0,
                           -cpl[l] * d_own[l] * u_l[0],
                           -cpl[l] * d_own[l] * u_l[1]])
        j_l = h2[l] * stats.xi[l] * (
            f_dt_th * np.outer(z_dt_th, z_dt_th)
            + f_dt_v_unit * np.outer(w_dt_v, w_dt_v)
            + f_th_v_unit * np.outer(w_tv, w_tv))
        j_nlos.append(j_l)
        z_ts = z_ts + h2[l] * stats.xi[l] * ssin[l] * (
            f_dt_th * z_dt_th + f_dt_v_unit * rho[l] * w_dt_v)
        k_ts += h2[l] * stats.xi[l] * ssin[l] ** 2 * (
            f_dt_th + f_dt_v_unit * rho[l] ** 2)
    j_ts = np.outer(z_ts, z_ts) / k_ts
    delta = receive_snr_factor(cfg, array_rx.n_elements)
    total = delta * (j_los + sum(j_nlos, np.zeros((5, 5))) - j_ts)
    return AsymptoticEfim(FisherMatrix(_DYNAMIC_LABELS, total),
                          j_los, tuple(j_nlos), j_ts, delta)


def fim_channel_asym(cfg: WaveformConfig, geom: ChannelGeometry,
                     gains: PathGains, array_tx: ArrayGeometry,
                     array_rx: ArrayGeometry,
                     dynamic: bool | None = None,
                     ktt: bool = False) -> FisherMatrix:
    """Asymptotic channel-parameter FIM under favorable propagation.

    Large arrays decouple the paths and zero the same-path angle cross
    terms (centroid reference); what survives are the per-path delay,
    angle, speed and gain entries plus the delay-gain couplings. The Schur
    complement of this matrix over the nuisance parameters reproduces the
    closed-form theorems and is used as their oracle; it is also the
    convergence target of the exact expected FIM as the arrays grow.
    """
    if dynamic is None:
        dynamic = geom.is_dynamic
    if dynamic and not geom.is_dynamic:
        raise ValueError("dynamic channel FIM needs a moving geometry")
    delta = receive_snr_factor(cfg, array_rx.n_elements)
    c = SPEED_OF_LIGHT
    h = gains.h
    h2 = gains.magnitudes ** 2
    L = geom.n_paths
    s_t = np.atleast_1d(saaf(array_tx, geom.theta_tx_rel))
    s_r = np.atleast_1d(saaf(array_rx, geom.theta_rx_rel))

    w, om = cfg.weights, cfg.omega_p
    if not dynamic:
        from mmwpeb.waveform import effective_carrier
        xi = np.ones(L)
        s1 = np.full(L, float(w @ om))
        s2 = np.full(L, float(w @ om ** 2))
        ang_freq2 = effective_carrier(cfg) ** 2
        rv1 = rv2 = None
    else:
        from mmwpeb.waveform import _phi_grid, _q_kernel_moments
        xi = np.empty(L)
        s1 = np.empty(L)
        s2 = np.empty(L)
        rv1 = np.empty(L)
        rv2 = np.empty(L)
        for l in range(L):
            q2, g1, g2 = _q_kernel_moments(
                _phi_grid(cfg, geom.v_radial[l]), cfg.n_dft)
            xi_lq = q2.sum(axis=0)
            xi[l] = w @ xi_lq
            s1[l] = w @ (om * xi_lq)
            s2[l] = w @ (om ** 2 * xi_lq)
            rv1[l] = (w @ g1.sum(axis=0)) / 2.0 / xi[l] * cfg.t_s
            rv2[l] = (w @ g2.sum(axis=0)) / 4.0 / xi[l] * cfg.t_s ** 2
        ang_freq2 = cfg.omega_c ** 2
        b = np.arange(cfg.n_blocks)
        tb = (b * cfg.n_symbol + (cfg.n_dft - 1) / 2.0) * cfg.t_s
        iv1 = float(tb.mean())
        iv2 = float((tb ** 2).mean())

    timing = "tau_0_s" if ktt else "tau_s_s"
    labels = [timing]
    for l in range(L):
        if l > 0:
            labels.append(f"dtau_{l}_s")
        labels.append(f"theta_t_{l}_rad")
        labels.append(f"theta_r_{l}_rad")
        if dynamic:
            labels.append(f"v_{l}_mps")
        labels.append(f"h_re_{l}")
        labels.append(f"h_im_{l}")
    idx = {lbl: i for i, lbl in enumerate(labels)}
    n = len(labels)
    j = np.zeros((n, n))

    def sym_set(a, b, val):
        j[a, b] = j[b, a] = val

    i_tau = idx[timing]
    j[i_tau, i_tau] = delta * float(h2 @ s2)
    for l in range(L):
        rows = [i_tau] if l == 0 else [i_tau, idx[f"dtau_{l}_s"]]
        if l > 0:
            d = idx[f"dtau_{l}_s"]
            j[d, d] = delta * h2[l] * s2[l]
            sym_set(i_tau, d, delta * h2[l] * s2[l])
        sym_set(idx[f"theta_t_{l}_rad"], idx[f"theta_t_{l}_rad"],
                delta * h2[l] * xi[l] * ang_freq2 / c ** 2 * s_t[l])
        sym_set(idx[f"theta_r_{l}_rad"], idx[f"theta_r_{l}_rad"],
                delta * h2[l] * xi[l] * ang_freq2 / c ** 2 * s_r[l])
        hre, him = idx[f"h_re_{l}"], idx[f"h_im_{l}"]
        j[hre, hre] = j[him, him] = delta * xi[l]
        for row in rows:
            sym_set(row, hre, delta * h[l].imag * s1[l])
            sym_set(row, him, -delta * h[l].real * s1[l])
        if dynamic:
            iv = idx[f"v_{l}_mps"]
            wc_c = np.sqrt(ang_freq2) / c
            j[iv, iv] = delta * h2[l] * xi[l] * wc_c ** 2 * (rv2[l] + iv2)
            for row in rows:
                sym_set(row, iv, -delta * h2[l] * wc_c * s1[l] * iv1)
            sym_set(iv, hre,
                    delta * xi[l] * wc_c * (h[l].real * rv1[l]
                                            - h[l].imag * iv1))
            sym_set(iv, him,
                    delta * xi[l] * wc_c * (h[l].real * iv1
                                            + h[l].imag * rv1[l]))
    return FisherMatrix(tuple(labels), j)


def efim_ktt_bayes(cfg: WaveformConfig, geom: ChannelGeometry,
                   gains: PathGains, array_tx: ArrayGeometry,
                   array_rx: ArrayGeometry, ktt: KttModel) -> FisherMatrix:
    """Clock-prior Bayesian EFIM via the asymptotic channel FIM.

    Under KTT the delays are absolute and the unknown clock error enters
    the observation exactly like a common delay, so its data information
    duplicates the tau_0 row; the Gaussian prior adds 1/sigma_clk^2 on its
    diagonal and the clock is eliminated as one extra nuisance parameter.
    Works for both the static (3x3) and the dynamic (5x5) estimand; the
    static case reproduces the closed-form `efim_po_ktt` and the dynamic
    case supplies the imperfect-KTT EFIM the mobility experiments need.
    """
    from mmwpeb.estimand import TransformationMatrix, efim, \
        transformation_matrix

    own = geom.moving if geom.is_dynamic else "rx"
    keep = 5 if geom.is_dynamic else 3
    if ktt.level == "none":
        raise ValueError("Bayesian KTT EFIM needs a clock prior; use the "
                         "no-KTT theorems instead")
    j_chan = fim_channel_asym(cfg, geom, gains, array_tx, array_rx, ktt=True)
    t = transformation_matrix(geom, own, ktt=True)
    if ktt.level == "perfect":
        return efim(j_chan, t, keep)

    n = j_chan.size
    i_tau = j_chan.index("tau_0_s")
    ext = np.zeros((n + 1, n + 1))
    ext[:n, :n] = j_chan.values
    ext[n, :n] = j_chan.values[i_tau, :]
    ext[:n, n] = j_chan.values[:, i_tau]
    ext[n, n] = j_chan.values[i_tau, i_tau] + 1.0 / ktt.sigma_clk ** 2
    labels = j_chan.labels + ("eps_clk_s",)
    t_ext = np.zeros((t.values.shape[0] + 1, n + 1))
    t_ext[:-1, :n] = t.values
    t_ext[-1, n] = 1.0
    t_full = TransformationMatrix(t_ext, t.row_labels + ("eps_clk_s",),
                                  labels)
    return efim(FisherMatrix(labels, ext), t_full, keep)


def ul_from_dl(j_dl: FisherMatrix, *, p_ue: float, p_bs: float,
               noise_var_ue: float, noise_var_bs: float,
               n_bs: int, n_ue: int) -> FisherMatrix:
    """Uplink EFIM from the downlink one: the two differ by the receive-SNR
    ratio (sigma_UE^2 / sigma_BS^2) (N_BS P_UE / (N_UE P_BS))."""
    ratio = (noise_var_ue / noise_var_bs) * (n_bs * p_ue) / (n_ue * p_bs)
    return FisherMatrix(j_dl.labels, ratio * j_dl.values)
