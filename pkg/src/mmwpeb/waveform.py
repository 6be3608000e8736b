"""OFDM numerology, reference signals and waveform-derived scalars.

Holds everything the Fisher-information computations consume from the
waveform side: subcarrier grids and weights, steering vectors, the squared
array aperture function, effective bandwidth/carrier, the Dirichlet kernel
Q and its Doppler intensity/duration moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mmwpeb.geometry import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    ChannelGeometry,
    perp_vector,
    unit_vector,
    _freeze,
)

# |sin x| below this switches Q-kernel evaluation to its series limit.
_SIN_TOL = 1e-9


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class WaveformConfig:
    """CP-OFDM numerology and link power/noise levels.

    Attributes
    ----------
    n_dft : DFT size N.
    n_cp : cyclic prefix length in samples.
    n_blocks : number of OFDM blocks N_B.
    f_s : sampling rate, Hz.
    f_c : carrier frequency, Hz.
    subcarriers : loaded subcarrier indices p, each in (-N/2, N/2).
    weights : subcarrier weights gamma_p, summing to 1.
    p_tx : per-block transmit power across all loaded subcarriers, W.
    noise_var : noise variance per real dimension per receive antenna, W.
    gain : flat per-subcarrier gain g[p] (kept for future shaping).
    """

    n_dft: int
    n_cp: int
    n_blocks: int
    f_s: float
    f_c: float
    subcarriers: np.ndarray
    weights: np.ndarray | None = None
    p_tx: float = dbm_to_watt(20.0)
    noise_var: float = 1e-20 * 245.76e6 / 2.0
    gain: float = 1.0

    def __post_init__(self):
        sub = np.asarray(self.subcarriers, dtype=int)
        if sub.size == 0:
            raise ValueError("at least one loaded subcarrier required")
        if np.any(np.abs(sub) >= self.n_dft / 2):
            raise ValueError("subcarrier indices must lie in (-N/2, N/2)")
        if len(np.unique(sub)) != sub.size:
            raise ValueError("duplicate subcarrier index")
        w = self.weights
        if w is None:
            w = np.full(sub.size, 1.0 / sub.size)
        else:
            w = np.asarray(w, dtype=float)
            if w.shape != sub.shape:
                raise ValueError("weights must match subcarriers")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("subcarrier weights must sum to 1")
        if min(self.f_s, self.f_c, self.p_tx, self.noise_var) <= 0:
            raise ValueError("f_s, f_c, p_tx and noise_var must be positive")
        if self.n_blocks < 1 or self.n_cp < 0:
            raise ValueError("invalid block/CP configuration")
        object.__setattr__(self, "subcarriers", _freeze(sub))
        object.__setattr__(self, "weights", _freeze(w))

    @classmethod
    def from_noise_density(cls, noise_density_w_hz: float, **kwargs):
        """Build a config mapping a one-sided density N0 via 2 sigma^2 = N0 Fs."""
        noise_var = noise_density_w_hz * kwargs["f_s"] / 2.0
        return cls(noise_var=noise_var, **kwargs)

    @property
    def t_s(self) -> float:
        return 1.0 / self.f_s

    @property
    def omega_c(self) -> float:
        return 2.0 * np.pi * self.f_c

    @property
    def omega_p(self) -> np.ndarray:
        """Baseband angular frequencies 2 pi p F_s / N of the loaded set."""
        return 2.0 * np.pi * self.subcarriers * self.f_s / self.n_dft

    @property
    def n_symbol(self) -> int:
        """Samples per OFDM block including CP, M = N + N_CP."""
        return self.n_dft + self.n_cp

    @property
    def lambda_c(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def n_subcarriers(self) -> int:
        return self.subcarriers.size


@dataclass(frozen=True)
class BeamConfig:
    """Transmit precoder P (N_T x M_T) and receive combiner W (M_R x N_R)."""

    precoder: np.ndarray
    combiner: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.precoder, dtype=complex)
        w = np.asarray(self.combiner, dtype=complex)
        if p.ndim != 2 or w.ndim != 2:
            raise ValueError("precoder/combiner must be matrices")
        if np.linalg.matrix_rank(p) < p.shape[1]:
            raise ValueError("precoder must have full column rank")
        if np.linalg.matrix_rank(w) < w.shape[0]:
            raise ValueError("combiner must have full row rank")
        object.__setattr__(self, "precoder", _freeze(p))
        object.__setattr__(self, "combiner", _freeze(w))

    @classmethod
    def identity(cls, n_tx: int, n_rx: int) -> "BeamConfig":
        return cls(np.eye(n_tx, dtype=complex), np.eye(n_rx, dtype=complex))

    @property
    def is_identity(self) -> bool:
        p, w = self.precoder, self.combiner
        return (p.shape[0] == p.shape[1] and w.shape[0] == w.shape[1]
                and np.array_equal(p, np.eye(p.shape[0]))
                and np.array_equal(w, np.eye(w.shape[0])))


def steering_vector(array: ArrayGeometry, theta_rel: float,
                    omega: float) -> np.ndarray:
    """Array response at array-relative angle theta_rel and total angular
    frequency omega (carrier plus subcarrier offset), entries
    exp(j omega d_j u(psi_j)^T u(theta_rel) / c)."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    tau_el = element_delays(array, theta_rel)
    return np.exp(1j * omega * tau_el)


def element_delays(array: ArrayGeometry, theta_rel) -> np.ndarray:
    """Per-element propagation advance d_j u(psi_j)^T u(theta_rel) / c, s."""
    proj = (unit_vector(array.angles) @
            np.moveaxis(unit_vector(theta_rel), -1, 0))
    return array.offsets.reshape(array.n_elements, *
                                 (1,) * (np.ndim(theta_rel))) * proj / SPEED_OF_LIGHT


def saaf(array: ArrayGeometry, theta_rel) -> float | np.ndarray:
    """Squared array aperture function
    S(theta) = (1/N) sum_j (d_j u_perp(psi_j)^T u(theta))^2, m^2."""
    proj = (perp_vector(array.angles) @
            np.moveaxis(unit_vector(theta_rel), -1, 0))
    d = array.offsets.reshape(array.n_elements, *(1,) * np.ndim(theta_rel))
    return np.mean((d * proj) ** 2, axis=0)


def effective_bandwidth(cfg: WaveformConfig) -> float:
    """Weighted standard deviation of the loaded baseband frequencies, rad/s."""
    w, om = cfg.weights, cfg.omega_p
    var = float(w @ om ** 2 - (w @ om) ** 2)
    return float(np.sqrt(max(var, 0.0)))


def effective_carrier(cfg: WaveformConfig) -> float:
    """Root weighted mean square of the total frequencies omega_c + omega_p."""
    return float(np.sqrt(cfg.weights @ (cfg.omega_c + cfg.omega_p) ** 2))


def dirichlet_q(x, n: int):
    """Normalized Dirichlet kernel Q(x) = e^{-j(N-1)x} sin(Nx) / (N sin x).

    Equals (1/N) sum_{m=0}^{N-1} e^{-2jmx}; removable singularities at
    x = k pi are evaluated through their series limit.
    """
    x = np.asarray(x, dtype=float)
    s = np.sin(x)
    regular = np.abs(s) >= _SIN_TOL
    ratio = np.empty_like(x)
    np.divide(np.sin(n * x), n * s, out=ratio, where=regular)
    if not regular.all():
        k = np.round(x / np.pi)
        eps = x - k * np.pi
        sign = np.where((k.astype(np.int64) * (n - 1)) % 2 == 0, 1.0, -1.0)
        limit = sign * (1.0 - (n * n - 1.0) * eps * eps / 6.0)
        ratio = np.where(regular, ratio, limit)
    out = np.exp(-1j * (n - 1) * x) * ratio
    return out if out.ndim else complex(out)


def _q_kernel_moments(x, n: int):
    """Stable (|Q|^2, |Q|^2 C, |Q|^2 C^2) with C = cot(x) - N cot(Nx).

    The product forms avoid the cot singularities at sin(Nx) = 0; near
    x = k pi everything is evaluated by series.
    """
    x = np.asarray(x, dtype=float)
    s, c = np.sin(x), np.cos(x)
    sn, cn = np.sin(n * x), np.cos(n * x)
    regular = np.abs(s) >= _SIN_TOL
    safe_s = np.where(regular, s, 1.0)
    denom = (n * safe_s) ** 2
    a = sn * c / safe_s - n * cn          # sin(Nx) cot(x) - N cos(Nx)
    q2 = np.where(regular, sn ** 2 / denom, 0.0)
    g1 = np.where(regular, a * sn / denom, 0.0)
    g2 = np.where(regular, a ** 2 / denom, 0.0)
    if not regular.all():
        k = np.round(x / np.pi)
        eps = x - k * np.pi
        n2 = float(n) * n
        cd = (n2 - 1.0) * eps / 3.0 + (n2 * n2 - 1.0) * eps ** 3 / 45.0
        q2_lim = 1.0 - (n2 - 1.0) * eps * eps / 3.0
        q2 = np.where(regular, q2, q2_lim)
        g1 = np.where(regular, g1, q2_lim * cd)
        g2 = np.where(regular, g2, q2_lim * cd * cd)
    return q2, g1, g2


def dirichlet_q_cotdiff(x, n: int):
    """Stable product Q(x) (cot x - N cot Nx), finite at both removable
    singularity families (sin x = 0 and sin Nx = 0)."""
    x = np.asarray(x, dtype=float)
    s, c = np.sin(x), np.cos(x)
    sn, cn = np.sin(n * x), np.cos(n * x)
    regular = np.abs(s) >= _SIN_TOL
    safe_s = np.where(regular, s, 1.0)
    val = (sn * c / safe_s - n * cn) / (n * safe_s)
    if not regular.all():
        k = np.round(x / np.pi)
        eps = x - k * np.pi
        n2 = float(n) * n
        sign = np.where((k.astype(np.int64) * (n - 1)) % 2 == 0, 1.0, -1.0)
        cd = (n2 - 1.0) * eps / 3.0 + (n2 * n2 - 1.0) * eps ** 3 / 45.0
        lim = sign * (1.0 - (n2 - 1.0) * eps * eps / 6.0) * cd
        val = np.where(regular, val, lim)
    return np.exp(-1j * (n - 1) * x) * val


def _phi_grid(cfg: WaveformConfig, v_l: float) -> np.ndarray:
    """Doppler-shifted kernel arguments Phi_{p,q} over the loaded grid,
    Phi = (omega_p - omega_q - v_l omega_c / c) T_s / 2, shape (P, P)."""
    om = cfg.omega_p
    shift = v_l * cfg.omega_c / SPEED_OF_LIGHT
    return (om[:, None] - om[None, :] - shift) * cfg.t_s / 2.0


def doppler_intensity(cfg: WaveformConfig, v_l: float):
    """Intensity effect of the Doppler shift of one path.

    Returns (xi_lq, xi_l): xi_lq[q] = sum_p |Q(Phi_pq)|^2 per loaded
    subcarrier and the weighted total xi_l = sum_q gamma_q xi_lq. For
    v_l = 0 the kernel is orthogonal on the grid and xi_l = 1 exactly.
    """
    if abs(v_l) >= SPEED_OF_LIGHT:
        raise ValueError("|v_l| must be below the speed of light")
    q2, _, _ = _q_kernel_moments(_phi_grid(cfg, v_l), cfg.n_dft)
    xi_lq = q2.sum(axis=0)
    return xi_lq, float(cfg.weights @ xi_lq)


def n_block_rms_exact(cfg: WaveformConfig, v_l: float) -> float:
    """Exact cot-based within-block rms index n_B,rms,l (dimensionless)."""
    q2, g1, g2 = _q_kernel_moments(_phi_grid(cfg, v_l), cfg.n_dft)
    w = cfg.weights
    xi = float(w @ q2.sum(axis=0))
    m1 = float(w @ g1.sum(axis=0)) / 2.0
    m2 = float(w @ g2.sum(axis=0)) / 4.0
    var = m2 / xi - (m1 / xi) ** 2
    return float(np.sqrt(max(var, 0.0)))


def n_block_rms_approx(cfg: WaveformConfig) -> float:
    """Small-velocity limit of n_B,rms: (1/4) sum_q gamma_q sum_{p != q}
    sin^-2(pi (p - q) / N), evaluated in closed form."""
    p = cfg.subcarriers
    diff = np.pi * (p[:, None] - p[None, :]) / cfg.n_dft
    mask = ~np.eye(p.size, dtype=bool)
    inv = np.zeros_like(diff)
    inv[mask] = 1.0 / np.sin(diff[mask]) ** 2
    total = cfg.weights @ inv.sum(axis=0)
    return float(np.sqrt(total / 4.0))


def rms_duration(cfg: WaveformConfig, v_l: float, exact: bool = True) -> float:
    """RMS duration t_rms,l of the N_B-block reference signal seen on one
    path: T_s sqrt(M^2 (N_B^2 - 1) / 12 + n_B,rms,l^2)."""
    n_rms = n_block_rms_exact(cfg, v_l) if exact else n_block_rms_approx(cfg)
    block_var = cfg.n_symbol ** 2 * (cfg.n_blocks ** 2 - 1) / 12.0
    return float(cfg.t_s * np.sqrt(block_var + n_rms ** 2))


@dataclass(frozen=True)
class WaveformStats:
    """Waveform scalars consumed by the asymptotic EFIM expressions."""

    beta: float                 # effective baseband bandwidth, rad/s
    omega_bar_c: float          # effective angular carrier, rad/s
    xi: np.ndarray              # per-path Doppler intensity xi_l
    beta_l: np.ndarray          # per-path effective bandwidth, rad/s
    t_rms: np.ndarray           # per-path rms duration, s
    n_b_rms: np.ndarray         # per-path within-block rms index

    def __post_init__(self):
        for name in ("xi", "beta_l", "t_rms", "n_b_rms"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))


def waveform_stats(cfg: WaveformConfig,
                   v_radial: np.ndarray | None = None) -> WaveformStats:
    """Bundle the static scalars and, when per-path radial speeds are given,
    the per-path Doppler quantities of Definitions of the dynamic model."""
    beta = effective_bandwidth(cfg)
    wbar = effective_carrier(cfg)
    if v_radial is None:
        v_radial = np.zeros(1)
    v_radial = np.atleast_1d(np.asarray(v_radial, dtype=float))
    L = v_radial.size
    xi = np.empty(L)
    beta_l = np.empty(L)
    t_rms = np.empty(L)
    n_rms = np.empty(L)
    w, om = cfg.weights, cfg.omega_p
    for l, v in enumerate(v_radial):
        q2, g1, g2 = _q_kernel_moments(_phi_grid(cfg, v), cfg.n_dft)
        xi_lq = q2.sum(axis=0)
        xi[l] = w @ xi_lq
        s1 = w @ (om * xi_lq)
        s2 = w @ (om ** 2 * xi_lq)
        beta_l[l] = np.sqrt(max(s2 / xi[l] - (s1 / xi[l]) ** 2, 0.0))
        m1 = (w @ g1.sum(axis=0)) / 2.0
        m2 = (w @ g2.sum(axis=0)) / 4.0
        n_rms[l] = np.sqrt(max(m2 / xi[l] - (m1 / xi[l]) ** 2, 0.0))
        block_var = cfg.n_symbol ** 2 * (cfg.n_blocks ** 2 - 1) / 12.0
        t_rms[l] = cfg.t_s * np.sqrt(block_var + n_rms[l] ** 2)
    return WaveformStats(beta=beta, omega_bar_c=wbar, xi=xi,
                         beta_l=beta_l, t_rms=t_rms, n_b_rms=n_rms)


def reference_signal(cfg: WaveformConfig, beams: BeamConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw i.i.d. circularly-symmetric Gaussian reference vectors.

    Returns the post-precoding signal x_b[p], shape (N_B, P, N_T). With
    identity beams E[x x^H] = gamma_p P_T / N_T I; with a precoder the
    per-stream variance is scaled so the per-subcarrier transmit power is
    still gamma_p P_T.
    """
    n_tx, m_tx = beams.precoder.shape
    shape = (cfg.n_blocks, cfg.n_subcarriers, m_tx)
    s = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    s /= np.sqrt(2.0)
    tr = float(np.real(np.trace(beams.precoder.conj().T @ beams.precoder)))
    scale = np.sqrt(cfg.weights * cfg.p_tx / tr)
    x = s * scale[None, :, None]
    return x @ beams.precoder.T
