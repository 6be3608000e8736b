"""Position, orientation and velocity error bounds for single-anchor mm-Wave
MIMO-OFDM links.

The package is organised around a small pipeline:

    geometry   -- arrays, placements, per-path channel geometry and gains
    waveform   -- OFDM numerology, steering vectors and waveform scalars
    fim_exact  -- exact Fisher information of the channel parameter vector
    estimand   -- channel -> position information (Jacobians, EFIM, PEB/OEB/VEB)
    asymptotic -- closed-form large-array/bandwidth EFIMs and the KTT variants
    scenario   -- reproducible sweep experiments behind the ``mmwpeb`` CLI
"""

from mmwpeb.geometry import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    ChannelGeometry,
    DegenerateGeometryError,
    PathGains,
    Placement,
    build_uca,
    build_ula,
    channel_geometry,
    path_gains,
)
from mmwpeb.waveform import (
    BeamConfig,
    WaveformConfig,
    WaveformStats,
    dirichlet_q,
    doppler_intensity,
    effective_bandwidth,
    effective_carrier,
    reference_signal,
    rms_duration,
    saaf,
    steering_vector,
    waveform_stats,
)
from mmwpeb.fim_exact import (
    ChannelParams,
    FisherMatrix,
    fim_channel,
    fim_channel_expected,
    mean_derivatives,
    model_mean,
)
from mmwpeb.estimand import (
    NotIdentifiableError,
    TransformationMatrix,
    efim,
    oeb,
    peb,
    transformation_matrix,
    veb,
)
from mmwpeb.asymptotic import (
    AsymptoticEfim,
    KttModel,
    efim_po_asym_rx,
    efim_po_asym_tx,
    efim_po_ktt,
    efim_pov_asym,
    fim_channel_asym,
    ul_from_dl,
)

__version__ = "0.1.0"

__all__ = [
    "SPEED_OF_LIGHT",
    "ArrayGeometry",
    "Placement",
    "ChannelGeometry",
    "PathGains",
    "DegenerateGeometryError",
    "build_ula",
    "build_uca",
    "channel_geometry",
    "path_gains",
    "WaveformConfig",
    "BeamConfig",
    "WaveformStats",
    "steering_vector",
    "saaf",
    "effective_bandwidth",
    "effective_carrier",
    "dirichlet_q",
    "doppler_intensity",
    "rms_duration",
    "reference_signal",
    "waveform_stats",
    "ChannelParams",
    "FisherMatrix",
    "model_mean",
    "mean_derivatives",
    "fim_channel",
    "fim_channel_expected",
    "TransformationMatrix",
    "NotIdentifiableError",
    "transformation_matrix",
    "efim",
    "peb",
    "oeb",
    "veb",
    "AsymptoticEfim",
    "KttModel",
    "efim_po_asym_rx",
    "efim_po_asym_tx",
    "efim_pov_asym",
    "fim_channel_asym",
    "efim_po_ktt",
    "ul_from_dl",
]
