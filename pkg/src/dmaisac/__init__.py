"""Receive-beamforming design for dynamic metasurface antennas: area-wide localization bounds
with multi-user uplink SNR constraints, plus MUSIC-based Monte-Carlo validation."""
from .channel import build_channels, build_propagation_matrix, received_snr, steering_jacobian, steering_vector
from .design import (DesignResult, LorentzianWeights, audit, complexity_report, design_cfs, design_p1, design_p2,
                     lorentzian_project, run_design)
from .fisher import build_lifted, crb, fim, peb
from .scenario import (PanelConfig, ScenarioConfig, SphericalPoint, default_scenario, make_scenario,
                       reduced_scenario)

__all__ = [
    "PanelConfig", "ScenarioConfig", "SphericalPoint", "default_scenario", "reduced_scenario", "make_scenario",
    "build_channels", "build_propagation_matrix", "received_snr", "steering_vector", "steering_jacobian",
    "build_lifted", "fim", "crb", "peb",
    "DesignResult", "LorentzianWeights", "audit", "complexity_report", "design_cfs", "design_p1", "design_p2",
    "lorentzian_project", "run_design",
]
