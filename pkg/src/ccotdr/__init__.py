"""Digital twin of a coherent correlation OTDR temperature and acoustic sensor."""

__version__ = "0.1.0"

from .analysis import (PhaseSeries, TemperatureEstimate, WindowReport, calibrate,
                       calibrate_coefficient, detrended_spectrum, extract_phase_series,
                       fit_time_constant, phase_to_temperature, unwrap_time, window_slope)
from .channel import (NoiseSpec, ShotRecord, ShotRun, build_impulse_response, simulate_run,
                      simulate_shot)
from .config import RunConfig, preset
from .correlator import Reflectogram, correlate_shot, detect_events, return_loss_trace
from .fibermodel import (FiberLayout, GroundTruth, ScenarioProfile, Stage, chamber_temperature,
                         core_temperature, derived_dn_dt, generate_ground_truth,
                         true_phase_difference)
from .waveform import ProbeFrame, ProbeSpec, autocorrelate, build_probe_frame, gen_prbs
