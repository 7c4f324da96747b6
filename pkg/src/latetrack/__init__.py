"""latetrack: latency-aware tracking simulation, evaluation, and
bounding-box motion prediction.

The package simulates a tracker processing a fixed-rate frame stream
under latency (skipping frames it cannot keep up with), scores runs
with deadline-based matching over a permitted-latency sweep, and trains
motion predictors (Kalman variants and a small temporal network) that
compensate for the latency by predicting where the target will be when
processing finishes.
"""

__version__ = "0.1.0"

from .boxes import (BoundingBox, FrameClock, Sequence, TimedOutput, center_error,
                    iou, load_sequence, save_sequence)
from .errors import DivergenceError, ReplayExhaustedError, ValidationError
from .evaluate import (EstimateMatcher, EvalCurve, MatchedEstimate, PermittedLatency,
                       match_elae, match_lae, score_run, sigma_grid, sweep)
from .latency import LatencyProfile
from .motion import (MotionHistory, NormalizedMotion, apply_factor, apply_motion,
                     average_speed, encode_motion, invert_motion, unroll_history)
from .network import (PMWeights, constant_factor_weights, init_weights, l1_loss,
                      load_weights, pm_predict, save_weights)
from .predictors import (KalmanBoxPredictor, KalmanState, MotionNetPredictor,
                         ZeroMotionPredictor, kf_fit_noise, kf_motion_batch,
                         kf_predict, kf_update, load_kf_noise, make_kf_state,
                         save_kf_noise, zero_motion_predict)
from .simulate import (PredictorAdapter, ProcessedFrame, RunLog, TrackerAdapter,
                       load_run_log, load_trace, next_frame, pick_horizon_n,
                       run_log_from_trace, run_stream, save_run_log, save_trace)
from .training import (AdamW, OptimizerConfig, SyntheticSpec, TrainSample,
                       gen_synthetic, linear_track, motion_l1_on_samples,
                       pm_motion_batch, sample_windows, train_pm,
                       zero_motion_batch)
