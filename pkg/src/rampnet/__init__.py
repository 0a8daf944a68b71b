"""rampnet: a small laboratory for coordinated freeway ramp metering.

The pieces, in pipeline order:

* :mod:`rampnet.network` declares a freeway network (cells, ramps, sensors,
  junctions, timing) and ships a canonical three-highway benchmark.
* :mod:`rampnet.plant` simulates it: cell-transmission dynamics, Poisson
  demand, signalized meters, windowed detectors, and the episode runner.
* :mod:`rampnet.feedback` holds the local occupancy regulators and the
  rate/signal-timing arithmetic.
* :mod:`rampnet.sysid` discovers sparse polynomial dynamics (and a linear
  baseline) from metering logs by thresholded least squares.
* :mod:`rampnet.mpc` plans coordinated rates on a discovered model with a
  projected-gradient receding-horizon controller.
* :mod:`rampnet.harness` wires the standard five-scenario comparison and
  writes the report files; :mod:`rampnet.cli` exposes it all as commands.

The demos/ directory in the repository walks through each capability.
"""

from .feedback import (AlineaController, FixedRateController, MeterBank,
                       PiAlineaController, RATE_MAX_VPH, RATE_MIN_VPH,
                       clamp_rate, green_percentage, rate_to_red_duration)
from .harness import (SCENARIOS, ScenarioResult, UsageError, collect,
                      load_logs, make_controller, report, run_scenarios)
from .mpc import (ModelBlowupError, MpcConfig, MpcController, MpcSolution,
                  SolverSettings, bound_penalty, horizon_sweep, objective,
                  rollout, solve)
from .network import (CellParams, ConfigError, Highway, JunctionSpec,
                      NetworkConfig, RampSpec, SensorSpec,
                      benchmark_config_path, build_benchmark_network,
                      load_config, save_config, serialize_config)
from .plant import (ControlObservation, EpisodeRecord, PlantState, RampSignal,
                    SensorReading, StepInfo, TrafficPlant, run_episode,
                    sample_arrivals)
from .sysid import (FeatureLibrarySpec, FitReport, InsufficientDataError,
                    SparseModel, TrajectoryLog, build_library, differentiate,
                    discover_dmdc, discover_sindyc, evaluate, fit_derivatives,
                    fit_report, one_step_predict, stls_regress, term_label)

__version__ = "0.1.0"
