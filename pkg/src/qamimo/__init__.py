"""Queue-aware two-timescale scheduling for random-beamforming MU-MIMO.

Submodules: ``channel`` (fading, beams, SINR), ``traffic`` (arrivals),
``scheduler`` (feedback filtering and queue-weighted beam assignment),
``baselines`` (reference schedulers), ``engine`` (slotted simulation),
``analysis`` (large-deviation decay rates) and ``cli``.
"""
from . import analysis, baselines, channel, engine, scheduler, traffic
from .engine import MetricsTrace, SimParams, run
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["analysis", "baselines", "channel", "engine", "scheduler", "traffic",
           "SimParams", "MetricsTrace", "run", "BACKEND"]
