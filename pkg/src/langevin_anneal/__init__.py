"""Langevin simulated annealing with multiplicative (position-dependent) noise.

Modules: :mod:`potentials` (objectives and assumption checks),
:mod:`diffusion` (diffusion fields and the drift with its divergence
correction), :mod:`schedules` (noise levels and step sequences),
:mod:`simulate` (Euler-Maruyama ensembles), :mod:`gibbs` (Gibbs measures by
quadrature, their limit and couplings), :mod:`metrics` (Wasserstein-1 and
rate fits), :mod:`harness` (named experiments) and :mod:`cli`.
"""
from .diffusion import DriftSpec, drift, ellipticity_scan, field_get, upsilon, upsilon_fd
from .gibbs import GibbsMeasure, coupled_pair, normalize, nu_star, sample, w1_to_nu_star
from .metrics import EmpiricalMeasure, rate_fit, w1
from .potentials import AssumptionError, ParameterError, catalog_get, check_assumptions
from .schedules import (AnnealSchedule, ConstantLevel, LogPowerSchedule, PlateauSchedule, StepSequence,
                        varpi_estimate)
from .simulate import (EnsembleDivergedError, NoiseModel, em_step, em_step_continuous, em_step_plateau,
                       fine_reference_solve, interpolate, run_ensemble)

__version__ = "0.1.0"
