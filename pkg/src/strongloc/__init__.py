"""Strain localization as a trainable displacement discontinuity.

The displacement is a regular field plus a smoothed jump across a straight
band whose position, orientation and magnitude are trained together with
the regular part by minimizing the total energy.
"""

import types as _types

from .driver import (LoadProgram, Protocol, StepReport, bar_setup, elastic_presolve,
                     run_load_program, shear_setup, solve_load_step)
from .energy import (CollocationSet, EnergyBreakdown, assemble_energy, bar_collocation,
                     boundary_loss, gated_loss, postprocess, shear_collocation)
from .errors import (ConfigError, DivergenceError, DomainError, NonConvergenceError,
                     NonFiniteError, StronglocError)
from .fields import (BandGeometry, FieldModel, RegularField1D, RegularField2D, band_activation,
                     band_activation_spatial_gradient, eval_regular, eval_total)
from .material import (MaterialSpec, ShearYieldProfile, bar_area, cohesive_energy_density,
                       cohesive_traction, elastic_energy_density, k_factor, stress,
                       yield_diagnostic)
from .oracle import compliance_integral, solve_bar, solve_bar_regularized, solve_shear

__version__ = "0.1.0"

__all__ = sorted(name for name, obj in globals().items()
                 if not name.startswith("_") and not isinstance(obj, _types.ModuleType))
