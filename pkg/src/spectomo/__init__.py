"""Multi-species spectroscopic tomography.

Kernel tables and a matrix-free forward model for phase-resolved,
multi-focal-plane, multi-wavenumber scattering data; identifiability audits
for the separable species model; point-scatterer simulation; and regularized
reconstruction.
"""
from .errors import BudgetExceeded, ConfigError, NumericalFailure
from .kernel import ImagingGeometry, KernelTable, build_kernel_table, isam_kernel
from .forward import ForwardOperator, apply_adjoint, apply_forward, khatri_rao
from .spectra import SpectralLibrary, SpectralProfile, build_H

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded",
    "ConfigError",
    "NumericalFailure",
    "ImagingGeometry",
    "KernelTable",
    "build_kernel_table",
    "isam_kernel",
    "ForwardOperator",
    "apply_forward",
    "apply_adjoint",
    "khatri_rao",
    "SpectralLibrary",
    "SpectralProfile",
    "build_H",
    "__version__",
]
