"""
Linear models for differential abundance analysis of compositional counts.

The main entry points are :func:`linda` (tables + metadata + formula) and
:func:`run_linda` (raw count matrix + design matrix).
"""

__version__ = "0.1.0"

from .bias import BiasEstimate, debias, estimate_mode, select_bandwidth  # noqa: E402
from .data_io import (CountTable, DesignMatrix, DesignSpec, MetadataTable,  # noqa: E402
                      build_design, design_from_arrays, filter_dataset, read_count_table,
                      read_metadata, winsorize)
from .errors import (DesignError, IllConditionedDesign, LindaError, NumericError,  # noqa: E402
                     ParseError, ValidationError)
from .inference import bh_adjust, fdp_threshold, p_values, t_statistics  # noqa: E402
from .lmm import fit_lmm_all  # noqa: E402
from .ols import compute_design_summary, fit_ols_all  # noqa: E402
from .pipeline import LindaResult, linda, run_linda  # noqa: E402
from .preprocess import (clr_transform, handle_zeros, libsize_association_test,  # noqa: E402
                         library_sizes)
