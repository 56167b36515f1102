"""gradbal: herding-based gradient balancing for SGD example ordering.

The package turns per-sample gradients into low-discrepancy example
orders: balancing kernels assign +1/-1 signs that keep signed prefix sums
small, sorters convert signs into the next epoch's permutation, and a
training harness measures the effect on permuted-order SGD.
"""

from ._accel import BACKEND, available_backends
from .datasets import (
    Dataset,
    DatasetMeta,
    Example,
    gen_blobs,
    gen_linreg,
    load_csv,
    normalize,
    save_csv,
    train_test_split,
)
from .errors import ConfigError, DataFormatError, DivergenceError
from .kernels import (
    AUTO_BOUND_FACTOR,
    Accumulator,
    Balancer,
    KernelConfig,
    KernelCounters,
    KernelKind,
    Sign,
    accumulate,
    deterministic_sign,
    probabilistic_sign,
)
from .models import (
    BinaryLogistic,
    LinearRegression,
    Model,
    ModelParams,
    MultinomialLogistic,
    TwoLayerTanh,
    make_model,
)
from .sorters import (
    AccumulatorTree,
    GradientMatrix,
    HerdingStats,
    Sorter,
    Variant,
    load_permutation,
    new_sorter,
    parse_variant,
    save_permutation,
)
from .training import (
    EpochReport,
    OptimConfig,
    REPORT_SCHEMA_VERSION,
    herding_discrepancy,
    reports_from_csv,
    reports_to_csv,
    reports_to_json,
    run_experiment,
    sgd_step,
)

__version__ = "0.1.0"

__all__ = [
    "AUTO_BOUND_FACTOR",
    "Accumulator",
    "AccumulatorTree",
    "BACKEND",
    "Balancer",
    "BinaryLogistic",
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "DatasetMeta",
    "DivergenceError",
    "EpochReport",
    "Example",
    "GradientMatrix",
    "HerdingStats",
    "KernelConfig",
    "KernelCounters",
    "KernelKind",
    "LinearRegression",
    "Model",
    "ModelParams",
    "MultinomialLogistic",
    "OptimConfig",
    "REPORT_SCHEMA_VERSION",
    "Sign",
    "Sorter",
    "TwoLayerTanh",
    "Variant",
    "accumulate",
    "available_backends",
    "deterministic_sign",
    "gen_blobs",
    "gen_linreg",
    "herding_discrepancy",
    "load_csv",
    "load_permutation",
    "make_model",
    "new_sorter",
    "normalize",
    "parse_variant",
    "probabilistic_sign",
    "reports_from_csv",
    "reports_to_csv",
    "reports_to_json",
    "run_experiment",
    "save_csv",
    "save_permutation",
    "sgd_step",
    "train_test_split",
    "__version__",
]
