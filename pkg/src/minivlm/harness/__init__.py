from .benchmark import result_schema, run_benchmark, validate_result, write_result
from .experiment import (OUTPUT_ROOT_ENV, ExperimentConfig, environment_fingerprint, experiment_from_dict,
                         load_experiment, make_run_dir, output_root)
from .tables import TARGETS, Cell, all_passed, reproduce, run_cost_tables

__all__ = [
    "result_schema", "run_benchmark", "validate_result", "write_result", "OUTPUT_ROOT_ENV", "ExperimentConfig",
    "environment_fingerprint", "experiment_from_dict", "load_experiment", "make_run_dir", "output_root", "TARGETS",
    "Cell", "all_passed", "reproduce", "run_cost_tables",
]
