from fedtrace._core import (
    authpct,
    ct_score,
    fid,
    fld_lite,
    qn_score,
    run_config,
    run_config_file,
    scott_bandwidth,
    score_sets,
    verify_run,
)

__version__ = "0.1.0"

__all__ = [
    "authpct",
    "ct_score",
    "fid",
    "fld_lite",
    "qn_score",
    "run_config",
    "run_config_file",
    "scott_bandwidth",
    "score_sets",
    "verify_run",
]
