"""Python bindings for the mudsim DS-CDMA multiuser detection simulator."""

from _mudsim import (  # noqa: F401
    Scenario,
    SingularMatrixError,
    bcjr_decode,
    build_true_R,
    conv_encode,
    detect,
    detector_names,
    estimate_B,
    estimate_R,
    linear_mmse_bank,
    run_experiment,
    s_random_interleaver,
    sdf_bank,
    sigma_from_ebn0,
    viterbi_decode,
    wilson_interval,
)

__all__ = [
    "Scenario",
    "SingularMatrixError",
    "bcjr_decode",
    "build_true_R",
    "conv_encode",
    "detect",
    "detector_names",
    "estimate_B",
    "estimate_R",
    "linear_mmse_bank",
    "run_experiment",
    "s_random_interleaver",
    "sdf_bank",
    "sigma_from_ebn0",
    "viterbi_decode",
    "wilson_interval",
]
