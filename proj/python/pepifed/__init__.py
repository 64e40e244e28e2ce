"""Python bindings for the distributed-learning simulator core.

The compiled extension lives next to this package when installed. During
development the CMake build tree holds it instead; point PEPIFED_PYMODULE_DIR
at that directory (the test suite does this automatically).
"""

import glob
import importlib.util
import os
import sys

try:
    from . import _core
except ImportError:
    _dir = os.environ.get("PEPIFED_PYMODULE_DIR")
    if not _dir:
        raise
    _candidates = sorted(glob.glob(os.path.join(_dir, "_core*.so"))) or sorted(
        glob.glob(os.path.join(_dir, "_core*.pyd"))
    )
    if not _candidates:
        raise ImportError(f"no _core extension found in {_dir}")
    _spec = importlib.util.spec_from_file_location(f"{__name__}._core", _candidates[0])
    _core = importlib.util.module_from_spec(_spec)
    sys.modules[_spec.name] = _core
    _spec.loader.exec_module(_core)

__version__ = "0.1.0"

ScaledNet = _core.ScaledNet
Schedule = _core.Schedule
add_awgn = _core.add_awgn
checkpoint_layer_kinds = _core.checkpoint_layer_kinds
effective_matrix = _core.effective_matrix
layer_forward = _core.layer_forward
load_schedule = _core.load_schedule
new_sub_matrix_pair = _core.new_sub_matrix_pair
param_counts = _core.param_counts
parse_schedule = _core.parse_schedule
pi_readout = _core.pi_readout
synth_blobs = _core.synth_blobs
validate_schedule = _core.validate_schedule

__all__ = [
    "ScaledNet",
    "Schedule",
    "add_awgn",
    "checkpoint_layer_kinds",
    "effective_matrix",
    "layer_forward",
    "load_schedule",
    "new_sub_matrix_pair",
    "param_counts",
    "parse_schedule",
    "pi_readout",
    "synth_blobs",
    "validate_schedule",
]
