"""Masked-edge prediction toolkit: synthetic scene generation, the
encoder-decoder edge network with iterative unmasking inference, and the
ODS/OIS/crispness evaluator.

The compiled extension lives in the CMake build tree (build/python); put that
directory on PYTHONPATH next to this package, or copy the shared object into
the package directory.
"""

try:
    from _memo import (
        Network,
        average_crispness,
        build_dataset,
        edge_tolerance_px,
        generate_scene,
        load_dataset,
        match_edges,
        nms_thin,
        ods_ois,
    )
except ImportError:
    from ._memo import (
        Network,
        average_crispness,
        build_dataset,
        edge_tolerance_px,
        generate_scene,
        load_dataset,
        match_edges,
        nms_thin,
        ods_ois,
    )

__all__ = [
    "Network",
    "average_crispness",
    "build_dataset",
    "edge_tolerance_px",
    "generate_scene",
    "load_dataset",
    "match_edges",
    "nms_thin",
    "ods_ois",
]
