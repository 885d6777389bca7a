"""Impute missing FA volumes from T1 with a conditional 3D diffusion model and
measure the effect on CN / MCI / AD classification."""

from .manifest import DatasetManifest, ScanRecord, validate_manifest
from .volume import Volume3D, minmax_normalize, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest", "ScanRecord", "Volume3D", "minmax_normalize", "read_volume",
    "validate_manifest", "write_volume",
]
