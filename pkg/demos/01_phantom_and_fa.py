# Synthetic cohort: paired T1 / FA volumes whose anatomy depends on diagnosis.
#
#    python demos/01_phantom_and_fa.py [out_dir]
#
import sys
import tempfile

import numpy as np

from dwimpute.manifest import validate_manifest
from dwimpute.phantom import (
    PhantomSpec, fractional_anisotropy, generate_dataset, generate_subject,
    subject_rng, ventricle_voxel_count,
)

# FA of a few eigenvalue triples (units of 1e-3 mm^2/s).
for triple in [(1, 1, 1), (1, 0, 0), (1.7, 0.3, 0.3), (3, 3, 3)]:
    print(triple, "FA =", round(fractional_anisotropy(triple), 4))

# The function also works on whole arrays of triples, along the last axis
lam = np.random.default_rng(0).uniform(0, 3, (4, 3))
print("vectorised:", fractional_anisotropy(lam).round(3))

# One subject per class. Ventricles grow from CN to AD, which the classifier
# can pick up from the T1 image alone.
spec = PhantomSpec(dims=(24, 24, 24))
for dx in ("CN", "MCI", "AD"):
    t1, fa, rec = generate_subject(spec, dx, subject_rng(0, "train", dx, 0), subject_id=f"demo-{dx}")
    print(f"{dx:>3}: ventricle voxels {ventricle_voxel_count(t1):4d}, "
          f"mean FA in brain {fa.voxels[fa.voxels > 0].mean():.3f}, T1 range [{t1.voxels.min()}, {t1.voxels.max()}]")

# Central slice, coarse ASCII rendering
t1, fa, _ = generate_subject(spec, "AD", subject_rng(0, "train", "AD", 0))
chars = " .:-=+*#"
for row in t1.voxels[:, :, 12][::2]:
    print("".join(chars[min(int(v * len(chars)), len(chars) - 1)] for v in row))

# A small cohort on disk: a quarter of the subjects keep their FA map
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="phantom-")
counts = {"train": {"CN": 8, "MCI": 12, "AD": 6}, "val": {"CN": 3, "MCI": 3, "AD": 3},
          "test": {"CN": 3, "MCI": 3, "AD": 3}}
manifest = generate_dataset(PhantomSpec(dims=(16, 16, 16)), counts, 0.25, out)
print(f"\nwrote {len(manifest.records)} scans to {out}")
for split in ("train", "val", "test"):
    recs = manifest.select(split)
    print(f"  {split:5s}: {len(recs):3d} scans, {sum(r.has_dwi for r in recs):3d} with FA")
print("manifest problems:", validate_manifest(manifest) or "none")
