"""
Microlens geometry and pixel classes
====================================

Where do the useful pixels of a focused plenoptic capture live?
"""

import math

from plenopress.camera_geometry import PixelClass, canonical_tspc, center_array, classify_pixels, min_crop_size

spec = canonical_tspc()
print(f"sensor {spec.sensor_width}x{spec.sensor_height}, "
      f"{spec.complete_cols}x{spec.complete_rows} complete microlenses, R = {spec.microlens_radius_R}")

# the largest square inside the uniformly lit disc of radius m R
d_min = min_crop_size(spec.epa_coefficient_m, spec.microlens_radius_R)
print(f"smallest lossless crop: {d_min:.3f} px, so the pipeline uses d = 48")

# label every sensor pixel; the crop square wins over everything but the gaps
classes = classify_pixels(spec, 48)
for cls, frac in classes.class_fractions.items():
    print(f"  {cls.name:24s} {100 * frac:6.2f} %")

# the gaps between touching discs on a hexagonal lattice
print(f"hex packing leaves {100 * (1 - math.pi / (2 * math.sqrt(3))):.2f} % uncovered in the interior")

# one interior microimage as a coarse character map of its labels
cx, cy = center_array(spec)[10, 10]
glyph = {PixelClass.INTER_MICROIMAGE: " ", PixelClass.BOUNDARY_INCOMPLETE: "#",
         PixelClass.VIGNETTING: ".", PixelClass.SUB_APERTURE_EFFECTIVE: "S", PixelClass.LF_EFFECTIVE_ONLY: "o"}
window = classes.labels[int(cy) - 36:int(cy) + 36:3, int(cx) - 36:int(cx) + 36:3]
print("\n".join("".join(glyph[PixelClass(v)] for v in row) for row in window))
