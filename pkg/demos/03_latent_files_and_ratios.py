"""Serialize latent codes both ways and account for compression honestly.

Element-wise, a (256,256,3) image against its (16,16,64) latent is always
12:1. On the wire that depends on the payload encoding: float32 latents
are ~3:1 against 8-bit RGB; the quantized-uint8 mode restores ~12:1 at a
bounded per-element error.

Run from the repository root:  python demos/03_latent_files_and_ratios.py
"""

import numpy as np

from aecodec import fileio
from aecodec.model import encode, init_params

params = init_params(0)
image = np.random.default_rng(5).uniform(0, 1, (1, 3, 256, 256)).astype(np.float32)
latent = encode(image, params)
print(f"image (3,256,256) -> latent {latent.values.shape[1:]}")

raw_bytes = 256 * 256 * 3
f32_blob = fileio.serialize_latent(latent, "f32")
u8_blob = fileio.serialize_latent(latent, "u8")

for label, blob in (("float32", f32_blob), ("uint8", u8_blob)):
    ratios = fileio.compression_ratio((256, 256, 3), len(blob), raw_bytes)
    print(f"{label:8s} file {len(blob):6d} B   element ratio "
          f"{ratios.element_ratio:.1f}:1   byte ratio {ratios.byte_ratio:.2f}:1")

back_f32 = fileio.deserialize_latent(f32_blob)
back_u8 = fileio.deserialize_latent(u8_blob)
print()
print(f"float32 roundtrip bit-exact: "
      f"{np.array_equal(back_f32.values, latent.values)}")
span = float(latent.values.max() - latent.values.min())
err = float(np.abs(back_u8.values - latent.values).max())
print(f"uint8 roundtrip max error {err:.2e} "
      f"(bound scale/2 = {span / 510:.2e})")
