"""TensorFile and PPM round trips, and what a truncated file raises."""
import tempfile
from pathlib import Path

import numpy as np

from surprisal import datakit

arr = np.arange(6, dtype=np.float32).reshape(2, 3)
raw = datakit.tensorfile_dumps(arr)
print("TensorFile bytes:", raw[:15].hex(" "), "...", len(raw), "total")
assert datakit.tensorfile_dumps(datakit.tensorfile_loads(raw)) == raw

try:
    datakit.tensorfile_loads(raw[:-1])
except datakit.FormatError as exc:
    print("truncated ->", exc.code, ":", exc)

img = datakit.load_bundled_pristine()[0]
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "img.ppm"
    datakit.write_ppm(img, path)
    back = datakit.read_ppm(path)
print("PPM round trip exact:", np.array_equal(back, img), back.shape)
