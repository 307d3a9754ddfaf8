"""
Splitting a CT slice into high- and low-frequency parts
========================================================

The denoiser only ever sees the high-frequency image. The coarse
approximation band, which holds the HU level of every tissue, is added back
untouched, so a global offset on the input comes straight through.
"""

import numpy as np

from dmlct.data import PhantomSpec, make_phantom_pair
from dmlct.evaluation import difference_image, save_gray8
from dmlct.wavelet import decompose, split_bands

# one noisy low-dose phantom: skull ring, brain, an air cavity and a bone bar
img = make_phantom_pair(PhantomSpec(seed=0), 1, 1).ldct[0]

bands = decompose(img.pixels, level=4)
print("approx band", bands.approx.shape, "details per level", [d[0].shape for d in bands.details])

hf, lf = split_bands(img.pixels, 4)
print("max |hf + lf - x| =", np.abs(hf + lf - img.pixels).max())

# a +100 HU offset lands entirely in the low-frequency part
hf2, lf2 = split_bands(img.pixels + 100, 4)
print("hf change %.2e HU, lf mean change %.3f HU" % (np.abs(hf2 - hf).max(), (lf2 - lf).mean()))

save_gray8((hf + 500) / 1000, "hf.png")
save_gray8(difference_image(lf, img.pixels, (-300, 300)), "lf_minus_x.png")
