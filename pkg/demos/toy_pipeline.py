"""
End to end on synthetic phantoms
================================

Make an unpaired LDCT/HDCT dataset with a -60 HU shift on the high-dose
side, train briefly, denoise, and look at the region statistics. Expect a
few minutes on a laptop CPU; raise EPOCHS for a longer look.

At this scale the metric term dominates the generator update and region
statistics come out far from the input (see the notes in the README), so
read the numbers as a smoke test of the plumbing, not as a result.
"""

import json
from pathlib import Path

from dmlct.cli import run_denoise, run_eval, run_synth, run_train
from dmlct.config import TrainConfig

EPOCHS = 2
out = Path("toy_run")
out.mkdir(exist_ok=True)

(out / "phantom.ini").write_text(
    "[phantom]\nn_ld = 32\nn_hd = 32\nsize = 128\nseed = 1\n"
    "noise_sigma_ld = 60\nnoise_sigma_hd = 10\ndomain_mean_shift = -60\n")
print(run_synth(out / "phantom.ini", out / "data"))

# a small network so this runs on a CPU; the losses keep their usual weights
cfg = TrainConfig(epochs=EPOCHS, batch_size=4, crop=64, wavelet_level=4, base_channels=16, num_rrdb_blocks=1,
                  growth_channels=8, embed_dim=64, proj_hidden_dim=64, num_anchor_locations=64,
                  disc_base_channels=16)
fit = run_train(cfg, out / "data" / "ldct", out / "data" / "hdct", out / "train")
print("last log row", fit.records[-1])

run_denoise(fit.checkpoints[-1], out / "data" / "ldct", out / "denoised")
agg = run_eval(out / "denoised", out / "eval", ref_dir=out / "data" / "clean", input_dir=out / "data" / "ldct",
               level=cfg.wavelet_level)
print(json.dumps(agg["regions"], indent=1))
