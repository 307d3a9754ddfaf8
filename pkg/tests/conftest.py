import pytest
import torch
from torch import nn

from dmlct.config import TrainConfig
from dmlct.data import PhantomSpec, make_phantom_pair

torch.set_num_threads(1)


def tiny_config(**kw) -> TrainConfig:
    base = dict(epochs=4, batch_size=4, crop=32, wavelet_level=3, base_channels=8, num_rrdb_blocks=1,
                growth_channels=8, embed_dim=16, proj_hidden_dim=16, num_anchor_locations=16,
                disc_base_channels=8, disc_num_blocks=2)
    base.update(kw)
    return TrainConfig(**base)


class ConstD(nn.Module):
    """Parameter-free discriminator stub: the adversarial term becomes a constant."""

    def forward(self, x):
        return torch.zeros(x.shape[0], 1, x.shape[2] // 8, x.shape[3] // 8, dtype=x.dtype)


@pytest.fixture(scope="session")
def tiny_phantoms():
    return make_phantom_pair(PhantomSpec(size=64, seed=0, shift_jitter_px=2, domain_mean_shift=-60), 8, 8)
