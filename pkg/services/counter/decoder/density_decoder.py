"""
Density decoder: conv 3x3 + leaky rectifier + x2 bilinear upsampling, repeated
log2(S) times, then a 1x1 head with a non-negative rectifier. The head uses a
symmetric softplus: zero only at zero input, live gradient everywhere else.

Channel widths halve per stage starting from C (never below 1). The predicted
count of a map is the sum of its entries.
"""

import math
from typing import List, Sequence, Tuple, Union

import numpy as np

from errors import ConfigurationError
from models.config_models import DecoderConfig
from tensor.autograd import ShapeError, Tensor
from tensor.functional import bilinear_upsample, density_rectifier, leaky_relu
from tensor.nn import Conv2d, Module


def stage_count(patch_size: int) -> int:
    stages = math.log2(patch_size)
    if patch_size < 1 or stages != int(stages):
        raise ConfigurationError(f"patch size {patch_size} cannot be reached by x2 upsampling stages")
    return int(stages)


def stage_widths(dim: int, patch_size: int) -> List[int]:
    widths = []
    width = dim
    for _ in range(stage_count(patch_size)):
        width = max(1, width // 2)
        widths.append(width)
    return widths


class DensityDecoder(Module):
    def __init__(self, dim: int, patch_size: int, config: DecoderConfig, rng: np.random.Generator):
        self._slope = config.leaky_slope
        self._dim = dim
        self.convs = []
        width = dim
        for out in stage_widths(dim, patch_size):
            self.convs.append(Conv2d(width, out, 3, rng))
            width = out
        self.head = Conv2d(width, 1, 1, rng, std=config.head_init_std)

    def __call__(self, volume: Tensor) -> Tensor:
        if volume.ndim != 3 or volume.shape[0] != self._dim:
            raise ShapeError(f"decoder expects a [{self._dim}, h, w] volume, got {volume.shape}")
        x = volume
        for conv in self.convs:
            x = bilinear_upsample(leaky_relu(conv(x), self._slope), 2)
        return density_rectifier(self.head(x))


def decode(volume: Tensor, decoder: DensityDecoder) -> Tensor:
    return decoder(volume)


def decode_all(
    volumes: Sequence[Tensor], main: DensityDecoder, aux: Sequence[DensityDecoder]
) -> Tuple[Tensor, List[Tensor]]:
    """Last volume -> main decoder; volume k < K -> auxiliary decoder k"""
    if not volumes:
        raise ShapeError("decode_all needs at least one correlation volume")
    if len(aux) != len(volumes) - 1:
        raise ShapeError(f"{len(volumes)} volumes need {len(volumes) - 1} auxiliary decoders, got {len(aux)}")
    intermediates = [decoder(volume) for decoder, volume in zip(aux, volumes[:-1])]
    return main(volumes[-1]), intermediates


def count(y: Union[Tensor, np.ndarray]) -> float:
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return float(data.sum())
