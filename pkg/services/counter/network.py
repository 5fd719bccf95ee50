"""
==============================================================================
EXEMPLAR COUNTER
==============================================================================
Full counting network: mutual relation encoder -> relation learner ->
main + auxiliary density decoders.
==============================================================================
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from decoder.density_decoder import DensityDecoder, decode_all
from encoder.mrm_encoder import MRMEncoder
from errors import DataError
from models.config_models import TrainConfig
from models.sample_models import CountingSample
from relation.relation_learner import RelationLearner
from tensor.autograd import Tensor, set_default_dtype
from tensor.nn import Module


class Prediction(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    density: Tensor  # [1, H, W]
    intermediates: List[Tensor]
    alignment: Optional[Tensor] = None  # [N_Q], mean over layers
    alignment_layers: List[Tensor]

    @property
    def count(self) -> float:
        return float(self.density.data.sum())


class ExemplarCounter(Module):
    def __init__(self, config: TrainConfig, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        enc = config.encoder
        self._config = config
        self.encoder = MRMEncoder(enc, config.ablation, rng)
        self.relation = RelationLearner(config.relation, enc.embed_dim, rng, zero_shot=enc.zero_shot)
        self.decoder = DensityDecoder(enc.embed_dim, enc.patch_size, config.decoder, rng)
        self.aux_decoders = [
            DensityDecoder(enc.embed_dim, enc.patch_size, config.decoder, rng)
            for _ in range(config.relation.iterations - 1)
        ]

    @property
    def config(self) -> TrainConfig:
        return self._config

    def select_exemplars(self, sample: CountingSample) -> Tuple[List[np.ndarray], List[Tuple[float, float]]]:
        shots = self._config.encoder.shots
        if self._config.encoder.zero_shot:
            return [], []
        if len(sample.exemplars) < shots:
            raise DataError(f"{sample.sample_id}: {len(sample.exemplars)} exemplars stored, {shots} requested")
        return sample.exemplars[:shots], sample.box_sizes[:shots]

    def predict(
        self, query: np.ndarray, exemplars: Sequence[np.ndarray], box_sizes: Sequence[Tuple[float, float]]
    ) -> Prediction:
        enc = self._config.encoder
        encoded = self.encoder(Tensor(query), [Tensor(e) for e in exemplars])
        volumes = self.relation(
            encoded.z_q, encoded.z_e, encoded.n_exemplars, box_sizes, enc.query_size, enc.query_grid
        )
        density, intermediates = decode_all([v.response for v in volumes], self.decoder, self.aux_decoders)
        return Prediction(
            density=density,
            intermediates=intermediates,
            alignment=encoded.alignment,
            alignment_layers=encoded.alignment_layers,
        )

    def __call__(self, sample: CountingSample) -> Prediction:
        exemplars, box_sizes = self.select_exemplars(sample)
        return self.predict(sample.query, exemplars, box_sizes)


def build_model(config: TrainConfig) -> ExemplarCounter:
    """Set the process precision and build a freshly initialised model for `config`"""
    set_default_dtype(config.precision)
    return ExemplarCounter(config)
