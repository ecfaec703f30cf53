"""Neural cellular automata with an identity channel.

A 17-channel NCA engine (RGB, alpha, 12 hidden, identity), three training
variants that differ only in the identity-layer loss, a two-seed proximity
experiment harness with movement metrics, and the nonparametric statistics
used to compare the variants.
"""

from .grid import (ALIVE_THRESHOLD, ALPHA, IDENTITY, N_CHANNELS, SeedSpec,
                   alive_mask, bounding_box, composite_ideal, new_grid,
                   place_seed)
from .model import (HIDDEN_WIDTH, INPUT_DIM, ModelWeights, cell_delta, grow,
                    init_weights, perceive, step_rng, update_step)
from .training import (SamplePool, TrainConfig, TrainingDiverged, adam_init,
                       adam_step, bptt_gradients, loss, normalize_gradients,
                       train, train_iteration)

__version__ = "0.1.0"
