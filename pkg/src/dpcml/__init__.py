"""Diversity-promoting collaborative metric learning on implicit feedback.

Multi-vector user embeddings trained with a min-distance hinge ranking loss
and a two-sided diversity regularizer, plus the full top-N evaluation stack.
"""

from .config import ConfigError, ModelConfig, PRESETS, preset_config
from .data import (AttributeTable, EmptyDatasetError, InteractionDataset,
                   ParseError, RawRating, build_dataset, load_attributes,
                   load_ratings)
from .embedding import (CheckpointError, EmbeddingStore, Score, init_store,
                        load_checkpoint, project, rank_items, replicate_users,
                        save_checkpoint, score)
from .evaluation import (BoundInputs, BoundResult, EvalReport, evaluate,
                         first_hit_mrr, generalization_bound, maxdiv,
                         per_group_map, preference_diversity)
from .objective import (GradientSink, LossBreakdown, batch_gradients,
                        batch_objective, dcrs_penalty, exact_ranking_risk,
                        hinge_loss, user_diversity)
from .sampling import (SamplingError, Triplet, sample_popularity,
                       sample_uniform, select_hard)
from .trainer import DivergenceError, FitResult, TrainState, fit, train_epoch

__version__ = "0.1.0"
