"""Graph-theoretic analysis of multi-head attention.

Models each causal attention head as a feedforward DAG over token positions
and measures two complementary quantities: how fast a forward random walk
mixes onto the final position, and how faithfully each token's signal can
peak at that position under repeated diffusion. Includes a from-scratch toy
decoder Transformer whose learned attention maps feed both analyses.
"""

from .numerics import (ContractViolation, RngStream, matmul,
                       sample_categorical, softmax_causal_rows, tv_distance)
from .graphs import (DIFFUSION, WALK, FeedforwardGraph, HeadSystem,
                     TransitionMatrix, combine_heads, diffusion_matrix,
                     example_one, example_two, feedforward_graph,
                     random_feedforward_graph, stationary_residual,
                     verify_sink_stationarity, walk_matrix)
from .mixing import (MixingConfig, MixingEstimate, ForwardProfile, NOT_MIXED,
                     best_head_exceedance, certified_forward_probability,
                     effective_forward_probability, exact_mixing_time,
                     forward_transition_from_attention, hoeffding_tail,
                     mc_hitting_proxy, mixing_bound, simulate_hitting_times)
from .fidelity import (FidelityProfile, FidelitySummary, HeadComparison,
                       dataset_fidelity_proxy, minimax_fidelity,
                       multi_head_power_expansion_check, node_fidelity,
                       per_head_vs_combined, signal_at_sink)
from .records import AttentionRecord, load_attention_dump, save_attention_dump
from .tasks import (Dataset, gen_copy, gen_cycle, generate, load_dataset,
                    save_dataset, verify_task_rule)
from .transformer import (Microformer, ModelConfig, TrainLog, TrainSchedule,
                          TrainingDiverged, adam_step, extract_attention,
                          forward, head_importance, init_model,
                          load_checkpoint, loss_and_grads, save_checkpoint,
                          train)

__version__ = "0.1.0"
