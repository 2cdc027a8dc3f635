from .attention import CrossAttention, SelfAttention, scaled_dot_attention
from .degradation import (
    DegradationEncoder, TimeModulator, deg_class_loss, extract_degradation, modulate_time, sinusoidal_embedding
)
from .semantic import SemanticContext, SemanticCrossAttention, SemanticEncoder, deep_cross_attention, distill_loss, extract_semantic
from .structural import (
    Modality, StructuralAdapter, StructuralCues, StructuralEncoder, StructuralPrior, TokenAggregator,
    compute_dog, encode_modality, extract_structural, sta_aggregate, structural_film
)
