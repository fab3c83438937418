"""convis: concept-conditioned saliency for joint image-text embeddings.

Rank image patches against text embeddings of lexical-hierarchy concept
definitions to obtain a saliency map for any concept, plus evaluation
harnesses (box localization, OOD detection) and an HTTP explorer service.
"""

from .encoder import (
    CallCountingBackend,
    EncoderBackend,
    FixtureTableBackend,
    Image,
    MockHashBackend,
    RemoteServiceBackend,
    RuntimeModelBackend,
    cosine,
)
from .errors import (
    BackendError,
    BackendUnavailableError,
    CacheError,
    ConfigError,
    ConvisError,
    LexiconError,
    NoPathError,
    UnknownSynsetError,
)
from .lexdb import (
    Hierarchy,
    Lexicon,
    Synset,
    filter_hierarchy,
    full_hierarchy,
    load_lexicon,
    load_seed_list,
)
from .saliency import (
    PatchEmbeddingCache,
    SaliencyConfig,
    SaliencyMap,
    compute_saliency,
    render_mask,
    render_overlay,
)
from .simcore import (
    DefinitionMatrix,
    build_definition_matrix,
    max_rank_sim,
    rank_all,
    rank_sim,
    top_concepts,
    z_all,
    z_score,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Image",
    "EncoderBackend",
    "MockHashBackend",
    "FixtureTableBackend",
    "RemoteServiceBackend",
    "RuntimeModelBackend",
    "CallCountingBackend",
    "cosine",
    "Synset",
    "Lexicon",
    "Hierarchy",
    "load_lexicon",
    "load_seed_list",
    "filter_hierarchy",
    "full_hierarchy",
    "DefinitionMatrix",
    "build_definition_matrix",
    "z_score",
    "z_all",
    "rank_sim",
    "rank_all",
    "max_rank_sim",
    "top_concepts",
    "SaliencyConfig",
    "SaliencyMap",
    "PatchEmbeddingCache",
    "compute_saliency",
    "render_overlay",
    "render_mask",
    "ConvisError",
    "LexiconError",
    "UnknownSynsetError",
    "NoPathError",
    "BackendError",
    "BackendUnavailableError",
    "CacheError",
    "ConfigError",
]
