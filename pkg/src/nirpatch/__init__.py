"""Black-box adversarial patch toolkit for NIR face identification.

Evolves the shapes and positions of infrared-absorbing ink patches with
differential evolution, renders them through a skin light-reflection model,
and needs nothing from the recognizer beyond per-identity probabilities.
"""

from .errors import NirPatchError
from .geometry import (
    Contour,
    GenomeBounds,
    PatchGenome,
    apply_constraints,
    bspline_contour,
    compose_mask,
    compute_vertices,
    load_genome,
    rasterize,
    save_genome,
)
from .harness import (
    ExperimentReport,
    PostureResult,
    ToyCase,
    ablation_lrm,
    ablation_shapes,
    evaluate_asr,
    make_toy_dataset,
    posture_sweep,
)
from .image import BinaryMask, NirImage, load_image, load_mask, save_image, save_mask
from .optimizer import (
    AttackConfig,
    AttackResult,
    FitnessContext,
    attack_succeeds,
    crossover,
    fitness,
    init_population,
    mutate,
    run_attack,
    select,
)
from .oracle import (
    BuiltinScorer,
    ExternalScorer,
    Gallery,
    ScoreVector,
    builtin_embed,
    external_score,
    score,
)
from .reflectance import (
    ReflectanceParams,
    apply_ink,
    beckmann_d,
    brdf,
    fresnel_f,
    geometry_g,
    render_adversarial,
)
from .rng import RngStream, rng_draw_uniform

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackResult",
    "BinaryMask",
    "BuiltinScorer",
    "Contour",
    "ExperimentReport",
    "ExternalScorer",
    "FitnessContext",
    "Gallery",
    "GenomeBounds",
    "NirImage",
    "NirPatchError",
    "PatchGenome",
    "PostureResult",
    "ReflectanceParams",
    "RngStream",
    "ScoreVector",
    "ToyCase",
    "ablation_lrm",
    "ablation_shapes",
    "apply_constraints",
    "apply_ink",
    "attack_succeeds",
    "beckmann_d",
    "brdf",
    "bspline_contour",
    "builtin_embed",
    "compose_mask",
    "compute_vertices",
    "crossover",
    "evaluate_asr",
    "external_score",
    "fitness",
    "fresnel_f",
    "geometry_g",
    "init_population",
    "load_genome",
    "load_image",
    "load_mask",
    "make_toy_dataset",
    "mutate",
    "posture_sweep",
    "rasterize",
    "render_adversarial",
    "rng_draw_uniform",
    "run_attack",
    "save_genome",
    "save_image",
    "save_mask",
    "score",
    "select",
]
