"""GeoSkill: a training-free, self-evolving skill-graph engine for visual
geolocation with pluggable vision-language-model backends."""

from .skill_model import (
    AtomicSkill,
    GeoCoordinate,
    Provenance,
    ProvenanceKind,
    RelationPrior,
    SkillLibrary,
    Stage,
    load_library,
    make_skill,
    save_library,
    skill_id,
    validate_skill,
)

__version__ = "0.1.0"

__all__ = [
    "AtomicSkill",
    "GeoCoordinate",
    "Provenance",
    "ProvenanceKind",
    "RelationPrior",
    "SkillLibrary",
    "Stage",
    "load_library",
    "make_skill",
    "save_library",
    "skill_id",
    "validate_skill",
    "__version__",
]
