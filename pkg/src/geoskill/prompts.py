"""Versioned prompt-template loading. Templates are text assets shipped with
the package; their hashes are logged in every record for auditability."""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return (
        resources.files("geoskill").joinpath("templates", f"{name}.txt").read_text("utf-8")
    )


@lru_cache(maxsize=None)
def template_hash(name: str) -> str:
    return hashlib.sha256(load_template(name).encode("utf-8")).hexdigest()[:16]
