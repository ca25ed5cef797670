"""Deterministic package building from declarative recipes."""

from __future__ import annotations

from .archive import ArchiveDifference, Member, diff_archives, read_archive, write_archive
from .build import (
    PackageArtifact,
    ReproReport,
    build,
    build_path_dependency,
    build_recipe_file,
    check_package_contents,
    publish,
    render_path_dependency,
    verify_reproducible,
)
from .render import RenderedRecipe, compiler_token, render

__all__ = [
    "ArchiveDifference",
    "Member",
    "PackageArtifact",
    "RenderedRecipe",
    "ReproReport",
    "build",
    "build_path_dependency",
    "build_recipe_file",
    "check_package_contents",
    "compiler_token",
    "diff_archives",
    "publish",
    "read_archive",
    "render",
    "render_path_dependency",
    "verify_reproducible",
    "write_archive",
]
