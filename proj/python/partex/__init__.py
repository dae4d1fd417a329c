"""Part-aware textured mesh toolkit: baking, staged training, texturing, rendering."""

import json

from ._core import (
    PartexError,
    RunConfig,
    bake,
    dry_run,
    generate,
    interpolate,
    read_png,
    render,
    seam_consistency,
    ssim,
    stages,
    texture,
    train,
    write_toy_dataset,
)
from ._core import eval_json as _eval_json


def evaluate(manifest, reference=None, views=12, size=256):
    """Seam, compatibility and (with a reference) multi-view SSIM as a dict."""
    return json.loads(_eval_json(manifest, reference, views, size))


__all__ = [
    "PartexError",
    "RunConfig",
    "bake",
    "dry_run",
    "evaluate",
    "generate",
    "interpolate",
    "read_png",
    "render",
    "seam_consistency",
    "ssim",
    "stages",
    "texture",
    "train",
    "write_toy_dataset",
]
