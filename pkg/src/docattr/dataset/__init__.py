from docattr.dataset.extract import extract_words, patch_count, tile_patches
from docattr.dataset.foreground import foreground_count, otsu_threshold, rank_by_foreground
from docattr.dataset.records import (
    ComponentRecord,
    Manifest,
    PageRecord,
    read_manifest,
    write_manifest,
)
from docattr.dataset.render import RenderConfig, render_synthetic_page
from docattr.dataset.subset import Quotas, select_small_subset
from docattr.dataset.transforms import add_gaussian_noise, normalize_image

__all__ = [
    "ComponentRecord",
    "Manifest",
    "PageRecord",
    "Quotas",
    "RenderConfig",
    "add_gaussian_noise",
    "extract_words",
    "foreground_count",
    "normalize_image",
    "otsu_threshold",
    "patch_count",
    "rank_by_foreground",
    "read_manifest",
    "render_synthetic_page",
    "select_small_subset",
    "tile_patches",
    "write_manifest",
]
