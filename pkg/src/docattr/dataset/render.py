"""Deterministic synthetic document pages with exact word boxes.

Pages stand in for scanned typewritten documents: text is laid out in lines,
rendered at the target scanning resolution, and every word's bounding box is
known exactly. The six font families are looked up by file name; when the
proprietary face is absent a visually distinct substitute is used, and a
missing bold/italic file is synthesized (stroke widening / horizontal shear).
"""

from __future__ import annotations

import functools
import importlib.util
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from docattr.core import AttributeLabelSet, task_spec
from docattr.dataset.records import PageRecord

RENDERER_VERSION = "1"
STYLES = ("normal", "bold", "italic", "bold_italic")
ITALIC_SHEAR = 0.21
BBOX_PAD = 1

# Ordered candidates per family; each entry maps style -> file name.
# The first entry whose regular face is found wins.
FONT_CANDIDATES: dict[str, list[dict[str, str]]] = {
    "arial": [
        {"normal": "arial.ttf", "bold": "arialbd.ttf", "italic": "ariali.ttf", "bold_italic": "arialbi.ttf"},
        {"normal": "Arial.ttf", "bold": "Arial Bold.ttf", "italic": "Arial Italic.ttf", "bold_italic": "Arial Bold Italic.ttf"},
        {"normal": "DejaVuSans.ttf", "bold": "DejaVuSans-Bold.ttf", "italic": "DejaVuSans-Oblique.ttf",
         "bold_italic": "DejaVuSans-BoldOblique.ttf"},
    ],
    "calibri": [
        {"normal": "calibri.ttf", "bold": "calibrib.ttf", "italic": "calibrii.ttf", "bold_italic": "calibriz.ttf"},
        {"normal": "Carlito-Regular.ttf", "bold": "Carlito-Bold.ttf", "italic": "Carlito-Italic.ttf",
         "bold_italic": "Carlito-BoldItalic.ttf"},
        {"normal": "cmss10.ttf"},
    ],
    "courier": [
        {"normal": "cour.ttf", "bold": "courbd.ttf", "italic": "couri.ttf", "bold_italic": "courbi.ttf"},
        {"normal": "DejaVuSansMono.ttf", "bold": "DejaVuSansMono-Bold.ttf", "italic": "DejaVuSansMono-Oblique.ttf",
         "bold_italic": "DejaVuSansMono-BoldOblique.ttf"},
    ],
    "times_new_roman": [
        {"normal": "times.ttf", "bold": "timesbd.ttf", "italic": "timesi.ttf", "bold_italic": "timesbi.ttf"},
        {"normal": "STIXGeneral.ttf", "bold": "STIXGeneralBol.ttf", "italic": "STIXGeneralItalic.ttf",
         "bold_italic": "STIXGeneralBolIta.ttf"},
    ],
    "trebuchet": [
        {"normal": "trebuc.ttf", "bold": "trebucbd.ttf", "italic": "trebucit.ttf", "bold_italic": "trebucbi.ttf"},
        {"normal": "DejaVuSerif.ttf", "bold": "DejaVuSerif-Bold.ttf", "italic": "DejaVuSerif-Italic.ttf",
         "bold_italic": "DejaVuSerif-BoldItalic.ttf"},
    ],
    "verdana": [
        {"normal": "verdana.ttf", "bold": "verdanab.ttf", "italic": "verdanai.ttf", "bold_italic": "verdanaz.ttf"},
        {"normal": "cmr10.ttf"},
    ],
}

DEFAULT_WORDS = tuple(
    """
    the and for are but not you all any can had her was one our out day get has him his how man new now
    old see two way who boy did its let put say she too use about above after again along also among
    another answer around because before began being below between both bring build called came carry
    change children city close come could country cover cross different does done door down draw during
    each early earth east enough even every example face family farm father feel feet field figure find
    fire first fish follow food form found four friend from gave give good great green ground group grow
    hand hard head hear heard help here high hold home horse hour house idea important inch island just
    keep kind king know land large last late learn leave left letter life light like line list listen
    little live long look made make many mark measure might mile mind money more morning most mother
    mountain move much music must name near need never next night north note nothing notice number often
    open order other over page paper part people picture piece place plant play point power press problem
    product question quick quite rain reach read real record remember rest river road rock room round rule
    same school science second seem sentence serve several shape short should show side simple since
    size small sound south space special spell stand star start state step still stood story street
    strong study such sure surface system table take talk tell than that their them then there these
    thing think this those though thought three through time together told took town travel tree true
    under unit until upon usual very voice walk want warm watch water weather week weight well were west
    what wheel when where which while white whole why wind with wonder wood word work world would write
    year young
    """.split()
)


class FontNotFoundError(LookupError):
    pass


def font_search_dirs() -> list[Path]:
    dirs = [Path(p) for p in os.environ.get("DOCATTR_FONT_DIR", "").split(os.pathsep) if p]
    dirs += [Path.home() / ".fonts", Path("/usr/share/fonts"), Path("/usr/local/share/fonts")]
    spec = importlib.util.find_spec("matplotlib")
    if spec is not None and spec.origin:
        dirs.append(Path(spec.origin).parent / "mpl-data" / "fonts" / "ttf")
    return [d for d in dirs if d.is_dir()]


@functools.lru_cache(maxsize=None)
def _font_index(dirs: tuple[Path, ...]) -> dict[str, Path]:
    index: dict[str, Path] = {}
    for d in dirs:
        for root, _, files in os.walk(d):
            for name in sorted(files):
                if name.lower().endswith((".ttf", ".otf")):
                    index.setdefault(name, Path(root) / name)
    return index


@dataclass(frozen=True)
class FontFace:
    family: str
    path: Path
    synth_bold: bool
    synth_italic: bool


def resolve_font(family: str, style: str) -> FontFace:
    """Locate the font file for ``family``/``style``, falling back to substitutes."""
    if family not in FONT_CANDIDATES:
        raise FontNotFoundError(f"unknown font family {family!r}; known: {sorted(FONT_CANDIDATES)}")
    if style not in STYLES:
        raise FontNotFoundError(f"unknown style {style!r}; known: {STYLES}")
    index = _font_index(tuple(font_search_dirs()))
    for faces in FONT_CANDIDATES[family]:
        if faces["normal"] not in index:
            continue
        if style in faces and faces[style] in index:
            return FontFace(family, index[faces[style]], False, False)
        return FontFace(
            family,
            index[faces["normal"]],
            synth_bold="bold" in style,
            synth_italic="italic" in style,
        )
    available = sorted(
        f"{fam}:{faces['normal']}"
        for fam, cands in FONT_CANDIDATES.items()
        for faces in cands
        if faces["normal"] in index
    )
    raise FontNotFoundError(
        f"no typeface found for {family!r}; available substitutes: {available or 'none'}"
    )


@dataclass(frozen=True)
class RenderConfig:
    labels: AttributeLabelSet
    page_width_in: float = 3.0
    page_height_in: float = 2.0
    margin_in: float = 0.12
    line_spacing: float = 1.2
    words: Sequence[str] = field(default=DEFAULT_WORDS, repr=False)

    @property
    def family(self) -> str:
        return task_spec("font_type").class_names[self.labels.font_type]

    @property
    def size_pt(self) -> int:
        return int(task_spec("font_size").class_names[self.labels.font_size])

    @property
    def style(self) -> str:
        return task_spec("font_emphasis").class_names[self.labels.font_emphasis]

    @property
    def dpi(self) -> int:
        return int(task_spec("scan_resolution").class_names[self.labels.scan_resolution])


@dataclass
class RenderedPage:
    record: PageRecord
    image: np.ndarray
    bboxes: list[tuple[int, int, int, int]]
    words: list[str]

    def ground_truth(self) -> dict:
        return {
            "page_id": self.record.page_id,
            "labels": self.record.labels.to_names(),
            "width": int(self.image.shape[1]),
            "height": int(self.image.shape[0]),
            "renderer_version": RENDERER_VERSION,
            "words": [{"text": w, "bbox": list(b)} for w, b in zip(self.words, self.bboxes)],
        }


def _word_tile(text: str, font: ImageFont.FreeTypeFont, face: FontFace, px: int) -> tuple[np.ndarray, int]:
    """Grayscale tile of one word (ink dark on white) and the baseline row inside it."""
    ascent, descent = font.getmetrics()
    stroke = max(1, int(round(px * 0.035))) if face.synth_bold else 0
    pad = int(np.ceil(ITALIC_SHEAR * (ascent + descent))) + stroke + 2
    left, _, right, _ = font.getbbox(text, stroke_width=stroke)
    width = right - left + 2 * pad
    height = ascent + descent + 2 * pad
    tile = Image.new("L", (max(1, width), height), 255)
    ImageDraw.Draw(tile).text(
        (pad - left, pad), text, font=font, fill=0, stroke_width=stroke, stroke_fill=0
    )
    baseline = pad + ascent
    if face.synth_italic:
        # x_src = x + shear * (y - baseline): glyph tops lean right, baseline fixed.
        tile = tile.transform(
            tile.size,
            Image.AFFINE,
            (1, ITALIC_SHEAR, -ITALIC_SHEAR * baseline, 0, 1, 0),
            resample=Image.BILINEAR,
            fillcolor=255,
        )
    return np.asarray(tile, dtype=np.uint8), baseline


def render_synthetic_page(
    config: RenderConfig, seed: int, page_id: Optional[str] = None, split: Optional[str] = None
) -> RenderedPage:
    """Render one page of random words; deterministic in ``(config, seed)``.

    Word boxes span the line box vertically (ascent + descent, widened to the
    ink if a glyph overshoots) and the ink horizontally, padded by one pixel.
    """
    face = resolve_font(config.family, config.style)
    dpi = config.dpi
    px = max(1, int(round(config.size_pt * dpi / 72.0)))
    font = ImageFont.truetype(str(face.path), px)
    ascent, descent = font.getmetrics()
    line_h = ascent + descent
    width = int(round(config.page_width_in * dpi))
    height = int(round(config.page_height_in * dpi))
    margin = int(round(config.margin_in * dpi))
    space = max(2 * BBOX_PAD + 2, int(round(font.getlength(" "))))
    pitch = max(line_h + 2 * BBOX_PAD + 2, int(round(line_h * config.line_spacing)))

    rng = np.random.default_rng(seed)
    page = np.full((height, width), 255, dtype=np.uint8)
    bboxes: list[tuple[int, int, int, int]] = []
    words: list[str] = []
    top = margin
    while top + line_h + BBOX_PAD <= height - margin:
        cursor = margin
        while True:
            text = str(config.words[int(rng.integers(len(config.words)))])
            if rng.random() < 0.15:
                text = text.capitalize()
            tile, baseline = _word_tile(text, font, face, px)
            ink_cols = np.flatnonzero((tile < 255).any(axis=0))
            ink_rows = np.flatnonzero((tile < 255).any(axis=1))
            if ink_cols.size == 0:
                continue
            ink_w = int(ink_cols[-1] - ink_cols[0] + 1)
            if cursor + ink_w + BBOX_PAD > width - margin:
                break
            # Tile origin so that the ink starts at ``cursor`` and the baseline sits on the line.
            ox = cursor - int(ink_cols[0])
            oy = top + ascent - baseline
            th, tw = tile.shape
            y0, y1 = max(0, oy), min(height, oy + th)
            x0, x1 = max(0, ox), min(width, ox + tw)
            region = page[y0:y1, x0:x1]
            np.minimum(region, tile[y0 - oy:y1 - oy, x0 - ox:x1 - ox], out=region)
            ink_top = oy + int(ink_rows[0])
            ink_bottom = oy + int(ink_rows[-1]) + 1
            bx0 = max(0, cursor - BBOX_PAD)
            bx1 = min(width, cursor + ink_w + BBOX_PAD)
            by0 = max(0, min(top, ink_top) - BBOX_PAD)
            by1 = min(height, max(top + line_h, ink_bottom) + BBOX_PAD)
            bboxes.append((bx0, by0, bx1 - bx0, by1 - by0))
            words.append(text)
            cursor += ink_w + space
        top += pitch

    image = np.repeat(page[..., None], 3, axis=2)
    pid = page_id or f"synth-{seed}"
    record = PageRecord(
        page_id=pid,
        image_path=f"pages/{pid}.png",
        labels=config.labels,
        split=split,
        word_bboxes=tuple(bboxes),
        width=width,
        height=height,
    )
    return RenderedPage(record=record, image=image, bboxes=bboxes, words=words)
