"""Synthetic document corpora.

Two generators produce :class:`~docgraph.ingest.RawAnnotation` objects:

* :func:`form_corpus` -- form pages with a header, rows of question/answer
  pairs (question left, linked answer to its east) and two kinds of
  distractor: "other" entities sitting in an answer slot with non-answer
  text, and "other" entities in a footer band carrying answer-like text.
  Either feature family alone is systematically fooled by one distractor
  kind; geometry plus text resolves both.
* :func:`invoice_corpus` -- invoice pages with region blocks and one or
  more aligned cell grids annotated as "table" regions; all same-table
  cell pairs are linked, and each region box is exactly the union of its
  cells so detected regions can match ground truth perfectly.
"""

from __future__ import annotations

import random
from typing import Optional

from .doc_model import BoundingBox
from .ingest import RawAnnotation, RawEntity, RawLink, RawRegion

QUESTION_WORDS = [
    "name", "date", "address", "phone", "company", "status", "amount",
    "city", "country", "position", "department", "reference",
]
ANSWER_WORDS = [
    "john", "mary", "acme", "berlin", "london", "madrid", "june", "march",
    "2024", "2025", "42", "17", "monday", "open", "closed", "pending",
]
OTHER_WORDS = [
    "note", "draft", "internal", "copy", "void", "misc", "appendix", "stamp",
]
HEADER_WORDS = ["application", "registration", "request", "report", "claim"]
CELL_WORDS = ["12.50", "3.00", "7.25", "110.00", "9.99", "45.10", "2", "5", "8"]
REGION_WORDS = {
    "supplier": ["acme", "supplies", "ltd"],
    "invoice_info": ["invoice", "2024", "0017"],
    "receiver": ["bill", "to", "omega", "corp"],
    "total": ["total", "182.84"],
    "other": ["page", "1", "thank", "you"],
}


def _text_box(rng: random.Random, x0: float, y0: float, text: str,
              char_w: float, line_h: float) -> BoundingBox:
    # box width follows text length, mimicking variable font metrics
    width = len(text) * char_w + rng.uniform(8.0, 16.0)
    return BoundingBox(x0, y0, x0 + width, y0 + line_h)


def make_form(
    rng: random.Random,
    doc_id: str,
    n_rows: tuple[int, int] = (4, 7),
    pair_prob: float = 0.65,
    slot_trap_prob: float = 0.9,
    footer_traps: tuple[int, int] = (1, 2),
    width: float = 1000.0,
    height: float = 1000.0,
) -> RawAnnotation:
    """One synthetic form page.

    Each row holds a question on the left; with probability ``pair_prob``
    a linked answer sits far to its east, otherwise (with probability
    ``slot_trap_prob``) an "other" entity occupies the same slot.  Row
    spacing is small relative to the question-answer gap, so an answer and
    the next row's answer look nearly identical from a question in
    distance and direction.  Footer entities reuse answer vocabulary.
    """
    char_w = rng.uniform(7.0, 9.5)
    line_h = rng.uniform(26.0, 34.0)
    entities: list[RawEntity] = []
    links: list[RawLink] = []

    header = rng.choice(HEADER_WORDS) + " " + rng.choice(["form", "sheet"])
    entities.append(
        RawEntity(box=_text_box(rng, rng.uniform(280.0, 420.0), rng.uniform(28.0, 60.0),
                                header, char_w, line_h),
                  text=header, class_name="header")
    )

    rows = rng.randint(*n_rows)
    y = rng.uniform(140.0, 170.0)
    for _ in range(rows):
        q_text = rng.choice(QUESTION_WORDS)
        if rng.random() < 0.4:
            q_text = rng.choice(["full", "main", "second"]) + " " + q_text
        q_box = _text_box(rng, rng.uniform(50.0, 90.0), y + rng.uniform(-4.0, 4.0),
                          q_text, char_w, line_h)
        q_idx = len(entities)
        entities.append(RawEntity(box=q_box, text=q_text, class_name="question"))

        slot_x0 = q_box.x1 + rng.uniform(260.0, 340.0)
        slot_y0 = y + rng.uniform(-4.0, 4.0)
        if rng.random() < pair_prob:
            a_text = rng.choice(ANSWER_WORDS)
            if rng.random() < 0.3:
                a_text += " " + rng.choice(ANSWER_WORDS)
            a_box = _text_box(rng, slot_x0, slot_y0, a_text, char_w, line_h)
            links.append(RawLink(src=q_idx, dst=len(entities), class_name="key-value"))
            entities.append(RawEntity(box=a_box, text=a_text, class_name="answer"))
        elif rng.random() < slot_trap_prob:
            o_text = rng.choice(OTHER_WORDS)
            o_box = _text_box(rng, slot_x0, slot_y0, o_text, char_w, line_h)
            entities.append(RawEntity(box=o_box, text=o_text, class_name="other"))
        y += rng.uniform(52.0, 60.0)

    for _ in range(rng.randint(*footer_traps)):
        t_text = rng.choice(ANSWER_WORDS)
        t_box = _text_box(rng, rng.uniform(80.0, 700.0), rng.uniform(870.0, 940.0),
                          t_text, char_w, line_h)
        entities.append(RawEntity(box=t_box, text=t_text, class_name="other"))

    return RawAnnotation(doc_id=doc_id, width=width, height=height,
                         entities=tuple(entities), links=tuple(links))


def form_corpus(n_docs: int, seed: int = 0, **kwargs) -> list[RawAnnotation]:
    """Deterministic list of ``n_docs`` form pages for the given seed."""
    rng = random.Random(seed)
    pad = max(3, len(str(max(n_docs - 1, 0))))
    return [make_form(rng, f"form-{i:0{pad}d}", **kwargs) for i in range(n_docs)]


def _region_block(rng: random.Random, entities: list[RawEntity], class_name: str,
                  x0: float, y0: float, char_w: float, line_h: float) -> None:
    words = REGION_WORDS[class_name]
    for k in range(rng.randint(1, 2)):
        text = " ".join(rng.sample(words, min(2, len(words))))
        box = _text_box(rng, x0 + rng.uniform(0.0, 15.0), y0 + k * (line_h + 6.0),
                        text, char_w, line_h)
        entities.append(RawEntity(box=box, text=text, class_name=class_name))


def make_invoice(
    rng: random.Random,
    doc_id: str,
    n_tables: int = 1,
    table_shape: tuple[int, int] = (3, 4),
    width: float = 1000.0,
    height: float = 1400.0,
) -> RawAnnotation:
    """One synthetic invoice page with ``n_tables`` disjoint cell grids.

    Every pair of cells in the same grid is linked "table"; each grid's
    annotated region box equals the union of its cell boxes, so a detector
    recovering the component's enclosing rectangle scores IoU 1.
    """
    if not 1 <= n_tables <= 2:
        raise ValueError(f"n_tables must be 1 or 2, got {n_tables}")
    char_w = rng.uniform(7.0, 9.5)
    line_h = rng.uniform(24.0, 30.0)
    entities: list[RawEntity] = []
    links: list[RawLink] = []
    regions: list[RawRegion] = []

    _region_block(rng, entities, "supplier", rng.uniform(60.0, 120.0),
                  rng.uniform(40.0, 70.0), char_w, line_h)
    _region_block(rng, entities, "invoice_info", rng.uniform(620.0, 700.0),
                  rng.uniform(40.0, 70.0), char_w, line_h)
    _region_block(rng, entities, "receiver", rng.uniform(60.0, 120.0),
                  rng.uniform(210.0, 250.0), char_w, line_h)

    bands = [(420.0, 700.0), (820.0, 1100.0)][:n_tables]
    for band_lo, band_hi in bands:
        n_cols = rng.randint(3, table_shape[1])
        n_rows = rng.randint(2, table_shape[0])
        cell_w = rng.uniform(120.0, 150.0)
        row_h = line_h + rng.uniform(10.0, 16.0)
        x_start = rng.uniform(70.0, 140.0)
        y_start = rng.uniform(band_lo, band_hi - n_rows * row_h)
        members: list[int] = []
        for r in range(n_rows):
            for c in range(n_cols):
                text = rng.choice(CELL_WORDS)
                x0 = x_start + c * cell_w
                y0 = y_start + r * row_h
                box = _text_box(rng, x0, y0, text, char_w, line_h)
                members.append(len(entities))
                entities.append(RawEntity(box=box, text=text, class_name="table"))
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                links.append(RawLink(src=members[a], dst=members[b], class_name="table"))
        region_box = entities[members[0]].box
        for idx in members[1:]:
            region_box = region_box.union(entities[idx].box)
        regions.append(RawRegion(box=region_box, class_name="table"))

    _region_block(rng, entities, "total", rng.uniform(600.0, 680.0),
                  rng.uniform(1180.0, 1220.0), char_w, line_h)
    _region_block(rng, entities, "other", rng.uniform(350.0, 450.0),
                  rng.uniform(1300.0, 1330.0), char_w, line_h)

    return RawAnnotation(doc_id=doc_id, width=width, height=height,
                         entities=tuple(entities), links=tuple(links),
                         regions=tuple(regions))


def invoice_corpus(n_docs: int, seed: int = 0, **kwargs) -> list[RawAnnotation]:
    """Deterministic list of ``n_docs`` invoice pages for the given seed."""
    rng = random.Random(seed)
    pad = max(3, len(str(max(n_docs - 1, 0))))
    return [make_invoice(rng, f"invoice-{i:0{pad}d}", **kwargs) for i in range(n_docs)]


def table_ground_truth(annotations) -> dict[str, list[BoundingBox]]:
    """Doc-id keyed table region boxes, as the evaluator expects."""
    out: dict[str, list[BoundingBox]] = {}
    for ann in annotations:
        out[ann.doc_id] = [r.box for r in ann.regions if r.class_name == "table"]
    return out
