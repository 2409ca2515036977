"""Question/answer templates for document parsing tasks.

Box coordinates are rendered as `<bbox>x1, y1, x2, y2</bbox>` and quoted
text as `<ocr>text</ocr>`; both tag forms round-trip through the parser
helpers below.
"""

from __future__ import annotations

import re
from enum import Enum

from tokenforge.corpus.records import TokenRecord
from tokenforge.errors import MissingField


class ParsingTask(Enum):
    FullText = "full_text"
    TextInBox = "text_in_box"
    GroundText = "ground_text"
    Formula2Latex = "formula2latex"
    Table2Markdown = "table2markdown"
    Chart2Csv = "chart2csv"


def format_bbox(box) -> str:
    x1, y1, x2, y2 = (int(v) for v in box)
    return f"<bbox>{x1}, {y1}, {x2}, {y2}</bbox>"


def parse_bbox(text: str) -> tuple[int, int, int, int]:
    m = re.fullmatch(r"<bbox>(-?\d+), (-?\d+), (-?\d+), (-?\d+)</bbox>", text)
    if not m:
        raise MissingField(f"not a bbox tag: {text!r}")
    return tuple(int(g) for g in m.groups())


def format_ocr(text: str) -> str:
    return f"<ocr>{text}</ocr>"


def parse_ocr(text: str) -> str:
    m = re.fullmatch(r"<ocr>(.*)</ocr>", text, flags=re.DOTALL)
    if not m:
        raise MissingField(f"not an ocr tag: {text!r}")
    return m.group(1)


def _require(record: TokenRecord, key: str):
    if key not in record.extras:
        raise MissingField(f"record lacks extras[{key!r}] required by this task")
    return record.extras[key]


def make_parsing_prompt(record: TokenRecord, task: ParsingTask) -> tuple[str, str]:
    """Build the (question, answer) pair for one parsing task.

    Box-oriented tasks read `extras["bbox"]` (four ints) and
    `extras["box_text"]`; conversion tasks treat the record answer as the
    already-converted target text.
    """
    if task is ParsingTask.FullText:
        return "Recognizing full text.", record.answer
    if task is ParsingTask.TextInBox:
        box = _require(record, "bbox")
        text = _require(record, "box_text")
        return (
            f"Recognizing the text within the bounding box {format_bbox(box)}.",
            text,
        )
    if task is ParsingTask.GroundText:
        box = _require(record, "bbox")
        text = _require(record, "box_text")
        return (
            f"Predict the bounding box of the text {format_ocr(text)}",
            format_bbox(box),
        )
    if task is ParsingTask.Formula2Latex:
        return "Converting the formula into LaTeX format.", record.answer
    if task is ParsingTask.Table2Markdown:
        return "Converting the table into Markdown format.", record.answer
    if task is ParsingTask.Chart2Csv:
        return "Converting the chart into CSV format.", record.answer
    raise MissingField(f"unhandled task {task}")
