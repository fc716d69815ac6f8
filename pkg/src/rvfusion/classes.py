"""Semantic classes."""
from enum import IntEnum


class SemanticClass(IntEnum):
    BACKGROUND = 0
    ROAD = 1
    VEHICLE = 2
    PEDESTRIAN = 3
    BICYCLE = 4
    MOTORCYCLE = 5


NUM_CLASSES = 6
# Label value for points excluded from evaluation (lost a range-image cell).
UNKNOWN = -1

BOX_CLASSES = (SemanticClass.VEHICLE, SemanticClass.PEDESTRIAN, SemanticClass.BICYCLE, SemanticClass.MOTORCYCLE)
CLASS_NAMES = tuple(c.name.lower() for c in SemanticClass)

DETECTION_CLASSES = ("vehicle", "pedestrian", "bike")


def detection_class(c: int, merge_bikes: bool = True) -> str | None:
    """Detection category for a semantic class, ``None`` for stuff classes."""
    c = SemanticClass(c)
    if c in (SemanticClass.BACKGROUND, SemanticClass.ROAD):
        return None
    if merge_bikes and c in (SemanticClass.BICYCLE, SemanticClass.MOTORCYCLE):
        return "bike"
    return c.name.lower()
