"""Patient-level pN staging from per-node slide labels."""

from collections.abc import Iterable

from .errors import ParameterError
from .labels import PNStage, SlideLabel


def stage_patient(labels: Iterable[SlideLabel]) -> PNStage:
    """Map one patient's slide labels (one per lymph node) to a pN stage.

    ITC nodes never count as positive nodes; they only lift pN0 to pN0(i+).
    """
    labels = [SlideLabel(l) for l in labels]
    if not labels:
        raise ParameterError("stage_patient needs at least one slide label")
    if len(labels) > 5:
        raise ParameterError(f"at most 5 slides per patient, got {len(labels)}")
    macro = labels.count(SlideLabel.MACRO)
    micro = labels.count(SlideLabel.MICRO)
    itc = labels.count(SlideLabel.ITC)
    positive = macro + micro
    if macro >= 1:
        return PNStage.PN2 if positive >= 4 else PNStage.PN1
    if micro >= 1:
        return PNStage.PN1MI
    if itc >= 1:
        return PNStage.PN0_ITC
    return PNStage.PN0
