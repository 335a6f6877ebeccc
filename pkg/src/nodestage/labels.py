"""Ordinal label sets for slides and patients."""

from enum import IntEnum


class SlideLabel(IntEnum):
    NEGATIVE = 0
    ITC = 1
    MICRO = 2
    MACRO = 3

    @property
    def text(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "SlideLabel":
        key = text.strip().lower()
        aliases = {"negative": 0, "neg": 0, "itc": 1, "micro": 2, "macro": 3}
        if key in aliases:
            return cls(aliases[key])
        if key.isdigit():
            return cls(int(key))
        raise ValueError(f"unknown slide label {text!r}")


class PNStage(IntEnum):
    PN0 = 0
    PN0_ITC = 1
    PN1MI = 2
    PN1 = 3
    PN2 = 4

    @property
    def text(self) -> str:
        return _STAGE_TEXT[self]

    @classmethod
    def parse(cls, text: str) -> "PNStage":
        key = text.strip()
        for stage, spelled in _STAGE_TEXT.items():
            if spelled.lower() == key.lower():
                return stage
        raise ValueError(f"unknown pN stage {text!r}")


_STAGE_TEXT = {
    PNStage.PN0: "pN0",
    PNStage.PN0_ITC: "pN0(i+)",
    PNStage.PN1MI: "pN1mi",
    PNStage.PN1: "pN1",
    PNStage.PN2: "pN2",
}
