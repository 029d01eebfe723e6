from enum import IntEnum


class FaultClass(IntEnum):
    NORMAL = 0
    HARDOVER = 1
    DRIFT = 2
    SPIKE = 3
    ERRATIC = 4
    STUCK_AT = 5

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, text: str) -> "FaultClass":
        try:
            return _BY_LABEL[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown fault class {text!r}") from None


_LABELS = {
    FaultClass.NORMAL: "Normal",
    FaultClass.HARDOVER: "Hardover",
    FaultClass.DRIFT: "Drift",
    FaultClass.SPIKE: "Spike",
    FaultClass.ERRATIC: "Erratic",
    FaultClass.STUCK_AT: "StuckAt",
}
_BY_LABEL = {v.lower(): k for k, v in _LABELS.items()}
_BY_LABEL.update({k.name.lower(): k for k in _LABELS})

N_CLASSES = len(FaultClass)
FAULT_TYPES = tuple(c for c in FaultClass if c is not FaultClass.NORMAL)
CLASS_NAMES = tuple(c.label for c in FaultClass)
