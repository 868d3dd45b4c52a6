from enum import Enum
from enum import EnumMeta


class StrContainerEnumMeta(EnumMeta):
    def __contains__(cls, item):
        for name, member in cls.__members__.items():
            if item == name or item == member.value:
                return True
        return False


class StrContainerEnum(str, Enum, metaclass=StrContainerEnumMeta):
    """A Enum object that enables search for items
    in a normal Enum object based on key and value.
    """


class Split(StrContainerEnum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class DataFormat(StrContainerEnum):
    CSV = "csv"
    UCR = "ucr"


class SeparationGradient(StrContainerEnum):
    """How the class-separation term of the alignment loss is differentiated."""
    DIFFERENTIATE = "differentiate"
    DETACH = "detach"


class WarpComposition(StrContainerEnum):
    """How aligned curves are produced from a warp."""
    INTERPOLATE = "interpolate"
    COMPOSE = "compose"


class BatchNormMode(StrContainerEnum):
    TRAIN = "train"
    EVAL = "eval"
