"""Exception hierarchy shared by the file formats and numeric core."""


class AvgraphError(Exception):
    """Base class for every error raised by this package."""


class ContainerError(AvgraphError, ValueError):
    """A binary container (dataset or checkpoint) could not be decoded."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class LabelOutOfRangeError(ContainerError):
    pass


class ShapeError(AvgraphError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        shown = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
