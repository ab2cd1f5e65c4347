"""Exception hierarchy shared across the package."""


class CABKGCError(Exception):
    """Base class for all package errors."""


class DataError(CABKGCError):
    """Raised for problems with input data (files, triples, vocabularies)."""


class MalformedLine(DataError, ValueError):
    def __init__(self, message, line_number=None, path=None):
        self.line_number = line_number
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line_number is not None:
            where.append(f"line {line_number}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class EmptySplit(DataError, ValueError):
    pass


class SequenceTooShort(CABKGCError, ValueError):
    pass


class InvalidConfig(CABKGCError, ValueError):
    pass


class ShapeMismatch(CABKGCError, ValueError):
    pass


class IndexOutOfRange(CABKGCError, IndexError):
    pass


class FilteredTrueTail(CABKGCError, ValueError):
    pass


class EmptyInput(CABKGCError, ValueError):
    pass


class CheckpointError(CABKGCError):
    """Base class for checkpoint loading failures."""


class FormatVersionMismatch(CheckpointError):
    pass


class VocabularyMismatch(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass
