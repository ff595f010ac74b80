"""Exception hierarchy shared by every btcnn module."""


class BtcnnError(Exception):
    """Base class for all package errors."""


# tensor-core / model
class ShapeMismatch(BtcnnError, ValueError):
    pass


class OddDimension(BtcnnError, ValueError):
    pass


class TargetOutOfRange(BtcnnError, IndexError):
    pass


class NotDivisibleBy16(BtcnnError, ValueError):
    pass


class StaleCache(BtcnnError, ValueError):
    pass


# dataset
class MissingIndex(BtcnnError, FileNotFoundError):
    pass


class MalformedIndex(BtcnnError, ValueError):
    pass


class EmptyManifest(BtcnnError, ValueError):
    pass


class DuplicateRecordId(BtcnnError, ValueError):
    def __init__(self, row: int, record_id: str):
        super().__init__(f"duplicate record_id {record_id!r} at row {row}")
        self.row = row
        self.record_id = record_id


class UnknownLabel(BtcnnError, ValueError):
    def __init__(self, row: int, label: str):
        super().__init__(
            f"unknown label {label!r} at row {row} "
            "(expected glioma, meningioma or pituitary)"
        )
        self.row = row
        self.label = label


class MissingFile(BtcnnError, FileNotFoundError):
    pass


class MalformedPgm(BtcnnError, ValueError):
    pass


class DimensionMismatch(BtcnnError, ValueError):
    pass


class InvalidMask(BtcnnError, ValueError):
    pass


class BadRatios(BtcnnError, ValueError):
    pass


# preprocess
class EmptyMask(BtcnnError, ValueError):
    pass


class OutOfBounds(BtcnnError, IndexError):
    pass


# training
class InvalidConfig(BtcnnError, ValueError):
    pass


class EmptyPartition(BtcnnError, ValueError):
    pass


class EmptyTrainSet(EmptyPartition):
    pass


class CheckpointError(BtcnnError, ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class TruncatedPayload(CheckpointError):
    pass


class VersionUnsupported(CheckpointError):
    pass


class MetadataMismatch(CheckpointError):
    pass


# evaluation
class LengthMismatch(BtcnnError, ValueError):
    pass


class EmptyMatrix(BtcnnError, ValueError):
    pass


class UndefinedRate(BtcnnError, ZeroDivisionError):
    def __init__(self, metric: str, label: str):
        super().__init__(f"{metric} undefined for class {label!r} (zero denominator)")
        self.metric = metric
        self.label = label


class DuplicateCell(BtcnnError, ValueError):
    pass
