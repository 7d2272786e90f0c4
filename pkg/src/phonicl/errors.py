"""Exception hierarchy for phonicl."""


class PhoniclError(Exception):
    """Base class for all phonicl errors."""


# corpus
class MalformedRecordError(PhoniclError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class DuplicateIdError(PhoniclError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"duplicate record id: {record_id!r}")


class InsufficientDataError(PhoniclError):
    pass


# g2p
class ProfileNotFoundError(PhoniclError):
    pass


class RuleParseError(PhoniclError):
    def __init__(self, file: str, line_no: int, message: str):
        self.file = file
        self.line_no = line_no
        super().__init__(f"{file}:{line_no}: {message}")


# tokenizers
class VocabParseError(PhoniclError):
    pass


# retrieve
class EmptyPoolError(PhoniclError):
    pass


class TokenizerMismatchError(PhoniclError):
    pass


class MissingChannelError(PhoniclError):
    pass


class OddKForSplitHalfError(PhoniclError):
    pass


class MissingVectorsError(PhoniclError):
    pass


class SnapshotVersionMismatchError(PhoniclError):
    pass


# promptkit
class MissingFieldError(PhoniclError):
    def __init__(self, channel: str, record_id: str):
        self.channel = channel
        self.record_id = record_id
        super().__init__(f"example {record_id!r} has no {channel} text")


class TemplateParseError(PhoniclError):
    pass


# metrics
class LengthMismatchError(PhoniclError):
    pass


# inference
class CacheMissError(PhoniclError):
    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(f"replay cache has no entry for fingerprint {fingerprint}")


class EndpointError(PhoniclError):
    def __init__(self, status: int | None, message: str):
        self.status = status
        super().__init__(message)


class RequestTimeoutError(PhoniclError):
    pass


# harness
class QueryMismatchError(PhoniclError):
    pass


class MissingGroupError(PhoniclError):
    pass


class StageError(PhoniclError):
    """Wraps a failure inside one pipeline stage with its stage label."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
