class ScorerError(Exception):
    """Base class for everything this package raises on purpose."""


class FormatError(ScorerError):
    """A volume or record file does not match its documented layout."""


class TrainingError(ScorerError):
    """The dataset or configuration cannot be trained on."""
