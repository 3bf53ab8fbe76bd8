"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class AnytimeError(Exception):
    exit_code = 1


class ConfigError(AnytimeError, ValueError):
    exit_code = 2


class DataError(AnytimeError):
    exit_code = 3


class LoadError(DataError):
    """The on-disk dataset layout is missing or unreadable."""


class IntegrityError(DataError):
    """Labels, images or shapes disagree with each other."""


class FormatError(DataError):
    """An image has an unsupported mode, channel count or zero size."""


class ScoringError(DataError):
    """A prediction set cannot be scored (malformed file, no defined class)."""


class UndefinedAUCError(ScoringError):
    """AUC needs at least one positive and one negative label."""


class OrderingError(AnytimeError, ValueError):
    exit_code = 2


class CheckpointError(DataError):
    pass


class DivergenceError(AnytimeError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, batch_index=None, checkpoint=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.checkpoint = checkpoint
