"""Exception and warning types shared across the package."""


class PPTrialError(Exception):
    """Base class for all package errors."""


class DataError(PPTrialError):
    """Input data violates the dataset contract."""


class ProtocolError(PPTrialError):
    """A strategy protocol cannot be resolved against the dataset."""


class EstimationError(PPTrialError):
    """An estimator could not produce a result."""


class RankDeficientError(EstimationError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"rank-deficient design; dependent columns: {', '.join(self.columns)}")


class SeparationError(EstimationError):
    """Logistic fit diverges (complete or quasi-complete separation)."""


class PositivityError(EstimationError):
    pass


class WeakInstrumentError(EstimationError):
    pass


class BootstrapError(EstimationError):
    def __init__(self, message, taxonomy=None):
        self.taxonomy = dict(taxonomy or {})
        super().__init__(message)


class PlanError(PPTrialError):
    """Analysis plan fails schema or guideline checks."""


class PositivityWarning(UserWarning):
    pass


class WeightWarning(UserWarning):
    pass


class InstrumentViolationError(EstimationError):
    """Observed distribution contradicts the instrumental conditions."""
