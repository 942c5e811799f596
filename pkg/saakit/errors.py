from typing import List, Optional


class SaaError(Exception):
    pass


class ConfigError(SaaError):
    pass


class ShapeError(ConfigError):
    pass


class DatasetError(SaaError):
    pass


class CheckpointError(SaaError):
    pass


class TrainingAbort(SaaError):
    """
    Raised when a loss turns non-finite. Carries the iteration and the unlabeled sample ids
    whose values were non-finite, so the run can be inspected afterwards.
    """

    def __init__(self, message: str, iteration: Optional[int] = None, sample_ids: Optional[List[int]] = None):
        self.iteration = iteration
        self.sample_ids = list(sample_ids or [])
        details = []
        if iteration is not None:
            details.append(f'iteration {iteration}')
        if self.sample_ids:
            details.append(f'sample ids {self.sample_ids[:20]}')
        super().__init__(message + (f' ({", ".join(details)})' if details else ''))
