"""Exception types shared across the interrogator pipeline."""


class DataGapError(ValueError):
    """A monitored event is missing from at least one shot."""

    def __init__(self, shot_index: int, message: str | None = None):
        self.shot_index = int(shot_index)
        super().__init__(message or f"monitored event missing in shot {shot_index}")


class CalibrationUnavailable(RuntimeError):
    """No usable heating segment in the calibration data."""


class MultimodalityWarning(UserWarning):
    """Coarse SSE scan of the lag fit has more than one local minimum."""


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
