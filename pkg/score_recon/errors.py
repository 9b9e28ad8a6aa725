"""
Domain errors for score-recon.

Every error subclasses a built-in exception so callers can keep catching
ValueError / RuntimeError where they do not care about the finer type.
"""


class DimensionError(ValueError):
    """Array shapes do not fit the operation (mismatch, non-square, too small)."""


class ParameterError(ValueError):
    """A numeric parameter violates its documented range."""


class DegenerateInputError(ValueError):
    """Input is well-formed but carries too little information to proceed."""


class FormatError(ValueError):
    """A raw image, mask or checkpoint file is malformed."""


class TrainingDivergenceError(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"Training diverged at iteration {iteration} (loss={loss})")


class SamplerDivergenceError(RuntimeError):
    """A sampler iterate became non-finite."""

    def __init__(self, level: int, step: int):
        self.level = level
        self.step = step
        super().__init__(f"Sampler diverged at noise level {level}, step {step}")
