"""Exception hierarchy shared by every module.

CLI exit codes are attached to the base classes so ``bpc`` can map any
failure to a process status without a lookup table.
"""


class BPCError(Exception):
    exit_code = 1


class ConfigError(BPCError, ValueError):
    """Invalid configuration value or violated precondition on user input."""

    exit_code = 2


class ContractError(BPCError, ValueError):
    """A caller broke an operation's precondition."""

    exit_code = 2


class ShapeError(ContractError):
    pass


class FormatError(BPCError):
    """On-disk file does not follow its binary format."""

    exit_code = 3


class CorruptionError(FormatError):
    pass


class NumericError(BPCError, ArithmeticError):
    """A NaN or Inf appeared in a forward or backward pass."""

    exit_code = 4


class TrainingError(NumericError):
    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class SamplerError(NumericError):
    def __init__(self, message, step, last_theta):
        super().__init__(f"{message} (langevin step {step})")
        self.step = step
        self.last_theta = last_theta


class StepError(NumericError):
    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
