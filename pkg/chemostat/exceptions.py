from enum import IntEnum
from typing import Optional


class ErrorCode(IntEnum):
    # Configuration errors (10000-10099)
    CONFIG_ERROR = 10000
    INVALID_PARAMETERS = 10001
    UNKNOWN_RECIPE = 10002
    MISMATCHED_CONFIG = 10003

    # Model domain errors (10100-10199)
    DOMAIN_ERROR = 10100
    NOT_A_CROSSING = 10101
    STEADY_STATE_ABSENT = 10102
    LINE_REQUIRES_UNIT_THETA = 10103

    # Numerical errors (10200-10299)
    NUMERICAL_FAILURE = 10200
    STEP_SIZE_UNDERFLOW = 10201
    NON_FINITE_STATE = 10202
    NO_ROOT_FOUND = 10203
    ILL_CONDITIONED_FIT = 10204
    UNSUPPORTED_NOISE = 10205

    # Asymptotic structure errors (10300-10399)
    STAGE_STRUCTURE = 10300
    SINGULARITY = 10301
    NO_PHYSICAL_SUBSTRATE = 10302

    # Fokker-Planck errors (10400-10499)
    EMPTY_DOMAIN = 10400
    DISCONNECTED_DOMAIN = 10401
    MASS_OUTSIDE_DOMAIN = 10402
    ASSEMBLY_ERROR = 10403
    SOLVER_NON_CONVERGENCE = 10404

    # I/O errors (10500-10599)
    OUTPUT_ERROR = 10500


class ChemostatException(Exception):
    """Exception raised for every domain, numerical and configuration failure."""

    def __init__(self, error_code: ErrorCode = ErrorCode.NUMERICAL_FAILURE, message: Optional[str] = None):
        """
        Initialize the exception

        Args:
            error_code: Error code
            message: Custom error message. If not provided, will use default message for the error code
        """
        from chemostat.common.error_messages import get_error_message
        self.error_code = error_code
        self.message = message or get_error_message(error_code)
        super().__init__(self.message)

    @property
    def exit_code(self) -> int:
        """Process exit status for the CLI: 2 for configuration errors, 3 otherwise."""
        return 2 if self.error_code < ErrorCode.DOMAIN_ERROR else 3

    def __str__(self):
        return f'{self.error_code.name}({self.error_code}): {self.message}'
