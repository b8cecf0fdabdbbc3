from chemostat.exceptions import ErrorCode

# Error message mapping
ERROR_MESSAGES = {
    # Configuration errors (10000-10099)
    ErrorCode.CONFIG_ERROR: "Invalid experiment configuration",
    ErrorCode.INVALID_PARAMETERS: "Invalid parameters",
    ErrorCode.UNKNOWN_RECIPE: "Unknown recipe",
    ErrorCode.MISMATCHED_CONFIG: "Configurations to be compared do not match",

    # Model domain errors (10100-10199)
    ErrorCode.DOMAIN_ERROR: "Argument outside the model domain",
    ErrorCode.NOT_A_CROSSING: "Substrate value is not a crossing point of the growth curves",
    ErrorCode.STEADY_STATE_ABSENT: "Steady state absent",
    ErrorCode.LINE_REQUIRES_UNIT_THETA: "Line of steady states exists only at theta=1",

    # Numerical errors (10200-10299)
    ErrorCode.NUMERICAL_FAILURE: "Numerical failure",
    ErrorCode.STEP_SIZE_UNDERFLOW: "Integrator step size underflow",
    ErrorCode.NON_FINITE_STATE: "Non-finite state encountered",
    ErrorCode.NO_ROOT_FOUND: "No sign change found for root bracketing",
    ErrorCode.ILL_CONDITIONED_FIT: "Too few levels for a convergence fit",
    ErrorCode.UNSUPPORTED_NOISE: "Operation not defined for this noise structure",

    # Asymptotic structure errors (10300-10399)
    ErrorCode.STAGE_STRUCTURE: "Growth regime required: a_i > theta",
    ErrorCode.SINGULARITY: "Point at or below the line of singularities",
    ErrorCode.NO_PHYSICAL_SUBSTRATE: "No physical substrate value solves the algebraic constraint",

    # Fokker-Planck errors (10400-10499)
    ErrorCode.EMPTY_DOMAIN: "Computational domain has no active cells",
    ErrorCode.DISCONNECTED_DOMAIN: "Computational domain is disconnected",
    ErrorCode.MASS_OUTSIDE_DOMAIN: "Initial density has too much mass outside the domain",
    ErrorCode.ASSEMBLY_ERROR: "Operator stencil reaches outside the active set",
    ErrorCode.SOLVER_NON_CONVERGENCE: "Linear solver did not converge",

    # I/O errors (10500-10599)
    ErrorCode.OUTPUT_ERROR: "Failed to write outputs",
}


def get_error_message(error_code: ErrorCode, default_message: str = None) -> str:
    """
    Get error message for error code

    Args:
        error_code: Error code
        default_message: Default message to use if error code is not defined

    Returns:
        str: Error message
    """
    return ERROR_MESSAGES.get(error_code, default_message or f"Unknown error: {error_code}")
