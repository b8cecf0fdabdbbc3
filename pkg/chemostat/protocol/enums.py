from enum import Enum


class Scheme(str, Enum):
    """Fixed-step stochastic integration schemes"""
    EULER_MARUYAMA = "euler-maruyama"
    MILSTEIN = "milstein"


class NoiseKind(str, Enum):
    GENERAL = "general"  # three independent Wiener processes
    DILUTION_RATE = "dilution_rate"  # one Wiener process shared by all equations
    NONE = "none"


class Population(str, Enum):
    X = "x"
    Y = "y"


class CaseLabel(str, Enum):
    """Geometry of the two crossings of the dimensional growth curves"""
    A = "a"  # both roots in the upper-right quadrant
    B = "b"  # lower-right then upper-right
    C = "c"  # lower-left then upper-right
    DEGENERATE = "degenerate"


class SurvivorLabel(str, Enum):
    X = "x"
    Y = "y"
    BOTH_WASHOUT = "both-washout"
    COEXIST = "coexist"
    UNDETERMINED = "undetermined"
    NUMERICAL_FAILURE = "numerical-failure"


class Verdict(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    NEUTRAL_ALONG_LINE = "neutrally stable along line"
    ABSENT = "absent"


class DensityScheme(str, Enum):
    IMPLICIT_EULER = "implicit-euler"
    CRANK_NICOLSON = "crank-nicolson"


class OuterBoundary(str, Enum):
    REFLECTING = "reflecting"  # zero flux through the outer box
    ABSORBING = "absorbing"  # ghost value 0, outward flux booked as leakage


class BoundaryTag(str, Enum):
    INTERIOR = "interior"
    OUTER_X = "outer-x"
    OUTER_Y = "outer-y"
    AXIS_X = "axis-x"  # the x-bar axis, y-bar = 0
    AXIS_Y = "axis-y"  # the y-bar axis, x-bar = 0
    CUT_LINE = "cut-line"
