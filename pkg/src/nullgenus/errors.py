"""Exception hierarchy.

Every failure carries a short kebab-case ``code`` and an ``exit_code`` used by
the command line front end (2 validation, 3 numerical failure, 4 io).
"""


class NullGenusError(Exception):
    code = "error"
    exit_code = 3

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details


class ValidationError(NullGenusError):
    code = "validation"
    exit_code = 2


class NumericalError(NullGenusError):
    code = "numerical"
    exit_code = 3


class OutputError(NullGenusError):
    code = "io-error"
    exit_code = 4


def _make(name, base, code):
    return type(name, (base,), {"code": code, "__doc__": code})


# surface
InvalidModulus = _make("InvalidModulus", ValidationError, "invalid-modulus")
PrecisionUnachievable = _make("PrecisionUnachievable", NumericalError, "precision-unachievable")
NearPole = _make("NearPole", NumericalError, "near-pole")
LoopConstructionFailed = _make("LoopConstructionFailed", NumericalError, "loop-construction-failed")

# forms
GapViolation = _make("GapViolation", ValidationError, "gap-violation")
RootFindingFailure = _make("RootFindingFailure", NumericalError, "root-finding-failure")
DegenerateShift = _make("DegenerateShift", ValidationError, "degenerate-shift")

# nulldisk
InconsistentData = _make("InconsistentData", ValidationError, "inconsistent-data")
PlanarData = _make("PlanarData", ValidationError, "planar-data")
NormalizationFailed = _make("NormalizationFailed", NumericalError, "normalization-failed")

# deform
DomainViolation = _make("DomainViolation", NumericalError, "domain-violation")
CertificateFailed = _make("CertificateFailed", NumericalError, "certificate-failed")
MultivaluedRealization = _make("MultivaluedRealization", NumericalError, "multivalued-realization")

# periods
ContourTooClose = _make("ContourTooClose", NumericalError, "contour-too-close")
QuadratureFailure = _make("QuadratureFailure", NumericalError, "quadrature-failure")
DegeneratePeriodMatrix = _make("DegeneratePeriodMatrix", NumericalError, "degenerate-period-matrix")
DomainShrunk = _make("DomainShrunk", NumericalError, "domain-shrunk")
ModelMismatch = _make("ModelMismatch", NumericalError, "model-mismatch")
NondegeneracyFailed = _make("NondegeneracyFailed", NumericalError, "nondegeneracy-failed")
NoConvergence = _make("NoConvergence", NumericalError, "no-convergence-at-c")
SingularIterate = _make("SingularIterate", NumericalError, "singular-iterate")

# domain
WrongTopology = _make("WrongTopology", NumericalError, "wrong-topology")
BoundaryBranchPoint = _make("BoundaryBranchPoint", NumericalError, "boundary-branch-point")
MeshFailure = _make("MeshFailure", NumericalError, "mesh-failure")
NoValidAnnulus = _make("NoValidAnnulus", NumericalError, "no-valid-annulus")
NumericalInconsistency = _make("NumericalInconsistency", NumericalError, "numerical-inconsistency")
LiftFailure = _make("LiftFailure", NumericalError, "lift-failure")
CertificateInconsistent = _make("CertificateInconsistent", NumericalError, "certificate-inconsistent")

# cli
ConfigError = _make("ConfigError", ValidationError, "config-invalid")
