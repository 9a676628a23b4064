"""Exception hierarchy.

Every error carries an exit code used by the command-line front end:
2 for invalid input or configuration, 3 for numerical failures, 4 for I/O.
"""


class QCParamError(Exception):
    exit_code = 1
    code = "error"

    def __init__(self, message, *, stage=None, **details):
        super().__init__(message)
        self.stage = stage
        self.details = details

    def to_record(self):
        rec = {"error": self.code, "message": str(self), "exit_code": self.exit_code}
        if self.stage is not None:
            rec["stage"] = self.stage
        rec.update({k: _plain(v) for k, v in self.details.items()})
        return rec


def _plain(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


class ValidationError(QCParamError):
    exit_code = 2
    code = "validation"


class MeshError(ValidationError):
    code = "mesh"


class ParseError(MeshError):
    code = "parse"


class NonManifoldError(MeshError):
    code = "non_manifold"


class DegenerateFaceError(MeshError):
    code = "degenerate_face"


class DisconnectedMeshError(MeshError):
    code = "disconnected"


class TopologyError(MeshError):
    code = "topology"


class OutsideDomainError(ValidationError):
    code = "outside_domain"


class NumericalError(QCParamError):
    exit_code = 3
    code = "numerical"


class BeltramiRangeError(NumericalError):
    code = "beltrami_range"


class SingularSystemError(NumericalError):
    code = "singular_system"


class ConvergenceError(NumericalError):
    code = "no_convergence"


class FoldOverError(NumericalError):
    code = "fold_over"


class StabilityError(ValidationError):
    code = "unstable_step"


class MeshIOError(QCParamError):
    exit_code = 4
    code = "io"
