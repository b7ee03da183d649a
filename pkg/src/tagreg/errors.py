"""Exception types shared across the package."""


class TagRegError(Exception):
    """Base class for all errors raised by this package."""


class AngleNearPi(TagRegError):
    """Rotation angle too close to pi for the principal-branch logarithm."""


class FormatError(TagRegError):
    """Malformed header or row in a cloud/pose/config file."""


class EmptyCloud(TagRegError):
    """A cloud file yielded zero valid points."""


class IoError(TagRegError):
    """Failed to write an output file."""


class OriginPoint(TagRegError):
    """Spherical coordinates are undefined at the sensor origin."""


class AllPointsOutOfFrame(TagRegError):
    """No point of the cloud landed inside the image bounds."""


class NoRangeSupport(TagRegError):
    """No valid range data near the requested pixel location."""


class CornerGeometryError(TagRegError):
    """Lifted corners are not close enough to a planar square of the marker size."""


class DegenerateCorners(TagRegError):
    """Observed corner set is rank-deficient (collinear or coincident)."""


class DictionaryError(TagRegError):
    """Tag dictionary violates its distance or uniqueness invariants."""


class NoObservations(TagRegError):
    """Graph construction requires at least one marker observation."""


class DisconnectedScan(TagRegError):
    """One or more scans are unreachable from the anchor scan."""

    def __init__(self, scan_ids):
        self.scan_ids = list(scan_ids)
        super().__init__(f"scans unreachable from anchor: {self.scan_ids}")


class MissingInitial(TagRegError):
    """A factor references a variable without an initial value."""


class SingularNormalEquations(TagRegError):
    """Damping exhausted without producing an acceptable step."""


class NonFiniteCost(TagRegError):
    """Objective evaluated to NaN or infinity."""


class ScanSetMismatch(TagRegError):
    """Estimated and ground-truth pose sets cover different scan ids."""


class EmptyScan(TagRegError):
    """A simulated sensor pose produced no returns."""


class SceneError(TagRegError):
    """Scene specification is inconsistent (marker off its plane, bad FOV, ...)."""
