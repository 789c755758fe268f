"""Exception types shared across the package."""


class SemmapError(Exception):
    """Base class for all package-specific failures."""


class ContractError(SemmapError, ValueError):
    """An operation was called with inputs that violate its contract."""


class ProjectionDomainError(SemmapError, ValueError):
    """Geodetic input lies outside the projection's valid domain."""


class MeshParseError(SemmapError, ValueError):
    """A mesh or store file failed to parse; carries file/line context."""

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx = f"{path}"
            if line is not None:
                ctx += f":{line}"
            ctx += ": "
        super().__init__(ctx + message)
        self.path = path
        self.line = line


class StoreVersionError(SemmapError, ValueError):
    """Descriptor store file carries an incompatible version tag."""


class DescriptorNotFoundError(SemmapError, LookupError):
    """No descriptor of the requested class exists in the store."""


class InvalidCloudError(SemmapError, ValueError):
    """A required point-cloud pixel carries no valid 3D point."""


class PipelineStageError(SemmapError, RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
