"""Exception types shared across the package."""


class LayoutForgeError(Exception):
    """Base class for all errors raised by this package."""


class BundleError(LayoutForgeError):
    """A scene bundle is missing a file or contains a malformed field."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{message} ({path})" if path else message)


class DanglingIdError(BundleError):
    """A record references a mask or asset id that does not exist."""


class MissingFeatureError(BundleError):
    """A required feature file is absent from the bundle."""


class DegenerateCloudError(LayoutForgeError):
    """A point cloud has too few points or too little rank to fit."""


class NoFloorError(LayoutForgeError):
    """Plane extraction could not find a floor plane."""


class NotUprightError(LayoutForgeError):
    """An oriented box has no axis aligned with the up direction."""


class MissingOracleError(LayoutForgeError):
    """A support query needs an oracle entry that was not provided."""


class EmptyCategoryError(LayoutForgeError):
    """No asset in the library maps to the queried mask category."""


class FineSelectionError(LayoutForgeError):
    """Every rotation candidate was dropped during fine selection."""


class NoSubspaceError(LayoutForgeError):
    """An asset has no interior subspace to place a contained object in."""


class EmptyInputError(LayoutForgeError):
    """An operation received an empty collection where data is required."""
