"""Exception taxonomy for the bridge. Protocol handling never lets these
escape to the transport; they become {"error": ...} replies instead."""


class BridgeError(Exception):
    """Base class for everything raised by this package."""


class ImageFormatError(BridgeError):
    """Byte stream is not a decodable 8-bit grayscale image."""


class GalleryError(BridgeError):
    """Gallery directory is missing, empty, or inconsistent."""


class DimensionMismatch(BridgeError):
    """Probe dimensions do not match the gallery."""


class LandmarkError(BridgeError):
    """Landmark input is present but unusable (wrong count, bad JSON)."""


class NoFaceDetected(BridgeError):
    """The landmark source reports no face in the image."""
