"""Exception types shared across the package."""


class MffnError(Exception):
    """Base class for all package-specific errors."""


class NonSquareInput(MffnError):
    """Diagonal flip requires equal height and width."""


class DegenerateSize(MffnError):
    """A resize would produce an output dimension below one pixel."""


class CollinearPoints(MffnError):
    """Affine view points do not span a triangle."""


class DuplicateView(MffnError):
    """A view kind appears more than once in a view configuration."""


class InvalidViewConfig(MffnError):
    """A view configuration violates a structural rule."""


class WeightFileUnreadable(MffnError):
    """A weights file is missing or cannot be parsed."""


class ArchMismatch(MffnError):
    """Stored tensor shapes disagree with the constructed architecture."""


class IndivisibleInput(MffnError):
    """Encoder input side length is not divisible by 32."""


class DimMismatch(MffnError):
    """Tensor dimensions disagree with an operation's contract."""


class IndivisibleChannels(MffnError):
    """Channel count is not divisible by the requested chunk count."""


class TooFewChunks(MffnError):
    """Chunk-chain interaction needs at least two chunks."""


class LevelShapeMismatch(MffnError):
    """Decoder inputs are not at the expected pyramid resolutions."""


class ShapeMismatch(MffnError):
    """Prediction and ground-truth maps have different shapes."""


class NonBinaryGT(MffnError):
    """Ground-truth map contains values other than 0 and 1."""


class EpochOutOfRange(MffnError):
    """Epoch index lies outside [0, total_epochs]."""


class MissingPair(MffnError):
    """Prediction/ground-truth filename sets do not match."""


class UnreadableImage(MffnError):
    """An image file cannot be read or decoded."""


class MissingMask(MffnError):
    """A dataset image has no matching mask."""


class EmptyDataset(MffnError):
    """A dataset directory yields no usable image/mask pairs."""


class InsufficientHistory(MffnError):
    """Early stopping needs at least two evaluations."""


class DivergedLoss(MffnError):
    """Training loss became non-finite."""


class CheckpointMismatch(MffnError):
    """A checkpoint does not match the model it is loaded into."""
