"""Reference external scorer for the nirpatch wire protocol and a
landmark-driven face-mask extraction tool."""

from .embed import GalleryScorer, block_embed
from .landmarks import build_mask, extract_face_mask
from .server import ScorerServer, TcpServer

__all__ = [
    "GalleryScorer",
    "ScorerServer",
    "TcpServer",
    "block_embed",
    "build_mask",
    "extract_face_mask",
]
