"""In-memory expert reference store with per-environment cursors."""

from humimic.refbuffer.buffer import (
    Assignment,
    CommandRanges,
    RefBufferConfig,
    RefDataBuffer,
    ReferenceState,
)

__all__ = ["Assignment", "CommandRanges", "RefBufferConfig", "RefDataBuffer", "ReferenceState"]
