"""Reference embedding-provider service for the diverse-sound pipeline.

Serves the provider HTTP protocol (/v1/embed, /v1/health) over pluggable
encoder backends, handles media (seeded frame sampling, WAV decoding,
mean-over-time pooling), and writes the binary embedding container the
pipeline consumes.
"""

from .encoders import Encoder, EncoderError, StubEncoder, pool_mean_over_time
from .media import FrameExtraction, MediaError, decode_audio, extract_frames, sample_frame_indices
from .service import AdapterConfig, ProviderManifest, create_app, main
from .writer import write_embedding_file

__version__ = "0.1.0"
