"""Heart murmur classification from phonocardiograms.

Pipeline: metadata/audio ingestion -> overlapping log-mel spectrogram
segments -> two binary MC-dropout ResNet50 classifiers -> priority cascade
into a ternary patient label, optionally fused with demographics and signal
features by a gradient-boosted tree ensemble, scored with the class-weighted
accuracy (Present x5, Unknown x3, Absent x1).

Heavy submodules (torch-backed models) import lazily; `murmur.scoring`,
`murmur.dsp`, and `murmur.ingestion` stay cheap to import.
"""

__version__ = "0.1.0"
