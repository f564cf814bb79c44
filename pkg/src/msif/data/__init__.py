"""Synthetic scenes, windowing and the on-disk dataset format."""
from msif.data.io import (
    CorruptDatasetError,
    DatasetError,
    DatasetVersionError,
    MissingDatasetError,
    load_dataset,
    load_scene,
    read_flo,
    save_dataset,
    save_scene,
    write_flo,
)
from msif.data.synth import (
    AgentSpec,
    GenerationError,
    GeneratorConfig,
    ObjectTrack,
    SampleWindow,
    SceneSequence,
    apply_gamma,
    bbox_center,
    generate_scene,
    window_samples,
)
