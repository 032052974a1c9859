from .dataset import LabeledDataset, read_dataset, write_dataset
from .chopsticks import ChopsticksConfig, generate_chopsticks
from .spaceshapes import (
    SpaceshapesConfig, alternative_hierarchies, generate_spaceshapes, render_spaceshape,
)
