"""Joint entity and relation extraction with a copy decoder and a CRF tagging head."""

from .data import Instance, SynthConfig, Triplet, parse_dataset, synth_generate, write_jsonl
from .extraction import EvalReport, ExtractedTriplet, assemble, complete_entity, strict_eval
from .model import CopyMTL, ModelConfig
from .training import (Extractor, TrainConfig, diagnose, evaluate, joint_loss, load_checkpoint,
                       save_checkpoint, train)

__version__ = "0.1.0"
