"""Few-shot text style transfer by meta-learning over style pairs.

Two base models (a cross-aligned autoencoder and a disentangled VAE) are
trained with a first- or second-order MAML loop over many small style-pair
tasks, then fine-tuned on one task. See the README for the command line.
"""
from .checkpoint import Checkpoint, build_model, load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import Batch, StyleTask, Vocabulary, build_vocab, load_dataset, make_task
from .crossalign import CrossAlign, CrossAlignConfig
from .errors import ConfigError, DataError, DivergedAdaptation, InvalidArgument, ST2Error
from .meta import MetaConfig, finetune, inner_adapt, meta_step, pretrain_base, train_meta
from .vae import DisentangledVAE, LossWeights, VaeConfig

__version__ = "0.1.0"
