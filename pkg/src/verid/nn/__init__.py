from .checkpoint import ModelCheckpoint, checkpoint_bytes, load_checkpoint, save_checkpoint
from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    conv_backward,
    conv_forward,
    fc_backward,
    fc_forward,
    relu_backward,
    relu_forward,
)
from .losses import ContrastiveConfig, contrastive_loss, embedding_distance, l2_penalty, softmax_xent
from .model import ModelSpec, Network, init_params, sgd_step
