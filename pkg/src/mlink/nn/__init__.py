from .layers import BOS, EOS, N_RESERVED, PAD, UNK, ShapeError, sigmoid, softmax
from .losses import LossKind
from .nets import (
    MLP,
    NonFiniteLossError,
    SeqToSeq,
    SeqToVec,
    VecToSeq,
    grad_check,
    train_step,
)
from .optim import RMSprop
from .params import ParamSet, StreamError, load_params, save_params, stream_size
