"""From-scratch dense, attention and optimisation code."""
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (Dense, EncoderBlock, FeedForward, LayerNorm, Module, MultiHeadSelfAttention,
                     ReLU, dense_backward, dense_forward, positional_encoding, softmax)
from .models import Autoencoder, AutoencoderConfig, SpectrogramTransformer, TransformerConfig
from .rng import Xoshiro256pp, splitmix64
from .training import (Adam, TrainConfig, TrainResult, autoencoder_train, encode_latent,
                       kfold_split, mse, predict_sequence, transformer_forward, transformer_train)
