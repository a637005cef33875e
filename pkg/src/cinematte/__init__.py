"""Background matting with a frozen shared ViT, cross-attention alignment and an attention upsampler."""
from .backbone import TokenGrid, ViTBackbone, ViTConfig, gram_loss
from .datagen import AugmentSpec, ImageSample, ShiftSpec, SHIFT_LEVELS, composite, synth_sample
from .decoder import Decoder, DecoderConfig, ResidualUnit
from .errors import NumericError, ShapeError
from .evaluation import evaluate, infer, stress_shift
from .fbam import FBAM, FbamConfig, FbamLayer
from .losses import derive_trimap, total_loss
from .metrics import MetricsReport, conn_metric, dtssd, grad_metric, mad, mse
from .model import Checkpoint, CineMatte, TrainConfig, build_model
from .training import train
from .upsampler import FeatureUpsampler, UpsamplerConfig

__version__ = "0.1.0"
