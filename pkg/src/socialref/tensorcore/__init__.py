from socialref.tensorcore import ops
from socialref.tensorcore.nn import EncoderShape, ParamStore
from socialref.tensorcore.optim import adam_step
from socialref.tensorcore.tensor import Tensor

__all__ = ["EncoderShape", "ParamStore", "Tensor", "adam_step", "ops"]
