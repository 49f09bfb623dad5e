from .loop import EarlyStopper, TrainingDiverged, TrainResult, train, write_gate_trace, write_metrics
from .optim import AdamW, clip_grad_norm
from .schedules import TrainConfig, curriculum_S, dropout_warmin, eos_weight, lr_at
