from .evaluate import evaluate, metric_row
from .loop import TrainResult, render_supervision, sweep_window_sizes, train
from .optim import TrainConfig, adamw_step, build_optimizer, cosine_warmup_lr
from .scenes import SceneConfig, SceneView, SyntheticScene, generate_scene, part_palette
