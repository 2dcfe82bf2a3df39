"""rtcaptcha: adversarially hardened text CAPTCHA generation and
solver-robustness evaluation."""

from .attacks import AttackConfig, clip_to_ball, fgsm, gaussian_kernel, ifgsm, mifgsm, sgtcs, sgtcs_gradient
from .data import Dataset, load_dataset, save_dataset
from .evaluate import EvalReport, extrapolate_string_rate, per_char_rate, transfer_matrix, write_report
from .filters import apply_filter, defended_predict, filter_names
from .generate import CaptchaSpec, ForegroundSpec, GenerationConfig, compose_captcha, generate_dataset, pseudo_foreground
from .glyphs import ALPHABET, CLASS_COUNT, GlyphAtlas, builtin_atlas, load_glyph_atlas
from .models import AdversarialSpec, TrainConfig, build_model, predict, train, train_adversarial
from .shallow import hog_descriptor, train_shallow
from .tensor import (
    Model,
    conv2d,
    finite_difference_gradient,
    forward,
    load_model,
    loss_and_input_gradient,
    save_model,
    softmax_cross_entropy,
)

__version__ = "0.1.0"
