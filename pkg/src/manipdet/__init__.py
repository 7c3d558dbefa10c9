"""Image manipulation detection with a 1.5-class SVM detector.

Building blocks: manipulation operators (`imgops`), SPAM features
(`spam`), an SMO-based SVM engine (`svm`), split/grid-search/detector
composition (`pipeline`), a perfect-knowledge pixel-domain evasion attack
(`attack`), evaluation metrics (`metrics`), a synthetic corpus generator
(`synthetic`), and the experiment harness (`experiment`, `cli`).
"""

from .attack import AttackConfig, AttackResult, AttackTarget, pixel_gradient, run_attack
from .imgops import (ManipulationSpec, add_gaussian_noise, apply_manipulation,
                     cl_ahe_v, jpeg_cycle, median_filter_v, resize_bicubic,
                     rgb_to_v, subsample_no_interp, v_to_rgb)
from .metrics import RocCurve, accuracy, mse, pixel_change_fraction, roc_auc
from .pipeline import (DatasetSplits, ErrorRates, ErrorWeights, GridConfig,
                       OneHalfClassModel, Prediction, SplitSizes, TrainResult,
                       grid_search_1c, grid_search_2c, load_15c, make_splits,
                       predict_15c, save_15c, train_15c, weighted_error)
from .raster import load_image, save_image
from .spam import SpamConfig, SpamCounts, residuals, spam_features, transition_tensor, truncate
from .svm import (HyperParams, SvmModel, decision_value, decision_values,
                  deserialize, rbf_kernel, serialize, train_one_class, train_two_class)

__version__ = "0.1.0"
