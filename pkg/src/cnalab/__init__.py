"""cnalab: a desk-scale laboratory for activation-complexity metrics.

Core surface re-exported here; see the module docstrings for details.
"""

from .analysis import (binned_error_curves, cna_at_points, cna_landscape,
                       complexity_bins, gap_correlation_report, pca2, record_state)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (LabeledDataset, corrupt_labels, gaussian_noise_dataset, load_idx,
                   split, synthetic_digits, synthetic_shapes, write_idx)
from .metrics import (EntropyConfig, GapMetricSet, cna, cna_margin, entropy,
                      entropy_vector, gap_metric_set, norm_metrics, output_margin,
                      pearson, slope, slope_vector, spectral_norm)
from .nn import (ActivationTrace, LayerSpec, Network, backward, build_network, conv2d,
                 dense, flatten, forward, relu)
from .optim import OptConfig, evaluate, init_opt_state, train_epoch

__version__ = "0.1.0"
