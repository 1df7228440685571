"""Contrastive-embedding novelty detection with calibrated two-sample
tests."""

from .datagen import (ClusterParams, LabeledDataset, SyntheticSpec,
                      calibrate_separation, generate_dataset,
                      min_pairwise_significance,
                      pairwise_injection_significance, random_rotation,
                      sample_cluster_params, split)
from .encoder import (ContrastiveConfig, MlpEncoder, embed_dataset, forward,
                      load_checkpoint, save_checkpoint, train)
from .losses import ce_loss, combined_loss, simclr_loss, supcon_loss
from .nplm import (KernelModel, NplmConfig, build_centers, fit,
                   kernel_matrix, nplm_objective, run_test,
                   select_kernel_widths, test_statistic)
from .calibration import (ToyEnsemble, asymptotic_pvalue, combine_pvalues,
                          empirical_pvalue, fit_chi2_dof, make_report,
                          run_null_toys, run_signal_toys, z_score)
from .baselines import (ClassMoments, ScoreTemplates, baseline_toy_scan,
                        binned_delta_chi2, build_templates,
                        frechet_distance, mahalanobis_statistic,
                        nystrom_mmd, train_score_classifier)
from .dataio import load_dataset, save_dataset

__version__ = "0.1.0"
