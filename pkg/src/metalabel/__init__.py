"""Latent global-label inference and embedding pre-training for episodic datasets."""

from .config import RunConfig, default_config, load_config
from .embedding import (ARCHITECTURES, EmbeddingModel, EpisodicRidgeEmbedder,
                        FlatDataset, FlatPretrainEmbedder, TrainConfig, embed_set,
                        episodic_grad, episodic_loss, flat_from_tasks, load_model,
                        new_model, pretrain_flat, save_model,
                        train_meta_representation)
from .errors import (MetaLabelError, NumericalError, PipelineContractError,
                     ValidationError)
from .evaluation import (EvalConfig, EpisodicResult, MetricsReport,
                         clustering_accuracy, episodic_accuracy, majority_mapping)
from .labeler import (ClusterState, ConstrainedTaskClusterer, LabeledTaskSet,
                      LabelerConfig, LabelerResult, LloydKMeans, PruneConfig,
                      assign_labels, init_clusters, kmeans_baseline, learn_labeler,
                      lloyd_kmeans, match_class_group, process_task, prune)
from .numeric import (GlobalClassifier, LinearClassifier, LogRegConfig, RidgeConfig,
                      grad_check, logreg_fit, mean_cross_entropy, one_hot, ridge_fit,
                      softmax_ce)
from .pipeline import compare_pipelines, prepare_shared, run_variant, sweep_parameter
from .tasks import (MetaTrainingSet, Sample, SyntheticWorldConfig, Task, TaskSpec,
                    generate_world, load_tasks, sample_tasks, save_tasks,
                    validate_meta_set, validate_task)
from .theory import (BoundCheck, LemmaCheck, TightnessReport, full_ce,
                     query_collection, random_bound_instance,
                     random_episodic_instance, restricted_task_ce, submatrix_for,
                     verify_lemma_equality, verify_tightness, verify_upper_bound,
                     w_global)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
