"""Multi-view sparse Laplacian eigenmaps for unsupervised feature selection."""

__version__ = "0.1.0"

from .data import Dataset, load_delimited, load_ucihar, standardize, train_test_split
from .embedding import Embedding, embed_out_of_sample, laplacian_eigenmaps
from .errors import ConfigInvalid, DataError, MSLEError, NumericalError
from .evaluation import (ClassifierParams, MetricsReport, classify_gnb, classify_knn, classify_linear_svm,
                         sweep_reduction)
from .graph import auto_bandwidth, gaussian_similarity, knn_similarity, laplacian, similarity_graph
from .optim import apg_solve, sparse_codes, sparse_embedding, sparse_weight_matrix
from .selector import MSLEConfig, SelectionResult, ViewSet, contiguous_views, run_msle, ucihar_views
from .spectral import eig_generalized, eig_sym, soft_threshold
from .store import load_embedding, load_selection, save_embedding, save_selection
