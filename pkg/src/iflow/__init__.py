"""Invertible residual flows for conditional generation on graphs."""

from . import condgen, datasets, errors, graphs, layers, linalg, metrics, ou, tape, training
from .condgen import classifier_loss, generate, generative_loss, predict, total_objective
from .datasets import LabeledDataset, load_bundle, load_csv, save_bundle, synthesize
from .flownet import FlowModel, build_flow_model, load_model, save_model
from .graphs import GraphSpec, build_graph, cheb_basis, chordal_cycle, graph_average, hop_masks, path_graph, single_node
from .linalg import eig_sym, logabsdet, lu_factor, solve, spectral_norm
from .metrics import energy_distance, invertibility_audit, mmd, sample_correlation, weighted_report
from .ou import OUSpec, corollary_gap, force, local_series_inverse, ode_transport, permutation_gap, sde_simulate, sigma_t, spectral_sigma_t_inv
from .tape import NumpyEngine, Tape
from .training import Adam, TrainConfig, train

__version__ = "0.1.0"
