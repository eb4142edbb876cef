"""Completion of oscillatory matrices with tensorized butterfly networks."""
from __future__ import annotations

__version__ = "0.1.0"

from .adam import AdamConfig, AdamState, adam_butterfly, adam_update, butterfly_gradients, residual_on_omega
from .als import AlsConfig, als_butterfly, als_lowrank, als_qtt, normal_solve, solve_factor
from .container import load_network, save_network
from .data import (EvalSplit, ObservedEntries, load_triplets, make_split, observe, omega_size, relative_error,
                   sample_omega, save_triplets)
from .errors import ButterflyError, DataFormatError, DivergenceError, DuplicateEntryError, NonFiniteError
from .generators import (GeneratorSpec, green_helmholtz, green_operator, kd_reorder, radon_entries, radon_matrix,
                         synthetic_butterfly, synthetic_qtt)
from .indexing import block_key, index_to_tuple, psi, psi_inv, tuple_to_flat
from .lowrank_init import QrcpResult, generate_initial_guess, lr_to_butterfly, qrcp_truncate
from .network import (ButterflyNetwork, LowRankPair, QttNetwork, assemble_block_sparse_oracle, matvec,
                      random_network, random_qtt_network, reconstruct_dense, reconstruct_entry)
from .report import ConvergenceReport, IterationRecord
