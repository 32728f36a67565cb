"""Pick causal features for every label of a multi-label dataset split across clients."""

from .citest import CiCache, CiQuery, CiResult, ShardView, fishers_z_test, g2_test, \
    partial_correlation, run_batch
from .dataset import ClientShard, DataKind, DatasetError, MultiLabelDataset, PartitionPlan, \
    load_dataset, partition_clients, save_csv, train_test_split
from .evaluation import MetricReport, evaluate_selection, mlknn_predict, mlknn_train
from .federation import AggregateResult, FederationHandle, aggregate, broadcast, \
    decide_independent
from .fedcfc import FedCmfsParams, SelectionResult, fedcfc, run_fedcmfs
from .fedcfl import CandidateSet, CorrelationEntry, fedcfl
from .fedcfr import fedcfr

__version__ = "0.1.0"
