from .benchmarks import BenchmarkGNN, GCNConv, SAGEConv
from .crossnet import CrossNet, cross_rank
from .entmax import entmax_alpha, sigma_alpha
from .params import build_model, count_params, load_checkpoint, match_param_count, save_checkpoint, size_for
from .rnconv import RNConv, RNConvLayer, neighbour_mean
from .rnode import RNodeLayer, mlp_width
from .trees import DDT, NODE, NodeLayer, leaf_weights, odt_forward

__all__ = [
    "BenchmarkGNN", "GCNConv", "SAGEConv", "CrossNet", "cross_rank", "entmax_alpha", "sigma_alpha",
    "build_model", "count_params", "load_checkpoint", "match_param_count", "save_checkpoint", "size_for",
    "RNConv", "RNConvLayer", "neighbour_mean", "RNodeLayer", "mlp_width",
    "DDT", "NODE", "NodeLayer", "leaf_weights", "odt_forward",
]
