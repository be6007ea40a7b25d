"""2-D projection, density labels, class mapping and plots."""
from .labels import (ClusterLabels, Embedding2D, NoClustersError, apply_mapping, assign_labels,
                     default_min_cluster_size, map_clusters_to_classes, reduce)
from .plot import PlotFiles, plot_clusters
from .reducers import REDUCERS
from .umap import UMAP

__all__ = ["UMAP", "Embedding2D", "ClusterLabels", "NoClustersError", "reduce", "assign_labels",
           "default_min_cluster_size", "map_clusters_to_classes", "apply_mapping", "plot_clusters",
           "PlotFiles", "REDUCERS"]
