"""Pad variable-size graphs into dense tensors."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .graphs import GraphSample


@dataclass
class GraphBatch:
    x: torch.Tensor  # (B, N, Kv) one-hot node types
    a: torch.Tensor  # (B, N, N, Ke+1) one-hot edge types, channel 0 = non-edge
    mask: torch.Tensor  # (B, N) bool
    sizes: list

    def __len__(self):
        return self.x.shape[0]

    def to(self, dtype):
        return GraphBatch(self.x.to(dtype), self.a.to(dtype), self.mask, self.sizes)


def collate(graphs: Sequence[GraphSample], dtype=torch.float32) -> GraphBatch:
    sizes = [g.num_nodes for g in graphs]
    n = max(sizes)
    kv, ke1 = graphs[0].num_node_types, graphs[0].num_edge_types + 1
    x = np.zeros((len(graphs), n, kv), dtype=np.float32)
    a = np.zeros((len(graphs), n, n, ke1), dtype=np.float32)
    a[..., 0] = 1.0
    mask = np.zeros((len(graphs), n), dtype=bool)
    for b, g in enumerate(graphs):
        k = g.num_nodes
        x[b, :k] = g.node_features
        a[b, :k, :k] = g.edge_tensor
        mask[b, :k] = True
    return GraphBatch(torch.from_numpy(x).to(dtype), torch.from_numpy(a).to(dtype), torch.from_numpy(mask), sizes)
