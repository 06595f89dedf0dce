"""
Hierarchical quantizers that turn an embedding matrix into Semantic IDs.

- quantize_gaoq: balanced tree; child indices at levels >= 2 are anchor
  indices chosen by matching centered child centroids to one anchor set
  shared by the whole level.
- quantize_hkmeans_local: the same tree (same clustering seeds), child
  indices are the raw cluster enumeration order under each parent.
- quantize_rq_kmeans: residual k-means with global per-level codebooks.

The last level of the hierarchical quantizers makes every item a singleton
child of its prefix, so SIDs are unique by construction.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from math import prod
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from semid.domain.clustering import (
    balanced_kmeans,
    cosine_matrix,
    hungarian,
    lloyd_kmeans,
    ortho_anchors,
)
from semid.domain.models import (
    AnchorSet,
    CodeBook,
    EmbeddingMatrix,
    QuantizerConfig,
    SidTable,
    TreeNode,
)
from semid.errors import QuantizationError

log = logging.getLogger(__name__)

# independent random streams, so anchor draws never shift clustering seeds
_CLUSTER_STREAM = 0
_ANCHOR_STREAM = 1
_RQ_STREAM = 2


def _rng(seed: int, level: int, node: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(level), int(node), int(stream)])


# -------------------------
# one level under one parent
# -------------------------

def split_parent(parent: TreeNode, x: np.ndarray, b: int, iters: int,
                 rng: np.random.Generator) -> List[TreeNode]:
    """Balanced split of a parent's members; children in cluster enumeration order.

    Underfull parents (fewer members than ``b``) get one child per member.
    """
    members = parent.members
    n_p = len(members)
    b_eff = min(int(b), n_p)
    if b_eff == n_p:
        labels = np.arange(n_p)
        centroids = x[members].astype(np.float64)
    else:
        part = balanced_kmeans(x[members], b_eff, iters=iters, rng=rng)
        labels, centroids = part.labels, part.centroids
    children = []
    for j in range(b_eff):
        mem = members[labels == j]
        children.append(TreeNode(-1, parent.level + 1, parent.node_id, centroids[j], mem, j))
    return children


def align_children(parent: TreeNode, children: List[TreeNode], anchors: AnchorSet) -> List[TreeNode]:
    """Replaces child codes by globally aligned anchor indices.

    Child centroids are centered on the parent centroid, scored against every
    anchor by cosine and matched injectively (maximum total similarity).
    Zero-norm residuals score 0 against all anchors.
    """
    if len(children) > anchors.count:
        raise QuantizationError(
            f"level {parent.level + 1}: {len(children)} children but only {anchors.count} anchors"
        )
    residuals = np.stack([c.centroid - parent.centroid for c in children])
    sims = cosine_matrix(residuals, anchors.vectors)
    if len(children) == 1:
        children[0].code = int(np.argmax(sims[0]))
        return children
    zero = np.flatnonzero(np.linalg.norm(residuals, axis=1) == 0)
    if len(zero):
        log.warning("level %d parent %d: %d zero-norm residual(s), matched with similarity 0",
                    parent.level + 1, parent.node_id, len(zero))
    match = hungarian(sims, maximize=True)
    for child, code in zip(children, match.columns):
        child.code = int(code)
    return children


def gaoq_level(parent: TreeNode, embeddings: np.ndarray, b: int,
               anchors: AnchorSet, iters: int = 50,
               rng: Optional[np.random.Generator] = None) -> List[TreeNode]:
    """Splits one parent into balanced children and gives each an anchor index."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(embeddings, dtype=np.float64)
    children = split_parent(parent, x, b, iters, rng)
    return align_children(parent, children, anchors)


# -------------------------
# tree construction
# -------------------------

def _check_prefix_capacity(n: int, branching: List[int]) -> None:
    if not branching:
        raise QuantizationError("at least one prefix level is required")
    if any(int(b) < 2 for b in branching):
        raise QuantizationError(f"branching factors must be >= 2, got {branching}")
    need = prod(int(b) for b in branching)
    if n < need:
        raise QuantizationError(f"{n} items cannot fill {need} prefixes (branching {branching})")


def _order_duplicates(x: np.ndarray, children: List[TreeNode]) -> List[List[int]]:
    """Gives identical singleton children consecutive codes in item order."""
    groups: Dict[bytes, List[TreeNode]] = {}
    for c in children:
        groups.setdefault(x[c.members[0]].tobytes(), []).append(c)
    dups = []
    for group in groups.values():
        if len(group) < 2:
            continue
        codes = sorted(c.code for c in group)
        group.sort(key=lambda c: int(c.members[0]))
        for c, code in zip(group, codes):
            c.code = code
        dups.append([int(c.members[0]) for c in group])
    return dups


def _build_tree(emb: EmbeddingMatrix, config: QuantizerConfig, aligned: bool) -> Tuple[CodeBook, SidTable]:
    x = np.asarray(emb.values, dtype=np.float64)
    n, dim = x.shape
    branching = [int(b) for b in config.branching]
    _check_prefix_capacity(n, branching)
    num_levels = len(branching) + 1
    method = "gaoq" if aligned else "hkmeans"

    root = TreeNode(0, 0, None, x.mean(axis=0), np.arange(n), 0)
    nodes: List[TreeNode] = [root]
    anchors_by_level: Dict[int, AnchorSet] = {}
    duplicates: List[List[int]] = []
    frontier = [root]
    codes = np.zeros((n, num_levels), dtype=np.int64)
    alphabet: List[int] = []

    for level in range(1, num_levels + 1):
        last = level == num_levels
        if last:
            width = max(len(p.members) for p in frontier)
        else:
            width = branching[level - 1]
        anchors: Optional[AnchorSet] = None
        if aligned and level >= 2:
            g = width if last else config.anchors_at(level)
            anchors = ortho_anchors(g, dim, _rng(config.seed, level, 0, _ANCHOR_STREAM), level)
            anchors_by_level[level] = anchors

        def work(parent: TreeNode, level=level, last=last, anchors=anchors) -> List[TreeNode]:
            b = len(parent.members) if last else branching[level - 1]
            rng = _rng(config.seed, level, parent.node_id, _CLUSTER_STREAM)
            children = split_parent(parent, x, b, config.iters, rng)
            if anchors is not None:
                children = align_children(parent, children, anchors)
            return children

        per_parent = _map_parents(work, frontier, config.threads)

        next_frontier: List[TreeNode] = []
        for parent, children in zip(frontier, per_parent):
            if last and aligned:
                duplicates.extend(_order_duplicates(x, children))
            for child in children:
                child.node_id = len(nodes)
                nodes.append(child)
                codes[child.members, level - 1] = child.code
                next_frontier.append(child)
        frontier = next_frontier
        alphabet.append(anchors.count if anchors is not None else width)

    if duplicates:
        log.warning("%d group(s) of identical embeddings: %s", len(duplicates),
                    "; ".join(",".join(emb.row_tokens[i] for i in g) for g in duplicates))
    book = CodeBook(method, branching, nodes, anchors_by_level, duplicates=duplicates)
    return book, SidTable(codes, alphabet, list(emb.row_tokens))


def _map_parents(fn: Callable[[TreeNode], List[TreeNode]], parents: List[TreeNode],
                 threads: int) -> List[List[TreeNode]]:
    """Runs per-parent work; results always come back in parent order."""
    if threads <= 1 or len(parents) <= 1:
        return [fn(p) for p in parents]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, parents))


def quantize_gaoq(embeddings: EmbeddingMatrix, config: QuantizerConfig) -> Tuple[CodeBook, SidTable]:
    """Globally aligned hierarchical quantization.

    Level 1 codes are balanced cluster indices. Levels 2..L-1 split each
    parent into ``b_l`` balanced children and match them to the level's
    shared anchors. The last level turns every item of a prefix into its own
    child, with ``g_L`` equal to the largest prefix population.
    """
    return _build_tree(embeddings, config, aligned=True)


def quantize_hkmeans_local(embeddings: EmbeddingMatrix, config: QuantizerConfig) -> Tuple[CodeBook, SidTable]:
    """Hierarchical balanced k-means with local child indices (no anchors, no matching)."""
    return _build_tree(embeddings, config, aligned=False)


# -------------------------
# residual k-means baseline
# -------------------------

def quantize_rq_kmeans(embeddings: EmbeddingMatrix, config: QuantizerConfig) -> Tuple[CodeBook, SidTable]:
    """Residual k-means over ``len(branching)`` stages plus a disambiguation level.

    Stage l clusters the pooled residuals of stage l-1 with standard k-means;
    codes are global centroid indices. The final column counts items that
    share the same code tuple, in item order.
    """
    x = np.asarray(embeddings.values, dtype=np.float64)
    n = x.shape[0]
    branching = [int(b) for b in config.branching]
    if not branching:
        raise QuantizationError("at least one level is required")
    residual = x.copy()
    codes = np.zeros((n, len(branching) + 1), dtype=np.int64)
    tables: List[np.ndarray] = []
    for l, b in enumerate(branching):
        if n < b:
            raise QuantizationError(f"{n} items cannot fit {b} centroids at level {l + 1}")
        part = lloyd_kmeans(residual, b, iters=config.iters, rng=_rng(config.seed, l + 1, 0, _RQ_STREAM))
        codes[:, l] = part.labels
        tables.append(part.centroids)
        residual = residual - part.centroids[part.labels]

    seen: Dict[Tuple[int, ...], int] = {}
    for i in range(n):
        key = tuple(int(c) for c in codes[i, :-1])
        codes[i, -1] = seen.get(key, 0)
        seen[key] = int(codes[i, -1]) + 1
    alphabet = branching + [max(seen.values())]
    book = CodeBook("rqkmeans", branching, level_centroids=tables)
    return book, SidTable(codes, alphabet, list(embeddings.row_tokens))


def reconstruct(book: CodeBook, sids: SidTable, upto: Optional[int] = None) -> np.ndarray:
    """Reconstruction of every item from its codes.

    Tree quantizers: centroid of the item's node at level ``upto`` (default:
    deepest prefix level). RQ: sum of the first ``upto`` stage centroids.
    """
    n = sids.codes.shape[0]
    if book.method == "rqkmeans":
        stages = len(book.level_centroids) if upto is None else int(upto)
        out = np.zeros((n, book.level_centroids[0].shape[1]))
        for l in range(stages):
            out += book.level_centroids[l][sids.codes[:, l]]
        return out
    level = len(book.branching) if upto is None else int(upto)
    dim = book.nodes[0].centroid.shape[0]
    out = np.zeros((n, dim))
    for node in book.nodes:
        if node.level == level:
            out[node.members] = node.centroid
    return out


QUANTIZERS = {
    "gaoq": quantize_gaoq,
    "hkmeans": quantize_hkmeans_local,
    "rqkmeans": quantize_rq_kmeans,
}


def quantize(embeddings: EmbeddingMatrix, config: QuantizerConfig) -> Tuple[CodeBook, SidTable]:
    try:
        fn = QUANTIZERS[config.method]
    except KeyError as exc:
        raise QuantizationError(f"unknown method {config.method!r}") from exc
    return fn(embeddings, config)
