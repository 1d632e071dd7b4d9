"""Prediction with one covariate projected out of a fitted tree, and the
variable importance built on it.

Dropping a point down a tree while ignoring every split on covariate j sends
it to both children at those splits, so at each tree level the point occupies
a collection of nodes. Points sharing a collection share a cell of the
projected partition; the prediction for a query is the mean in-bag response
over its cell at the deepest level where the whole collection is terminal,
falling back level by level while the cell holds no in-bag points. Leaves
reached early participate unchanged in all deeper levels, so every level is a
full partition, and the root and first levels are never empty.

Only rows whose original root-to-leaf path meets a split on j can occupy a
multi-node collection; every other row keeps its original leaf and its
original prediction, and the two groups can never share a cell. The fan-out
machine below therefore runs only on the path-affected rows, which is what
makes the cost of the importance estimate independent of the number of
covariates.

The weighted-traversal predictor (lundberg_predict) is the prior-art
baseline: it also fans out at splits on j but keeps the original leaf
outputs, combining them with in-bag child-fraction weights instead of
recomputing cell outputs from the training points.
"""

from __future__ import annotations

import numpy as np

from .data import ConfigError, Dataset, sample_variance
from .forest import Forest
from .tree import Tree

_PACK_BITS = 52  # exact float64 integers only; packed patterns stay below 2**52


class TreeRouting:
    """Original-tree routing of every data row, cached per (tree, matrix).

    Holds per-row root-to-leaf node paths, the leaf and its depth, and for
    each split covariate the rows whose path meets it together with the depth
    of the first such split.
    """

    def __init__(self, tree: Tree, x: np.ndarray):
        n = x.shape[0]
        maxd = tree.max_depth
        paths = np.full((n, maxd + 1), -1, dtype=np.int64)
        paths[:, 0] = 0
        node = np.zeros(n, dtype=np.int64)
        leaf_depth = np.zeros(n, dtype=np.int64)
        hit_feat = []
        hit_row = []
        hit_depth = []
        active = np.flatnonzero(tree.feature[node] >= 0)
        d = 0
        while active.size:
            nd = node[active]
            f = tree.feature[nd]
            hit_feat.append(f)
            hit_row.append(active.copy())
            hit_depth.append(np.full(active.size, d, dtype=np.int64))
            go_left = x[active, f] <= tree.threshold[nd]
            nxt = np.where(go_left, tree.left[nd], tree.right[nd])
            d += 1
            node[active] = nxt
            paths[active, d] = nxt
            leaf_depth[active] = d
            active = active[tree.feature[nxt] >= 0]
        self.tree = tree
        self.paths = paths
        self.leaf = node
        self.leaf_depth = leaf_depth
        self.by_feature: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        if hit_feat:
            feats = np.concatenate(hit_feat)
            rows = np.concatenate(hit_row)
            depths = np.concatenate(hit_depth)
            order = np.argsort(feats, kind="stable")
            feats, rows, depths = feats[order], rows[order], depths[order]
            uf, starts = np.unique(feats, return_index=True)
            bounds = np.append(starts, feats.size)
            for fi, f in enumerate(uf):
                r = rows[bounds[fi] : bounds[fi + 1]]
                dd = depths[bounds[fi] : bounds[fi + 1]]
                # levels were appended in ascending depth, so a row's first
                # occurrence carries its first-hit depth
                ur, first = np.unique(r, return_index=True)
                self.by_feature[int(f)] = (ur, dd[first])


class _FanOut:
    """Level-synchronous fan-out of the path-affected rows for one excluded
    covariate.

    Rows carry (row, node) tokens; a row's token multiset at a level is its
    node collection. Collections are mapped to integer states keyed by
    (previous state, packed routing decisions). Distinct states can never
    evolve into equal collections (children are exclusive to their parent
    node), so lineage keys identify equal collections exactly and token
    sequences can stay in construction order without per-level sorting by
    node. Rows enter the machine only at the level of their first split on
    the excluded covariate: above it their collection is the single original
    path node, whose cell statistics are the node's own.

    Per level the machine snapshots each row's state plus the in-bag count
    and response sum per state, which is everything the cell lookups need.
    In-bag sums accumulate in ascending row order so that cell means are
    reproducible bit for bit by an independent sequential sum.
    """

    def __init__(self, tree, x, y, j, rows, inbag_mask, first_hit, paths):
        self.tree = tree
        self.j = int(j)
        self.rows = rows
        self.first_hit = first_hit
        self.paths = paths
        n_aff = rows.size
        feature, left, right = tree.feature, tree.left, tree.right
        threshold = tree.threshold
        feat_l = feature.tolist()
        left_l = left.tolist()
        right_l = right.tolist()
        x_aff = x[rows]
        y_aff = y[rows]

        registry: dict[tuple, int] = {}
        state_nodes: list[tuple] = []

        def state_id(key: tuple) -> int:
            sid = registry.get(key)
            if sid is None:
                sid = len(state_nodes)
                registry[key] = sid
                state_nodes.append(key)
            return sid

        jj = self.j

        def successor(toks, bits):
            out = []
            bi = 0
            for v in toks:
                f = feat_l[v]
                if f < 0:
                    out.append(v)
                elif f == jj:
                    out.append(left_l[v])
                    out.append(right_l[v])
                else:
                    out.append(left_l[v] if bits[bi] else right_l[v])
                    bi += 1
            return state_id(tuple(out))

        state_of = np.full(n_aff, -1, dtype=np.int64)
        frozen_level = np.full(n_aff, -1, dtype=np.int64)
        joined = np.zeros(n_aff, dtype=bool)
        join_order = np.argsort(first_hit, kind="stable")
        join_depths = first_hit[join_order]
        jptr = 0

        tok_row = np.empty(0, dtype=np.int64)
        tok_node = np.empty(0, dtype=np.int64)
        snapshots = []
        level = 0
        while True:
            end = jptr
            while end < n_aff and join_depths[end] == level:
                end += 1
            if end > jptr:
                jrows = join_order[jptr:end]
                jnodes = paths[rows[jrows], level]
                state_of[jrows] = [state_id((int(v),)) for v in jnodes]
                joined[jrows] = True
                jptr = end
                tok_row = np.concatenate([tok_row, jrows])
                tok_node = np.concatenate([tok_node, jnodes])
                order = np.argsort(tok_row, kind="stable")
                tok_row, tok_node = tok_row[order], tok_node[order]

            n_states = len(state_nodes)
            sel_mask = inbag_mask & joined
            sel = state_of[sel_mask]
            counts = np.bincount(sel, minlength=n_states)
            sums = np.bincount(sel, weights=y_aff[sel_mask], minlength=n_states)
            snapshots.append((state_of.copy(), counts, sums))

            tok_leaf = feature[tok_node] < 0
            live = np.bincount(
                tok_row, weights=(~tok_leaf).astype(np.float64), minlength=n_aff
            )
            newly = joined & (frozen_level < 0) & (live == 0)
            frozen_level[newly] = level
            active_rows = live > 0
            if jptr >= n_aff and not active_rows.any():
                break

            keep = active_rows[tok_row]
            tok_row, tok_node = tok_row[keep], tok_node[keep]
            if tok_row.size == 0:
                # everyone currently in the machine is frozen; rows joining
                # at deeper levels still have to be admitted
                level += 1
                continue
            tok_f = feature[tok_node]
            tok_leaf = tok_f < 0
            tok_j = tok_f == jj
            tok_dyn = ~tok_leaf & ~tok_j

            d_row, d_node = tok_row[tok_dyn], tok_node[tok_dyn]
            bits = x_aff[d_row, feature[d_node]] <= threshold[d_node]
            words = self._packed_patterns(d_row, bits, n_aff)
            act = np.flatnonzero(active_rows)
            if len(words) == 1:
                _, wrank = np.unique(words[0][act], return_inverse=True)
                combined = state_of[act] * np.int64(wrank.max() + 1) + wrank
                _, first_idx, inverse = np.unique(
                    combined, return_index=True, return_inverse=True
                )
            else:
                key_mat = np.column_stack(
                    [state_of[act]] + [w[act] for w in words]
                )
                _, first_idx, inverse = np.unique(
                    key_mat, axis=0, return_index=True, return_inverse=True
                )

            # one successor computation per distinct (state, pattern) group,
            # from the group's first row
            reps = act[first_idx]
            row_start = np.searchsorted(tok_row, reps, side="left")
            row_end = np.searchsorted(tok_row, reps, side="right")
            dyn_start = np.searchsorted(d_row, reps, side="left")
            dyn_end = np.searchsorted(d_row, reps, side="right")
            group_sid = np.empty(first_idx.size, dtype=np.int64)
            bits_l = bits.tolist()
            toks_l = tok_node.tolist()
            for g in range(first_idx.size):
                group_sid[g] = successor(
                    toks_l[row_start[g] : row_end[g]],
                    bits_l[dyn_start[g] : dyn_end[g]],
                )
            state_of[act] = group_sid[inverse]

            # advance tokens: leaves persist, splits on j fan out, others
            # route; stable row sort keeps within-row construction order
            nxt_dyn = np.where(bits, left[d_node], right[d_node])
            j_row, j_node = tok_row[tok_j], tok_node[tok_j]
            tok_row = np.concatenate([tok_row[tok_leaf], d_row, j_row, j_row])
            tok_node = np.concatenate(
                [tok_node[tok_leaf], nxt_dyn, left[j_node], right[j_node]]
            )
            order = np.argsort(tok_row, kind="stable")
            tok_row, tok_node = tok_row[order], tok_node[order]
            level += 1

        self.snapshots = snapshots
        self.frozen_level = frozen_level
        self.state_nodes = state_nodes

    @staticmethod
    def _packed_patterns(d_row, bits, n_aff):
        """Per-row integer words encoding the routing decisions at its
        non-excluded internal nodes, in within-row token order."""
        if d_row.size == 0:
            return [np.zeros(n_aff, dtype=np.int64)]
        idx = np.arange(d_row.size)
        is_first = np.empty(d_row.size, dtype=bool)
        is_first[0] = True
        is_first[1:] = d_row[1:] != d_row[:-1]
        starts = idx[is_first]
        reps = np.diff(np.append(starts, d_row.size))
        offsets = idx - np.repeat(starts, reps)
        n_words = int(offsets.max()) // _PACK_BITS + 1
        words = []
        for w in range(n_words):
            in_word = (offsets // _PACK_BITS) == w
            weight = np.where(
                in_word & bits, np.exp2((offsets % _PACK_BITS).astype(np.float64)), 0.0
            )
            acc = np.bincount(d_row, weights=weight, minlength=n_aff)
            words.append(acc.astype(np.int64))
        return words

    def resolve(self, positions: np.ndarray):
        """(value, level_used) per affected query, with empty-cell fallback.

        At levels at or above a query's first fan-out its collection is a
        single original path node, whose in-bag statistics are the node's own
        and never empty, so the walk always terminates.
        """
        tree = self.tree
        values = np.empty(positions.size, dtype=np.float64)
        levels = np.empty(positions.size, dtype=np.int64)
        for out, pos in enumerate(positions):
            k = int(self.frozen_level[pos])
            while True:
                if k <= self.first_hit[pos]:
                    node = self.paths[self.rows[pos], k]
                    values[out] = tree.value[node]
                    levels[out] = k
                    break
                state_of, counts, sums = self.snapshots[k]
                sid = state_of[pos]
                if counts[sid] > 0:
                    values[out] = sums[sid] / counts[sid]
                    levels[out] = k
                    break
                k -= 1
        return values, levels

    def collections(self, pos: int):
        """Node collection of one affected row at every recorded level;
        above its first fan-out that is the single original path node."""
        out = []
        for k, (state_of, _, _) in enumerate(self.snapshots):
            sid = state_of[pos]
            if sid < 0:
                out.append([int(self.paths[self.rows[pos], k])])
            else:
                out.append(sorted(int(v) for v in self.state_nodes[sid]))
        return out

    def cell_count(self, pos: int, level: int) -> int:
        state_of, counts, _ = self.snapshots[level]
        return int(counts[state_of[pos]])


def projected_tree_predict(
    tree: Tree,
    data: Dataset,
    j: int,
    query_rows,
    routing: TreeRouting | None = None,
    debug: bool = False,
):
    """Projected-tree prediction for each query row when covariate j is
    ignored.

    Query rows must be disjoint from the tree's in-bag rows. Returns
    (values, level_used); with `debug` also a list of per-query dicts holding
    the node collections per level, the level used, and the size of the
    projected cell the prediction came from.
    """
    x, y = data.x, data.y
    query_rows = np.asarray(query_rows, dtype=np.int64)
    if routing is None:
        routing = TreeRouting(tree, x)
    values = tree.value[routing.leaf[query_rows]]
    levels = routing.leaf_depth[query_rows].copy()
    dumps = None
    if debug:
        dumps = [
            {
                "collections": [
                    [int(routing.paths[q, k])]
                    for k in range(int(routing.leaf_depth[q]) + 1)
                ],
                "level_used": int(levels[qi]),
                "cell_size": int(tree.count[routing.leaf[q]]),
            }
            for qi, q in enumerate(query_rows)
        ]
    hit = routing.by_feature.get(int(j))
    if hit is not None:
        aff_rows, aff_first = hit
        inbag_mask = np.zeros(data.n, dtype=bool)
        inbag_mask[tree.in_bag] = True
        machine = _FanOut(
            tree, x, y, j, aff_rows, inbag_mask[aff_rows], aff_first, routing.paths
        )
        where_aff = np.searchsorted(aff_rows, query_rows)
        in_aff = (where_aff < aff_rows.size) & (
            aff_rows[np.minimum(where_aff, aff_rows.size - 1)] == query_rows
        )
        q_sel = np.flatnonzero(in_aff)
        if q_sel.size:
            positions = where_aff[q_sel]
            vals, levs = machine.resolve(positions)
            values[q_sel] = vals
            levels[q_sel] = levs
            if debug:
                for qi, pos, lev in zip(q_sel, positions, levs):
                    dumps[qi] = {
                        "collections": machine.collections(int(pos)),
                        "level_used": int(lev),
                        "cell_size": machine.cell_count(int(pos), int(lev)),
                    }
    if debug:
        return values, levels, dumps
    return values, levels


# ---------------------------------------------------------------------------
# forest-level importance


def sobol_mda_all(forest: Forest, data: Dataset, js=None) -> np.ndarray:
    """Total-Sobol-index estimate for every requested covariate.

    For each covariate j, the out-of-bag error of the forest with j projected
    out is compared against the plain out-of-bag error and normalized by the
    sample variance of the response. Observations that are in-bag everywhere
    contribute zero to both error sums; the sums are divided by n.
    """
    vy = sample_variance(data.y)
    if vy == 0.0:
        raise ConfigError("response variance is zero")
    if js is None:
        js = range(data.p)
    js = [int(j) for j in js]
    n = data.n
    x, y = data.x, data.y
    delta = {j: np.zeros(n, dtype=np.float64) for j in js}
    base_sums = np.zeros(n, dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for ell, tree in enumerate(forest.trees):
        rows = forest.oob_rows(ell)
        routing = TreeRouting(tree, x)
        base_pred = tree.value[routing.leaf[rows]]
        base_sums[rows] += base_pred
        counts[rows] += 1
        inbag_mask = np.zeros(n, dtype=bool)
        inbag_mask[tree.in_bag] = True
        oob_mask = ~inbag_mask
        for j in js:
            hit = routing.by_feature.get(j)
            if hit is None:
                continue
            aff_rows, aff_first = hit
            q_pos = np.flatnonzero(oob_mask[aff_rows])
            if q_pos.size == 0:
                continue
            machine = _FanOut(
                tree, x, y, j, aff_rows, inbag_mask[aff_rows], aff_first, routing.paths
            )
            vals, _ = machine.resolve(q_pos)
            q_rows = aff_rows[q_pos]
            delta[j][q_rows] += vals - tree.value[routing.leaf[q_rows]]
    defined = counts > 0
    cd = counts[defined]
    m_base = base_sums[defined] / cd
    err_base = (y[defined] - m_base) ** 2
    out = np.empty(len(js), dtype=np.float64)
    for k, j in enumerate(js):
        m_proj = (base_sums[defined] + delta[j][defined]) / cd
        d = (y[defined] - m_proj) ** 2 - err_base
        out[k] = float(np.sum(d) / n / vy)
    return out


def sobol_mda(forest: Forest, data: Dataset, j: int) -> float:
    return float(sobol_mda_all(forest, data, js=[j])[0])


# ---------------------------------------------------------------------------
# weighted-traversal baseline


def lundberg_rows(tree: Tree, x_rows: np.ndarray, j: int) -> np.ndarray:
    """Weighted-traversal prediction of many rows with covariate j ignored.

    At splits on j the point goes to both children, each branch weighted by
    the child's in-bag fraction of its parent; elsewhere it routes normally.
    Returns the weight-normalized sum of the leaf outputs reached.
    """
    X = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    n = X.shape[0]
    tok_row = np.arange(n, dtype=np.int64)
    tok_node = np.zeros(n, dtype=np.int64)
    tok_w = np.ones(n, dtype=np.float64)
    sums = np.zeros(n, dtype=np.float64)
    wsum = np.zeros(n, dtype=np.float64)
    feature, left, right = tree.feature, tree.left, tree.right
    while tok_row.size:
        f = feature[tok_node]
        leaf = f < 0
        if leaf.any():
            lr, ln, lw = tok_row[leaf], tok_node[leaf], tok_w[leaf]
            np.add.at(sums, lr, lw * tree.value[ln])
            np.add.at(wsum, lr, lw)
        live = ~leaf
        tok_row, tok_node, tok_w, f = (
            tok_row[live],
            tok_node[live],
            tok_w[live],
            f[live],
        )
        if tok_row.size == 0:
            break
        isj = f == j
        jr, jn, jw = tok_row[isj], tok_node[isj], tok_w[isj]
        lfrac = tree.count[left[jn]] / tree.count[jn]
        dr, dn, dw = tok_row[~isj], tok_node[~isj], tok_w[~isj]
        go_left = X[dr, feature[dn]] <= tree.threshold[dn]
        nxt = np.where(go_left, left[dn], right[dn])
        tok_row = np.concatenate([dr, jr, jr])
        tok_node = np.concatenate([nxt, left[jn], right[jn]])
        tok_w = np.concatenate([dw, jw * lfrac, jw * (1.0 - lfrac)])
    return sums / wsum


def lundberg_predict(tree: Tree, j: int, x: np.ndarray) -> float:
    return float(lundberg_rows(tree, np.asarray(x, dtype=np.float64)[None, :], j)[0])


def sobol_mda_lundberg_all(forest: Forest, data: Dataset, js=None) -> np.ndarray:
    """sobol_mda_all with the weighted-traversal predictor in place of the
    projected-partition one."""
    vy = sample_variance(data.y)
    if vy == 0.0:
        raise ConfigError("response variance is zero")
    if js is None:
        js = range(data.p)
    js = [int(j) for j in js]
    n = data.n
    y = data.y
    delta = {j: np.zeros(n, dtype=np.float64) for j in js}
    base_sums = np.zeros(n, dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for ell, tree in enumerate(forest.trees):
        rows = forest.oob_rows(ell)
        routing = TreeRouting(tree, data.x)
        base_pred = tree.value[routing.leaf[rows]]
        base_sums[rows] += base_pred
        counts[rows] += 1
        x_oob = data.x[rows]
        for j in js:
            hit = routing.by_feature.get(j)
            if hit is None:
                continue
            aff = np.flatnonzero(np.isin(rows, hit[0], assume_unique=True))
            if aff.size == 0:
                continue
            vals = lundberg_rows(tree, x_oob[aff], j)
            delta[j][rows[aff]] += vals - base_pred[aff]
    defined = counts > 0
    cd = counts[defined]
    m_base = base_sums[defined] / cd
    err_base = (y[defined] - m_base) ** 2
    out = np.empty(len(js), dtype=np.float64)
    for k, j in enumerate(js):
        m_proj = (base_sums[defined] + delta[j][defined]) / cd
        d = (y[defined] - m_proj) ** 2 - err_base
        out[k] = float(np.sum(d) / n / vy)
    return out


def sobol_mda_lundberg(forest: Forest, data: Dataset, j: int) -> float:
    return float(sobol_mda_lundberg_all(forest, data, js=[j])[0])
