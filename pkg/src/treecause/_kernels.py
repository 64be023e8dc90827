"""Compiled hot loops for the backfitting sampler and forest evaluation.

Tree state lives in fixed-capacity heap arrays (node i's children at 2i+1,
2i+2): var = -2 marks an unused slot, -1 a leaf, >= 0 a split variable. Each
tree also keeps its training rows as one contiguous segment of a per-tree row
permutation, so a node's rows are order[t, seg[t, node, 0]:seg[t, node, 1]].

Per node and variable we cache the half-open index range [rlo, rhi) of
candidate cutpoints lying strictly inside the node's observed value range;
these are exactly the cuts giving two nonempty children. Ranges are stored for
heap slots below RCAP (depth <= 8) and recomputed from rows beyond that.

Weighted rows (w in {0,1}) let the same kernel fit a treatment forest whose
sufficient statistics come only from treated rows while split legality still
uses all rows.
"""

import math

import numpy as np
from numba import njit

NODE_UNUSED = -2
NODE_LEAF = -1


@njit(cache=True, inline="always")
def _depth(node):
    d = 0
    while node > 0:
        node = (node - 1) >> 1
        d += 1
    return d


@njit(cache=True, inline="always")
def _split_prob(d, eta, beta):
    return eta * (1.0 + d) ** (-beta)


@njit(cache=True, inline="always")
def _leaf_ll(nw, S, Q, sigma2, smu2):
    # integrated likelihood term of one leaf, leaf prior mean 0
    if nw <= 0.0:
        return 0.0
    ym = S / nw
    sse = Q - S * ym
    if sse < 0.0:
        sse = 0.0
    den = nw * smu2 + sigma2
    return (
        -0.5 * nw * math.log(2.0 * math.pi * sigma2)
        + 0.5 * math.log(sigma2 / den)
        - sse / (2.0 * sigma2)
        - nw * ym * ym / (2.0 * den)
    )


@njit(cache=True, inline="always")
def _bisect_right(a, lo, hi, x):
    # first index in [lo, hi) with a[idx] > x
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, inline="always")
def _bisect_left(a, lo, hi, x):
    # first index in [lo, hi) with a[idx] >= x
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _minmax_rows(X, rows, a, b, mn, mx):
    """Per-variable min/max over X[rows[a:b], :] into the (p,) buffers mn/mx.

    Row-major traversal so the inner loop runs over contiguous memory.
    """
    p = X.shape[1]
    for v in range(p):
        mn[v] = np.inf
        mx[v] = -np.inf
    for ii in range(a, b):
        row = rows[ii]
        for v in range(p):
            val = X[row, v]
            mn[v] = min(mn[v], val)
            mx[v] = max(mx[v], val)


@njit(cache=True)
def _ranges_into(t, node, order, seg, rlo, rhi, X, cvals, coff, rl, rh, fmn, fmx):
    """Fill rl/rh (p,) with the node's legal candidate index ranges."""
    p = coff.shape[0] - 1
    rcap = rlo.shape[1]
    if node < rcap:
        for v in range(p):
            rl[v] = rlo[t, node, v]
            rh[v] = rhi[t, node, v]
        return
    _minmax_rows(X, order[t], seg[t, node, 0], seg[t, node, 1], fmn, fmx)
    for v in range(p):
        c0 = coff[v]
        c1 = coff[v + 1]
        if c1 == c0:
            rl[v] = 0
            rh[v] = 0
        else:
            rl[v] = _bisect_right(cvals, c0, c1, fmn[v]) - c0
            rh[v] = _bisect_left(cvals, c0, c1, fmx[v]) - c0


@njit(cache=True)
def _store_ranges(t, node, order, seg, rlo, rhi, X, cvals, coff, fmn, fmx):
    """Compute the node's ranges from its rows and cache them (if slot is cached)."""
    rcap = rlo.shape[1]
    if node >= rcap:
        return
    p = coff.shape[0] - 1
    _minmax_rows(X, order[t], seg[t, node, 0], seg[t, node, 1], fmn, fmx)
    for v in range(p):
        c0 = coff[v]
        c1 = coff[v + 1]
        if c1 == c0:
            rlo[t, node, v] = 0
            rhi[t, node, v] = 0
        else:
            rlo[t, node, v] = np.int16(_bisect_right(cvals, c0, c1, fmn[v]) - c0)
            rhi[t, node, v] = np.int16(_bisect_left(cvals, c0, c1, fmx[v]) - c0)


@njit(cache=True)
def _rows_have_legal(rows, lo, hi, Xt, cvals, coff):
    """Any variable with a candidate strictly inside the row set's value range?

    Variable-major with early exit: on nodes big enough to matter the first
    variable almost always has an interior candidate.
    """
    p = coff.shape[0] - 1
    for v in range(p):
        c0 = coff[v]
        c1 = coff[v + 1]
        if c1 == c0:
            continue
        mn = np.inf
        mx = -np.inf
        for ii in range(lo, hi):
            val = Xt[v, rows[ii]]
            if val < mn:
                mn = val
            if val > mx:
                mx = val
        if _bisect_left(cvals, c0, c1, mx) > _bisect_right(cvals, c0, c1, mn):
            return True
    return False


@njit(cache=True)
def _node_has_legal(t, node, order, seg, rlo, rhi, Xt, cvals, coff):
    rcap = rlo.shape[1]
    p = coff.shape[0] - 1
    if node < rcap:
        for v in range(p):
            if rhi[t, node, v] > rlo[t, node, v]:
                return True
        return False
    return _rows_have_legal(
        order[t], seg[t, node, 0], seg[t, node, 1], Xt, cvals, coff
    )


@njit(cache=True)
def run_sweep(
    var,
    cut,
    mu,
    nn,
    seg,
    order,
    rlo,
    rhi,
    fit,
    ssq_leaf,
    counts_var,
    y_eff,
    w,
    wall1,
    X,
    Xt,
    cvals,
    coff,
    s,
    pg,
    pp,
    pc,
    eta,
    beta,
    sigma,
    sigma_mu,
    prior_only,
    rng,
    st_buf,
    lv_buf,
    in_buf,
    pr_buf,
    rows1,
    rows2,
    tf,
    res,
    NW_buf,
    S_buf,
    Q_buf,
    rl,
    rh,
    rl2,
    rh2,
    sg2lo,
    sg2hi,
    NW2,
    S2,
    Q2,
    rmn,
    rmx,
    fmn,
    fmx,
    move_stats,
):
    """One full backfitting pass: for each tree, one MH structure move + leaf redraw.

    Mutates the heap state, fit (the running weighted forest fit per row),
    counts_var (splits per variable across the forest), ssq_leaf (per-tree sum
    of squared leaf values) and move_stats (proposed/accepted per move kind).
    """
    m = var.shape[0]
    cap = var.shape[1]
    n = X.shape[0]
    p = coff.shape[0] - 1
    sigma2 = sigma * sigma
    smu2 = sigma_mu * sigma_mu

    for t in range(m):
        # partial residual against the rest of the forest, this tree included
        for i in range(n):
            res[i] = y_eff[i] - fit[i]
        # --- collect active nodes ---
        nl = 0
        ni = 0
        npr = 0
        sp = 1
        st_buf[0] = 0
        while sp > 0:
            sp -= 1
            node = st_buf[sp]
            v0 = var[t, node]
            if v0 == NODE_LEAF:
                lv_buf[nl] = node
                nl += 1
            else:
                in_buf[ni] = node
                ni += 1
                l = 2 * node + 1
                if var[t, l] == NODE_LEAF and var[t, l + 1] == NODE_LEAF:
                    pr_buf[npr] = node
                    npr += 1
                st_buf[sp] = l + 1
                sp += 1
                st_buf[sp] = l
                sp += 1

        # --- per-leaf sufficient statistics against the tree's partial residual ---
        for li in range(nl):
            leaf = lv_buf[li]
            mval = mu[t, leaf]
            a = seg[t, leaf, 0]
            b = seg[t, leaf, 1]
            nw = 0.0
            Ssum = 0.0
            Qsum = 0.0
            if wall1:
                for ii in range(a, b):
                    row = order[t, ii]
                    tf[row] = mval
                    r = res[row] + mval
                    Ssum += r
                    Qsum += r * r
                nw = float(b - a)
            else:
                # binary weights: wi*r keeps w=0 rows out without a branch
                for ii in range(a, b):
                    row = order[t, ii]
                    tf[row] = mval
                    wi = w[row]
                    r = res[row] + wi * mval
                    nw += wi
                    Ssum += wi * r
                    Qsum += wi * r * r
            NW_buf[leaf] = nw
            S_buf[leaf] = Ssum
            Q_buf[leaf] = Qsum

        # --- pick a structurally feasible move kind ---
        if ni == 0:
            kind = 0
        else:
            u = rng.random()
            if u < pg:
                kind = 0
            elif u < pg + pp:
                kind = 1
            else:
                kind = 2

        if kind == 0:
            # ---------------- GROW ----------------
            move_stats[0] += 1
            gi = rng.integers(0, nl)
            leaf = lv_buf[gi]
            lch = 2 * leaf + 1
            if lch + 1 < cap:
                _ranges_into(t, leaf, order, seg, rlo, rhi, X, cvals, coff, rl, rh, fmn, fmx)
                sum_s = 0.0
                for v2 in range(p):
                    if rh[v2] > rl[v2]:
                        sum_s += s[v2]
                if sum_s > 0.0:
                    uu = rng.random() * sum_s
                    v = -1
                    acc = 0.0
                    for v2 in range(p):
                        if rh[v2] > rl[v2]:
                            acc += s[v2]
                            v = v2
                            if uu < acc:
                                break
                    nc_v = rh[v] - rl[v]
                    j = rl[v] + rng.integers(0, nc_v)
                    c = cvals[coff[v] + j]

                    a = seg[t, leaf, 0]
                    b = seg[t, leaf, 1]
                    nnode = b - a
                    nleft = 0
                    for ii in range(a, b):
                        row = order[t, ii]
                        if Xt[v, row] <= c:
                            rows1[nleft] = row
                            nleft += 1
                    kpos = nleft
                    for ii in range(a, b):
                        row = order[t, ii]
                        if Xt[v, row] > c:
                            rows1[kpos] = row
                            kpos += 1

                    mval = mu[t, leaf]
                    nwl = 0.0
                    Sl = 0.0
                    Ql = 0.0
                    if wall1:
                        for ii in range(nleft):
                            r = res[rows1[ii]] + mval
                            Sl += r
                            Ql += r * r
                        nwl = float(nleft)
                    else:
                        for ii in range(nleft):
                            row = rows1[ii]
                            wi = w[row]
                            r = res[row] + wi * mval
                            nwl += wi
                            Sl += wi * r
                            Ql += wi * r * r
                    nwr = NW_buf[leaf] - nwl
                    Sr = S_buf[leaf] - Sl
                    Qr = Q_buf[leaf] - Ql

                    tl = _rows_have_legal(rows1, 0, nleft, Xt, cvals, coff)
                    tr = _rows_have_legal(rows1, nleft, nnode, Xt, cvals, coff)

                    d = _depth(leaf)
                    spd = _split_prob(d, eta, beta)
                    spd1 = _split_prob(d + 1, eta, beta)
                    if prior_only:
                        ll_delta = 0.0
                    else:
                        ll_delta = (
                            _leaf_ll(nwl, Sl, Ql, sigma2, smu2)
                            + _leaf_ll(nwr, Sr, Qr, sigma2, smu2)
                            - _leaf_ll(NW_buf[leaf], S_buf[leaf], Q_buf[leaf], sigma2, smu2)
                        )
                    log_prior = (
                        math.log(spd)
                        - math.log1p(-spd)
                        + math.log(s[v])
                        - math.log(sum_s)
                        - math.log(nc_v)
                    )
                    if tl:
                        log_prior += math.log1p(-spd1)
                    if tr:
                        log_prior += math.log1p(-spd1)
                    p_g = 1.0 if ni == 0 else pg
                    # prunable count after the grow: leaf's parent stops being
                    # prunable if it was, the grown node becomes prunable
                    was = 0
                    if leaf > 0:
                        sib = leaf + 1 if (leaf & 1) == 1 else leaf - 1
                        if var[t, sib] == NODE_LEAF:
                            was = 1
                    npr_new = npr + 1 - was
                    log_q = (
                        math.log(pp)
                        - math.log(npr_new)
                        - math.log(p_g)
                        + math.log(nl)
                        - math.log(s[v])
                        + math.log(sum_s)
                        + math.log(nc_v)
                    )
                    alpha = ll_delta + log_prior + log_q
                    if rng.random() < math.exp(min(alpha, 0.0)):
                        move_stats[3] += 1
                        var[t, leaf] = v
                        cut[t, leaf] = c
                        var[t, lch] = NODE_LEAF
                        var[t, lch + 1] = NODE_LEAF
                        mu[t, lch] = mval
                        mu[t, lch + 1] = mval
                        nn[t, lch] = nleft
                        nn[t, lch + 1] = nnode - nleft
                        seg[t, lch, 0] = a
                        seg[t, lch, 1] = a + nleft
                        seg[t, lch + 1, 0] = a + nleft
                        seg[t, lch + 1, 1] = b
                        for ii in range(nnode):
                            order[t, a + ii] = rows1[ii]
                        NW_buf[lch] = nwl
                        S_buf[lch] = Sl
                        Q_buf[lch] = Ql
                        NW_buf[lch + 1] = nwr
                        S_buf[lch + 1] = Sr
                        Q_buf[lch + 1] = Qr
                        counts_var[v] += 1
                        _store_ranges(t, lch, order, seg, rlo, rhi, X, cvals, coff, fmn, fmx)
                        _store_ranges(t, lch + 1, order, seg, rlo, rhi, X, cvals, coff, fmn, fmx)
                        lv_buf[gi] = lch
                        lv_buf[nl] = lch + 1
                        nl += 1

        elif kind == 1:
            # ---------------- PRUNE ----------------
            move_stats[1] += 1
            node = pr_buf[rng.integers(0, npr)]
            lch = 2 * node + 1
            v0 = var[t, node]
            _ranges_into(t, node, order, seg, rlo, rhi, X, cvals, coff, rl, rh, fmn, fmx)
            sum_s = 0.0
            for v2 in range(p):
                if rh[v2] > rl[v2]:
                    sum_s += s[v2]
            nc_v0 = rh[v0] - rl[v0]
            nwm = NW_buf[lch] + NW_buf[lch + 1]
            Sm = S_buf[lch] + S_buf[lch + 1]
            Qm = Q_buf[lch] + Q_buf[lch + 1]
            tl = _node_has_legal(t, lch, order, seg, rlo, rhi, Xt, cvals, coff)
            tr = _node_has_legal(t, lch + 1, order, seg, rlo, rhi, Xt, cvals, coff)
            d = _depth(node)
            spd = _split_prob(d, eta, beta)
            spd1 = _split_prob(d + 1, eta, beta)
            if prior_only:
                ll_delta = 0.0
            else:
                ll_delta = (
                    _leaf_ll(nwm, Sm, Qm, sigma2, smu2)
                    - _leaf_ll(NW_buf[lch], S_buf[lch], Q_buf[lch], sigma2, smu2)
                    - _leaf_ll(NW_buf[lch + 1], S_buf[lch + 1], Q_buf[lch + 1], sigma2, smu2)
                )
            log_prior = -(
                math.log(spd)
                - math.log1p(-spd)
                + math.log(s[v0])
                - math.log(sum_s)
                - math.log(nc_v0)
            )
            if tl:
                log_prior -= math.log1p(-spd1)
            if tr:
                log_prior -= math.log1p(-spd1)
            p_g_new = 1.0 if ni == 1 else pg
            nl_new = nl - 1
            log_q = (
                math.log(p_g_new)
                - math.log(nl_new)
                + math.log(s[v0])
                - math.log(sum_s)
                - math.log(nc_v0)
                - math.log(pp)
                + math.log(npr)
            )
            alpha = ll_delta + log_prior + log_q
            if rng.random() < math.exp(min(alpha, 0.0)):
                move_stats[4] += 1
                var[t, node] = NODE_LEAF
                var[t, lch] = NODE_UNUSED
                var[t, lch + 1] = NODE_UNUSED
                NW_buf[node] = nwm
                S_buf[node] = Sm
                Q_buf[node] = Qm
                counts_var[v0] -= 1
                # drop the two child leaves, add the merged one
                wrote = 0
                for li in range(nl):
                    if lv_buf[li] == lch:
                        lv_buf[li] = node
                        wrote += 1
                        break
                for li in range(nl):
                    if lv_buf[li] == lch + 1:
                        lv_buf[li] = lv_buf[nl - 1]
                        nl -= 1
                        break

        else:
            # ---------------- CHANGE ----------------
            move_stats[2] += 1
            node = in_buf[rng.integers(0, ni)]
            v_old = var[t, node]
            c_old = cut[t, node]
            _ranges_into(t, node, order, seg, rlo, rhi, X, cvals, coff, rl, rh, fmn, fmx)
            sum_s = 0.0
            for v2 in range(p):
                if rh[v2] > rl[v2]:
                    sum_s += s[v2]
            uu = rng.random() * sum_s
            v_new = -1
            acc = 0.0
            for v2 in range(p):
                if rh[v2] > rl[v2]:
                    acc += s[v2]
                    v_new = v2
                    if uu < acc:
                        break
            j = rl[v_new] + rng.integers(0, rh[v_new] - rl[v_new])
            c_new = cvals[coff[v_new] + j]

            # old subtree terms: leaf likelihoods, and the variable/cut prior
            # factors of descendants (their row sets change; the changed node's
            # own factors cancel against the symmetric proposal density)
            old_ll = 0.0
            old_prior = 0.0
            sp2 = 1
            st_buf[0] = node
            while sp2 > 0:
                sp2 -= 1
                nd = st_buf[sp2]
                if var[t, nd] == NODE_LEAF:
                    if not prior_only:
                        old_ll += _leaf_ll(NW_buf[nd], S_buf[nd], Q_buf[nd], sigma2, smu2)
                    if _node_has_legal(t, nd, order, seg, rlo, rhi, Xt, cvals, coff):
                        old_prior += math.log1p(-_split_prob(_depth(nd), eta, beta))
                else:
                    if nd != node:
                        _ranges_into(
                            t, nd, order, seg, rlo, rhi, X, cvals, coff, rl2, rh2, fmn, fmx
                        )
                        ssum = 0.0
                        for v2 in range(p):
                            if rh2[v2] > rl2[v2]:
                                ssum += s[v2]
                        old_prior += (
                            math.log(s[var[t, nd]])
                            - math.log(ssum)
                            - math.log(rh2[var[t, nd]] - rl2[var[t, nd]])
                        )
                    st_buf[sp2] = 2 * nd + 2
                    sp2 += 1
                    st_buf[sp2] = 2 * nd + 1
                    sp2 += 1

            # re-route the subtree under the proposed rule into rows1 (scratch),
            # recording per-node bounds, stats, and value ranges; reject on any
            # empty child
            a0 = seg[t, node, 0]
            b0 = seg[t, node, 1]
            nnode = b0 - a0
            for ii in range(nnode):
                rows1[ii] = order[t, a0 + ii]
            sg2lo[node] = 0
            sg2hi[node] = nnode
            feasible = True
            new_ll = 0.0
            new_prior = 0.0
            sp2 = 1
            st_buf[0] = node
            while sp2 > 0 and feasible:
                sp2 -= 1
                nd = st_buf[sp2]
                lo2 = sg2lo[nd]
                hi2 = sg2hi[nd]
                if var[t, nd] == NODE_LEAF:
                    nw = 0.0
                    Ssum = 0.0
                    Qsum = 0.0
                    if wall1:
                        for ii in range(lo2, hi2):
                            row = rows1[ii]
                            r = res[row] + tf[row]
                            Ssum += r
                            Qsum += r * r
                        nw = float(hi2 - lo2)
                    else:
                        for ii in range(lo2, hi2):
                            row = rows1[ii]
                            wi = w[row]
                            r = res[row] + wi * tf[row]
                            nw += wi
                            Ssum += wi * r
                            Qsum += wi * r * r
                    NW2[nd] = nw
                    S2[nd] = Ssum
                    Q2[nd] = Qsum
                    if not prior_only:
                        new_ll += _leaf_ll(nw, Ssum, Qsum, sigma2, smu2)
                    if _rows_have_legal(rows1, lo2, hi2, Xt, cvals, coff):
                        new_prior += math.log1p(-_split_prob(_depth(nd), eta, beta))
                else:
                    vr = v_new if nd == node else var[t, nd]
                    cr = c_new if nd == node else cut[t, nd]
                    if nd != node:
                        # the changed node keeps its rows, so only descendants
                        # need fresh value ranges under the re-routed partition
                        _minmax_rows(X, rows1, lo2, hi2, rmn[nd], rmx[nd])
                        # the kept rule must stay strictly inside its new rows'
                        # value range, else the tree leaves the prior's support
                        if not (rmn[nd, vr] < cr and cr < rmx[nd, vr]):
                            feasible = False
                            break
                        # prior factors under the new row set
                        ssum = 0.0
                        ncv = 0
                        for v2 in range(p):
                            c0_ = coff[v2]
                            c1_ = coff[v2 + 1]
                            if c1_ > c0_:
                                l_ = _bisect_right(cvals, c0_, c1_, rmn[nd, v2])
                                h_ = _bisect_left(cvals, c0_, c1_, rmx[nd, v2])
                                if h_ > l_:
                                    ssum += s[v2]
                                    if v2 == vr:
                                        ncv = h_ - l_
                        if ncv == 0:
                            feasible = False
                            break
                        new_prior += math.log(s[vr]) - math.log(ssum) - math.log(ncv)
                    nleft = 0
                    for ii in range(lo2, hi2):
                        row = rows1[ii]
                        if Xt[vr, row] <= cr:
                            rows2[nleft] = row
                            nleft += 1
                    if nleft == 0 or nleft == hi2 - lo2:
                        feasible = False
                        break
                    kpos = nleft
                    for ii in range(lo2, hi2):
                        row = rows1[ii]
                        if Xt[vr, row] > cr:
                            rows2[kpos] = row
                            kpos += 1
                    for ii in range(hi2 - lo2):
                        rows1[lo2 + ii] = rows2[ii]
                    lch = 2 * nd + 1
                    sg2lo[lch] = lo2
                    sg2hi[lch] = lo2 + nleft
                    sg2lo[lch + 1] = lo2 + nleft
                    sg2hi[lch + 1] = hi2
                    st_buf[sp2] = lch + 1
                    sp2 += 1
                    st_buf[sp2] = lch
                    sp2 += 1

            if feasible:
                alpha = (new_ll - old_ll) + (new_prior - old_prior)
                if rng.random() < math.exp(min(alpha, 0.0)):
                    move_stats[5] += 1
                    var[t, node] = v_new
                    cut[t, node] = c_new
                    counts_var[v_old] -= 1
                    counts_var[v_new] += 1
                    for ii in range(nnode):
                        order[t, a0 + ii] = rows1[ii]
                    rcap = rlo.shape[1]
                    sp2 = 1
                    st_buf[0] = node
                    while sp2 > 0:
                        sp2 -= 1
                        nd = st_buf[sp2]
                        seg[t, nd, 0] = a0 + sg2lo[nd]
                        seg[t, nd, 1] = a0 + sg2hi[nd]
                        nn[t, nd] = sg2hi[nd] - sg2lo[nd]
                        if var[t, nd] == NODE_LEAF:
                            NW_buf[nd] = NW2[nd]
                            S_buf[nd] = S2[nd]
                            Q_buf[nd] = Q2[nd]
                            # leaves skipped the full range scan at proposal time
                            _store_ranges(t, nd, order, seg, rlo, rhi, X, cvals, coff, fmn, fmx)
                        else:
                            # the changed node's own rows (hence ranges) are unchanged
                            if nd != node and nd < rcap:
                                for v2 in range(p):
                                    c0_ = coff[v2]
                                    c1_ = coff[v2 + 1]
                                    if c1_ == c0_:
                                        rlo[t, nd, v2] = 0
                                        rhi[t, nd, v2] = 0
                                    else:
                                        rlo[t, nd, v2] = np.int16(
                                            _bisect_right(cvals, c0_, c1_, rmn[nd, v2]) - c0_
                                        )
                                        rhi[t, nd, v2] = np.int16(
                                            _bisect_left(cvals, c0_, c1_, rmx[nd, v2]) - c0_
                                        )
                            st_buf[sp2] = 2 * nd + 2
                            sp2 += 1
                            st_buf[sp2] = 2 * nd + 1
                            sp2 += 1

        # --- conjugate leaf redraw and fit update ---
        ssq = 0.0
        for li in range(nl):
            leaf = lv_buf[li]
            if prior_only:
                newmu = 0.0
            else:
                nw = NW_buf[leaf]
                den = nw * smu2 + sigma2
                mean = smu2 * S_buf[leaf] / den
                sd = math.sqrt(sigma2 * smu2 / den)
                newmu = mean + sd * rng.standard_normal()
            mu[t, leaf] = newmu
            ssq += newmu * newmu
            a = seg[t, leaf, 0]
            b = seg[t, leaf, 1]
            if wall1:
                for ii in range(a, b):
                    row = order[t, ii]
                    fit[row] += newmu - tf[row]
            else:
                for ii in range(a, b):
                    row = order[t, ii]
                    fit[row] += w[row] * (newmu - tf[row])
        ssq_leaf[t] = ssq


# ---------------------------------------------------------------------------
# flat-snapshot forest evaluation
# ---------------------------------------------------------------------------


@njit(cache=True)
def eval_draws(nvar, ncut, nmu, nleft, nright, tptr, n_draws, m, X, out):
    """out[d, i] = sum over trees of draw d evaluated at row i."""
    n = X.shape[0]
    for d in range(n_draws):
        base = d * m
        for i in range(n):
            acc = 0.0
            for t in range(m):
                j = tptr[base + t]
                while nvar[j] >= 0:
                    if X[i, nvar[j]] <= ncut[j]:
                        j = nleft[j]
                    else:
                        j = nright[j]
                acc += nmu[j]
            out[d, i] = acc


@njit(cache=True)
def eval_mean(nvar, ncut, nmu, nleft, nright, tptr, n_draws, m, X, out):
    """out[i] = posterior-mean forest value at row i."""
    n = X.shape[0]
    for i in range(n):
        out[i] = 0.0
    for d in range(n_draws):
        base = d * m
        for i in range(n):
            acc = 0.0
            for t in range(m):
                j = tptr[base + t]
                while nvar[j] >= 0:
                    if X[i, nvar[j]] <= ncut[j]:
                        j = nleft[j]
                    else:
                        j = nright[j]
                acc += nmu[j]
            out[i] += acc
    for i in range(n):
        out[i] /= n_draws


@njit(cache=True)
def eval_mean_probit(nvar, ncut, nmu, nleft, nright, tptr, n_draws, m, X, offset, out):
    """out[i] = mean over draws of Phi(offset + forest value at row i)."""
    n = X.shape[0]
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for i in range(n):
        out[i] = 0.0
    for d in range(n_draws):
        base = d * m
        for i in range(n):
            acc = offset
            for t in range(m):
                j = tptr[base + t]
                while nvar[j] >= 0:
                    if X[i, nvar[j]] <= ncut[j]:
                        j = nleft[j]
                    else:
                        j = nright[j]
                acc += nmu[j]
            out[i] += 0.5 * (1.0 + math.erf(acc * inv_sqrt2))
    for i in range(n):
        out[i] /= n_draws


@njit(cache=True)
def eval_diff_draws(nvar, ncut, nmu, nleft, nright, tptr, uses_col, n_draws, m, X, col, hi_val, lo_val, out):
    """out[d, i] = forest(x_i with x[col]=hi_val) - forest(x_i with x[col]=lo_val).

    Trees that never split on col contribute zero and are skipped (uses_col is
    a per-(draw, tree) flag).
    """
    n = X.shape[0]
    for d in range(n_draws):
        base = d * m
        for i in range(n):
            acc = 0.0
            for t in range(m):
                if uses_col[base + t] == 0:
                    continue
                j = tptr[base + t]
                while nvar[j] >= 0:
                    xv = hi_val if nvar[j] == col else X[i, nvar[j]]
                    if xv <= ncut[j]:
                        j = nleft[j]
                    else:
                        j = nright[j]
                acc += nmu[j]
                j = tptr[base + t]
                while nvar[j] >= 0:
                    xv = lo_val if nvar[j] == col else X[i, nvar[j]]
                    if xv <= ncut[j]:
                        j = nleft[j]
                    else:
                        j = nright[j]
                acc -= nmu[j]
            out[d, i] = acc
