"""Compiled inner loops shared by the endogenous market and the backtester.

Every public rule (price step, clamping, strategy selection, score updates,
order matching) is written once here and called both from the jitted loops
and from the thin Python wrappers in the other modules.

Randomness inside the loops comes from a counter-based hash: a 64-bit run key
mixed with (time, slot) through the splitmix64 finaliser. A draw is therefore a
pure function of (key, time, slot), independent of call order or chunking.
"""

from __future__ import annotations

import numba as nb
import numpy as np

# payoff schemes
WEALTH, MINORITY, DOLLAR, MAJORITY = 0, 1, 2, 3
# spread policies
SPREAD_NONE, SPREAD_FIXED, SPREAD_RATE, SPREAD_ADAPTIVE = 0, 1, 2, 3
# clearing modes
CLEAR_MM, CLEAR_MATCHED = 0, 1
# kernel fault codes
OK, ERR_POSITION, ERR_ACCOUNTING, ERR_ZERO_SUM = 0, 1, 2, 3

# float market state
F_PRICE, F_PT_PREV, F_MM_CASH, F_RATE, F_TRANSFER, F_MM_CASH_LO = 0, 1, 2, 3, 4, 5
N_FSTATE = 6
# integer market state
I_MU, I_TIME, I_MM_INV, I_LAST_A = 0, 1, 2, 3
N_ISTATE = 4

# float parameters
P_GAMMA, P_BETA, P_EPS, P_SPREAD, P_RATE, P_ETA, P_TARGET, P_TOL = range(8)
N_PRM_F = 8
# integer parameters
Q_K, Q_SCHEME, Q_ZERO, Q_CLEARING, Q_COUNT_CLAMPED, Q_SPREAD_KIND, Q_M, Q_SPREAD_SCORES = range(8)
N_PRM_I = 8

# per-step float record columns
R_PRICE_BEFORE, R_PRICE_AFTER, R_PT, R_TOTAL_W, R_MM_W, R_SPREAD, R_RATE = range(7)
N_REC_F = 7
# per-step integer record columns
S_TIME, S_A, S_BUY, S_SELL, S_FRUST, S_STATE = range(6)
N_REC_I = 6

# slot offsets for hash draws within one step
SLOT_BIT_OFFSET = 0  # slot = n_agents
SLOT_MATCH_OFFSET = 1  # slot = n_agents + 1 + i

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SH30 = np.uint64(30)
_SH27 = np.uint64(27)
_SH31 = np.uint64(31)
_SH11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _SH30)) * _MIX1
    z = (z ^ (z >> _SH27)) * _MIX2
    return z ^ (z >> _SH31)


@nb.njit(cache=True)
def hash_uniform(key, time, slot):
    """Uniform double in [0, 1) determined by (key, time, slot)."""
    z = mix64(np.uint64(key) + _GOLDEN * (np.uint64(time) + np.uint64(1)))
    z = mix64(z + _GOLDEN * (np.uint64(slot) + np.uint64(1)))
    return np.float64(z >> _SH11) * _INV53


@nb.njit(cache=True)
def two_sum_add(hi, lo, x):
    """Compensated accumulation: returns (hi', lo') with hi' + lo' ~ hi + lo + x."""
    t = hi + x
    if abs(hi) >= abs(x):
        lo += (hi - t) + x
    else:
        lo += (x - t) + hi
    return t, lo


@nb.njit(cache=True)
def price_step(price, excess_demand, gamma):
    if excess_demand > 0:
        return price + np.float64(excess_demand) ** gamma
    if excess_demand < 0:
        return price - np.float64(-excess_demand) ** gamma
    return price


@nb.njit(cache=True)
def clamp(position, proposed, max_position):
    """Drop a decision that would push |position| beyond the bound.

    Moves that shrink |position| always pass, so a position left above a
    shrunken (wealth-based) bound can still be unwound.
    """
    nxt = position + proposed
    if abs(nxt) <= max_position or abs(nxt) < abs(position):
        return proposed
    return 0


@nb.njit(cache=True)
def pick_best(scores, zero_enabled, zero_score, u):
    """Index of the highest score; index len(scores) is the 0-strategy.

    Exact ties are broken by the uniform draw u.
    """
    n = scores.shape[0]
    best = -np.inf
    count = 0
    for j in range(n):
        v = scores[j]
        if v > best:
            best = v
            count = 1
        elif v == best:
            count += 1
    if zero_enabled:
        if zero_score > best:
            best = zero_score
            count = 1
        elif zero_score == best:
            count += 1
    target = int(u * count)
    if target >= count:
        target = count - 1
    seen = 0
    for j in range(n):
        if scores[j] == best:
            if seen == target:
                return j
            seen += 1
    return n


@nb.njit(cache=True)
def score_delta(scheme, a_now, a_prev, k_prev, d_price, d_pt):
    if scheme == WEALTH:
        return k_prev * d_pt
    if scheme == MINORITY:
        return -a_now * d_price
    if scheme == DOLLAR:
        return a_prev * d_price
    return a_now * d_price


@nb.njit(cache=True)
def match_orders(actions, keys, out):
    """Balance buyers and sellers by keeping the majority-side agents with the
    smallest keys. Writes effective actions into out; returns the frustrated count."""
    n = actions.shape[0]
    n_buy = 0
    n_sell = 0
    for i in range(n):
        out[i] = actions[i]
        if actions[i] > 0:
            n_buy += 1
        elif actions[i] < 0:
            n_sell += 1
    if n_buy == n_sell:
        return 0
    if n_buy > n_sell:
        side = 1
        n_major = n_buy
        keep = n_sell
    else:
        side = -1
        n_major = n_sell
        keep = n_buy
    idx = np.empty(n_major, dtype=np.int64)
    kk = np.empty(n_major, dtype=np.float64)
    c = 0
    for i in range(n):
        if actions[i] == side:
            idx[c] = i
            kk[c] = keys[i]
            c += 1
    order = np.argsort(kk, kind="mergesort")
    for r in range(keep, n_major):
        out[idx[order[r]]] = 0
    return n_major - keep


@nb.njit(cache=True)
def run_market(
    n_steps,
    key,
    tables,
    vwealth,
    vpos,
    vlast,
    zscore,
    position,
    cash,
    cash_lo,
    wealth,
    fstate,
    istate,
    prm_f,
    prm_i,
    rec_f,
    rec_i,
    rec_offset,
    ag_start,
    ag_pos,
    ag_cash,
    ag_wealth,
    ag_act,
):
    """Advance the endogenous market by n_steps, writing one record row per step.

    Returns (fault_code, time_of_fault). All state arrays are updated in place.
    """
    n_agents = tables.shape[0]
    n_strat = tables.shape[1]
    gamma = prm_f[P_GAMMA]
    beta = prm_f[P_BETA]
    eps = prm_f[P_EPS]
    tol = prm_f[P_TOL]
    max_k = prm_i[Q_K]
    scheme = prm_i[Q_SCHEME]
    zero_enabled = prm_i[Q_ZERO] != 0
    clearing = prm_i[Q_CLEARING]
    count_clamped = prm_i[Q_COUNT_CLAMPED] != 0
    spread_kind = prm_i[Q_SPREAD_KIND]
    spread_scores = prm_i[Q_SPREAD_SCORES] != 0
    mask = (1 << prm_i[Q_M]) - 1
    ag_len = ag_pos.shape[0]

    proposed = np.zeros(n_agents, dtype=np.int64)
    clamped = np.zeros(n_agents, dtype=np.int64)
    effective = np.zeros(n_agents, dtype=np.int64)
    keys = np.zeros(n_agents, dtype=np.float64)

    for step in range(n_steps):
        t = istate[I_TIME]
        mu = istate[I_MU]
        price = fstate[F_PRICE]

        # (1)-(2) decisions and clamping
        for i in range(n_agents):
            u = hash_uniform(key, t, i)
            j = pick_best(vwealth[i], zero_enabled, zscore[i], u)
            d = 0
            if j < n_strat:
                d = np.int64(tables[i, j, mu])
            proposed[i] = d
            clamped[i] = clamp(position[i], d, max_k)

        # (3) clearing
        excess = 0
        for i in range(n_agents):
            excess += proposed[i] if count_clamped else clamped[i]
        n_frust = 0
        if clearing == CLEAR_MATCHED:
            for i in range(n_agents):
                keys[i] = hash_uniform(key, t, n_agents + SLOT_MATCH_OFFSET + i)
            n_frust = match_orders(clamped, keys, effective)
        else:
            for i in range(n_agents):
                effective[i] = clamped[i]

        # (4)-(5) prices
        price_next = price_step(price, excess, gamma)
        pt = (1.0 - beta) * price + beta * price_next
        pt_prev = fstate[F_PT_PREV]
        if t == 0:
            pt_prev = pt

        # (6) spread
        if spread_kind == SPREAD_FIXED:
            spread = prm_f[P_SPREAD]
        elif spread_kind == SPREAD_RATE:
            spread = prm_f[P_RATE] * abs(pt)
        elif spread_kind == SPREAD_ADAPTIVE:
            spread = fstate[F_RATE] * abs(pt)
        else:
            spread = 0.0

        # (7) settlement
        total_w = 0.0
        gross = 0.0
        n_buy = 0
        n_sell = 0
        eff_sum = 0
        n_trades = 0
        fault = OK
        for i in range(n_agents):
            a = effective[i]
            k_prev = position[i]
            hi, lo = two_sum_add(cash[i], cash_lo[i], -a * pt)
            hi, lo = two_sum_add(hi, lo, -abs(a) * spread)
            cash[i] = hi
            cash_lo[i] = lo
            position[i] = k_prev + a
            incremental = wealth[i] + k_prev * (pt - pt_prev) - abs(a) * spread
            w = (hi + lo) + position[i] * pt
            wealth[i] = w
            scale = abs(hi) + abs(position[i] * pt)
            if abs(w - incremental) > tol * max(1.0, scale):
                fault = ERR_ACCOUNTING
            if abs(position[i]) > max_k:
                fault = ERR_POSITION
            total_w += w
            gross += scale
            if a > 0:
                n_buy += 1
            elif a < 0:
                n_sell += 1
            eff_sum += a
            n_trades += abs(a)
        hi, lo = two_sum_add(fstate[F_MM_CASH], fstate[F_MM_CASH_LO], eff_sum * pt)
        hi, lo = two_sum_add(hi, lo, n_trades * spread)
        fstate[F_MM_CASH] = hi
        fstate[F_MM_CASH_LO] = lo
        mm_cash = hi + lo
        mm_inv = istate[I_MM_INV] - eff_sum
        mm_w = mm_cash + mm_inv * pt
        istate[I_MM_INV] = mm_inv
        gross += abs(mm_cash) + abs(mm_inv * pt)
        if abs(total_w + mm_w + fstate[F_TRANSFER]) > tol * max(1.0, gross):
            fault = ERR_ZERO_SUM
        rate_now = fstate[F_RATE]
        if spread_kind == SPREAD_ADAPTIVE:
            nxt = rate_now + prm_f[P_ETA] / n_agents * (prm_f[P_TARGET] + total_w)
            fstate[F_RATE] = nxt if nxt > 0.0 else 0.0
        elif spread_kind == SPREAD_RATE:
            rate_now = prm_f[P_RATE]

        # (8) virtual scores, price-taker semantics
        d_price = price_next - price
        d_pt = pt - pt_prev
        for i in range(n_agents):
            for j in range(n_strat):
                a_raw = np.int64(tables[i, j, mu])
                if scheme == WEALTH:
                    k_v = vpos[i, j]
                    a_v = clamp(k_v, a_raw, max_k)
                    vwealth[i, j] += k_v * d_pt
                    vpos[i, j] = k_v + a_v
                else:
                    a_v = a_raw
                    vwealth[i, j] += score_delta(
                        scheme, a_raw, vlast[i, j], 0, d_price, d_pt
                    )
                    vlast[i, j] = a_raw
                if spread_scores:
                    vwealth[i, j] -= abs(a_v) * spread
            if zero_enabled:
                zscore[i] += eps

        # (9) history
        if price_next > price:
            bit = 1
        elif price_next < price:
            bit = 0
        else:
            bit = 1 if hash_uniform(key, t, n_agents + SLOT_BIT_OFFSET) < 0.5 else 0

        row = rec_offset + step
        rec_f[row, R_PRICE_BEFORE] = price
        rec_f[row, R_PRICE_AFTER] = price_next
        rec_f[row, R_PT] = pt
        rec_f[row, R_TOTAL_W] = total_w
        rec_f[row, R_MM_W] = mm_w
        rec_f[row, R_SPREAD] = spread
        rec_f[row, R_RATE] = rate_now
        rec_i[row, S_TIME] = t
        rec_i[row, S_A] = excess
        rec_i[row, S_BUY] = n_buy
        rec_i[row, S_SELL] = n_sell
        rec_i[row, S_FRUST] = n_frust
        rec_i[row, S_STATE] = mu

        r = t - ag_start
        if r >= 0 and r < ag_len:
            for i in range(n_agents):
                ag_pos[r, i] = position[i]
                ag_cash[r, i] = cash[i] + cash_lo[i]
                ag_wealth[r, i] = wealth[i]
                ag_act[r, i] = effective[i]

        istate[I_MU] = ((mu << 1) | bit) & mask
        istate[I_TIME] = t + 1
        istate[I_LAST_A] = excess
        fstate[F_PRICE] = price_next
        fstate[F_PT_PREV] = pt

        if fault != OK:
            return fault, t
    return OK, -1


@nb.njit(cache=True)
def run_exogenous(
    closes,
    states,
    first_day,
    tables,
    keys,
    scheme,
    beta,
    fixed_k,
    initial_wealth,
    random_control,
    final_wealth,
    final_position,
    traj,
):
    """Replay every agent independently against an exogenous close series.

    Trading days are first_day .. len(closes) - 2; states[t] is the history
    index seen on day t. fixed_k < 0 selects the wealth-based position bound.
    traj has shape (n_agents, n_days) or (0, 0) to skip trajectories.
    """
    n_agents = tables.shape[0]
    n_strat = tables.shape[1]
    last = closes.shape[0] - 1
    keep_traj = traj.shape[0] > 0
    vw = np.zeros(n_strat, dtype=np.float64)
    vk = np.zeros(n_strat, dtype=np.int64)
    vlast = np.zeros(n_strat, dtype=np.int64)
    for i in range(n_agents):
        cash = initial_wealth
        k = 0
        w = initial_wealth
        for j in range(n_strat):
            vw[j] = 0.0
            vk[j] = 0
            vlast[j] = 0
        pt_prev = 0.0
        for t in range(first_day, last):
            p = closes[t]
            p_next = closes[t + 1]
            pt = (1.0 - beta) * p + beta * p_next
            if t == first_day:
                pt_prev = pt
            if fixed_k >= 0:
                bound = fixed_k
            else:
                mark = cash + k * p
                bound = int(np.floor(mark / p)) if mark > 0.0 else 0
            mu = states[t]
            if random_control:
                d = int(hash_uniform(keys[i], t, 1) * 3.0) - 1
            else:
                j = pick_best(vw, False, 0.0, hash_uniform(keys[i], t, 0))
                d = np.int64(tables[i, j, mu])
            a = clamp(k, d, bound)
            cash -= a * pt
            k += a
            w = cash + k * pt
            if keep_traj:
                traj[i, t - first_day] = w
            d_price = p_next - p
            d_pt = pt - pt_prev
            for j in range(n_strat):
                a_raw = np.int64(tables[i, j, mu])
                if scheme == WEALTH:
                    k_v = vk[j]
                    vw[j] += k_v * d_pt
                    vk[j] = k_v + clamp(k_v, a_raw, bound)
                else:
                    vw[j] += score_delta(scheme, a_raw, vlast[j], 0, d_price, d_pt)
                    vlast[j] = a_raw
            pt_prev = pt
        final_wealth[i] = w
        final_position[i] = k
