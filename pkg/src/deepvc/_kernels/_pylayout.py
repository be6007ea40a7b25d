"""Pure-Python twin of the compiled layout optimizer.

Same arithmetic, same order, same random stream: for a given input both
backends return identical embeddings.
"""
_MASK = 0xFFFFFFFFFFFFFFFF


def _next(state):
    x = state
    x ^= x >> 12
    x ^= (x << 25) & _MASK
    x ^= x >> 27
    return x, (x * 0x2545F4914F6CDD1D) & _MASK


def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


def optimize_layout(head_embedding, tail_embedding, head, tail, n_epochs, n_vertices,
                    epochs_per_sample, a, b, gamma, initial_alpha, negative_sample_rate,
                    move_other, rng_state):
    same = head_embedding is tail_embedding
    H = head_embedding.tolist()
    T = H if same else tail_embedding.tolist()
    head = head.tolist()
    tail = tail.tolist()
    eps = epochs_per_sample.tolist()
    eps_neg = [e / negative_sample_rate for e in eps]
    next_sample = list(eps)
    next_neg = list(eps_neg)
    dim = len(H[0]) if H else 0
    dims = range(dim)
    state = int(rng_state)
    alpha = initial_alpha

    for n in range(n_epochs):
        for i in range(len(head)):
            if next_sample[i] > n:
                continue
            j = head[i]
            k = tail[i]
            cur = H[j]
            oth = T[k]
            dist_squared = 0.0
            for d in dims:
                g = cur[d] - oth[d]
                dist_squared = dist_squared + g * g
            if dist_squared > 0.0:
                grad_coeff = -2.0 * a * b * (dist_squared ** (b - 1.0))
                grad_coeff = grad_coeff / (a * (dist_squared ** b) + 1.0)
            else:
                grad_coeff = 0.0
            for d in dims:
                g = _clip(grad_coeff * (cur[d] - oth[d]))
                cur[d] = cur[d] + g * alpha
                if move_other:
                    oth[d] = oth[d] + (-g) * alpha
            next_sample[i] = next_sample[i] + eps[i]

            n_neg = int((n - next_neg[i]) / eps_neg[i])
            for _ in range(n_neg):
                state, r = _next(state)
                k = (r >> 33) % n_vertices
                oth = T[k]
                dist_squared = 0.0
                for d in dims:
                    g = cur[d] - oth[d]
                    dist_squared = dist_squared + g * g
                if dist_squared > 0.0:
                    grad_coeff = 2.0 * gamma * b
                    grad_coeff = grad_coeff / ((0.001 + dist_squared) * (a * (dist_squared ** b) + 1.0))
                elif j == k:
                    continue
                else:
                    grad_coeff = 0.0
                for d in dims:
                    if grad_coeff > 0.0:
                        g = _clip(grad_coeff * (cur[d] - oth[d]))
                    else:
                        g = 0.0
                    cur[d] = cur[d] + g * alpha
            next_neg[i] = next_neg[i] + n_neg * eps_neg[i]
        alpha = initial_alpha * (1.0 - (n / n_epochs))

    head_embedding[...] = H
    if not same and move_other:
        tail_embedding[...] = T
    return state
