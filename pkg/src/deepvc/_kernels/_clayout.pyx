# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stochastic layout optimization for the 2-D manifold embedding."""
from libc.math cimport pow

ctypedef unsigned long long u64


cdef inline u64 _next(u64* state) noexcept nogil:
    cdef u64 x = state[0]
    x ^= x >> 12
    x ^= x << 25
    x ^= x >> 27
    state[0] = x
    return x * <u64>0x2545F4914F6CDD1D


cdef inline double _clip(double v) noexcept nogil:
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


def optimize_layout(double[:, ::1] head_embedding, double[:, ::1] tail_embedding,
                    int[::1] head, int[::1] tail, int n_epochs, int n_vertices,
                    double[::1] epochs_per_sample, double a, double b,
                    double gamma, double initial_alpha, double negative_sample_rate,
                    bint move_other, u64 rng_state):
    """Run ``n_epochs`` of edge-sampled SGD in place; returns the final RNG state."""
    cdef Py_ssize_t n_edges = head.shape[0]
    cdef int dim = head_embedding.shape[1]
    cdef Py_ssize_t i
    cdef int n, j, k, d, p, n_neg
    cdef double alpha = initial_alpha
    cdef double dist_squared, grad_coeff, grad_d
    cdef u64 state = rng_state
    cdef double[::1] eps_neg = epochs_per_sample.copy()
    cdef double[::1] next_sample = epochs_per_sample.copy()
    cdef double[::1] next_neg

    for i in range(n_edges):
        eps_neg[i] = epochs_per_sample[i] / negative_sample_rate
    next_neg = eps_neg.copy()

    with nogil:
        for n in range(n_epochs):
            for i in range(n_edges):
                if next_sample[i] > n:
                    continue
                j = head[i]
                k = tail[i]
                dist_squared = 0.0
                for d in range(dim):
                    grad_d = head_embedding[j, d] - tail_embedding[k, d]
                    dist_squared = dist_squared + grad_d * grad_d
                if dist_squared > 0.0:
                    grad_coeff = -2.0 * a * b * pow(dist_squared, b - 1.0)
                    grad_coeff = grad_coeff / (a * pow(dist_squared, b) + 1.0)
                else:
                    grad_coeff = 0.0
                for d in range(dim):
                    grad_d = _clip(grad_coeff * (head_embedding[j, d] - tail_embedding[k, d]))
                    head_embedding[j, d] = head_embedding[j, d] + grad_d * alpha
                    if move_other:
                        tail_embedding[k, d] = tail_embedding[k, d] + (-grad_d) * alpha
                next_sample[i] = next_sample[i] + epochs_per_sample[i]

                n_neg = <int>((n - next_neg[i]) / eps_neg[i])
                for p in range(n_neg):
                    k = <int>((_next(&state) >> 33) % <u64>n_vertices)
                    dist_squared = 0.0
                    for d in range(dim):
                        grad_d = head_embedding[j, d] - tail_embedding[k, d]
                        dist_squared = dist_squared + grad_d * grad_d
                    if dist_squared > 0.0:
                        grad_coeff = 2.0 * gamma * b
                        grad_coeff = grad_coeff / ((0.001 + dist_squared) * (a * pow(dist_squared, b) + 1.0))
                    elif j == k:
                        continue
                    else:
                        grad_coeff = 0.0
                    for d in range(dim):
                        if grad_coeff > 0.0:
                            grad_d = _clip(grad_coeff * (head_embedding[j, d] - tail_embedding[k, d]))
                        else:
                            grad_d = 0.0
                        head_embedding[j, d] = head_embedding[j, d] + grad_d * alpha
                next_neg[i] = next_neg[i] + n_neg * eps_neg[i]
            alpha = initial_alpha * (1.0 - (<double>n / <double>n_epochs))
    return state
