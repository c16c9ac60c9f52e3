"""Pure-Python dense kernels over flat row-major float buffers.

Fallback twin of the compiled `_kernels` extension. Loop order and
accumulation order match the extension exactly so results are bit-identical.
"""

from array import array

BACKEND_NAME = "python"


def matmul(a, b, m: int, k: int, n: int):
    out = array("d", bytes(8 * m * n))
    for i in range(m):
        ai = i * k
        oi = i * n
        for t in range(k):
            x = a[ai + t]
            bt = t * n
            for j in range(n):
                out[oi + j] += x * b[bt + j]
    return out


def add(a, b):
    out = array("d", a)
    for i in range(len(b)):
        out[i] += b[i]
    return out


def relu(a):
    out = array("d", a)
    for i in range(len(out)):
        if out[i] < 0.0:
            out[i] = 0.0
    return out


def reduce_sum(a, outer: int, n_ax: int, inner: int):
    out = array("d", bytes(8 * outer * inner))
    for o in range(outer):
        base = o * n_ax * inner
        ob = o * inner
        for t in range(n_ax):
            row = base + t * inner
            for i in range(inner):
                out[ob + i] += a[row + i]
    return out


def maximum(a, b):
    out = array("d", a)
    for i in range(len(b)):
        if b[i] > out[i]:
            out[i] = b[i]
    return out


def scale(a, alpha: float):
    out = array("d", a)
    for i in range(len(out)):
        out[i] *= alpha
    return out
