"""Independent reference computations used by the tests."""
import numpy as np


def central_difference(f, arrays, h=1e-4):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return float(np.linalg.norm(a - n))
    return float(np.linalg.norm(a - n) / scale)


def unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)
