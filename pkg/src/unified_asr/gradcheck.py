"""Finite-difference checks for every trainable operation.

Each check builds a tiny instance of one op, wraps it in a scalar loss and
compares analytic gradients with central differences.  Most ops use a
probe loss ``sum(R * output)`` with a fixed random ``R``: it exercises
every output coordinate and keeps gradients well away from the round-off
floor of the differences.  The two full-path checks push a probe loss on
the logits back through the whole model (frontend and backend).
"""

import time
from dataclasses import dataclass

import numpy as np

from . import beamform as bf
from . import features as fx
from . import neural_core as nc
from .model import ModelConfig, UnifiedModel
from .signal_sim import default_geometry

TOLERANCE = 1e-4


@dataclass
class OpResult:
    name: str
    max_rel_error: float
    num_coords: int
    seconds: float

    @property
    def passed(self):
        return bool(self.max_rel_error <= TOLERANCE)


def _rng(seed):
    return np.random.default_rng(seed)


def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _bat_params(rng, d=3, k=5, m=2, t=4):
    w, b, x = _cplx(rng, d, k, m), 0.3 * _cplx(rng, d, k), _cplx(rng, t, m, k)
    return {"w_re": w.real, "w_im": w.imag, "b_re": b.real, "b_im": b.imag, "X_re": x.real, "X_im": x.imag}


def _unpack_bat(p):
    weights = bf.BeamformerWeights(p["w_re"] + 1j * p["w_im"], p["b_re"] + 1j * p["b_im"])
    return weights, p["X_re"] + 1j * p["X_im"]


def _bat_grads(weights, x, g):
    gw, gb, gx = bf.bat_backward(weights, x, g)
    return {"w_re": gw.real, "w_im": gw.imag, "b_re": gb.real, "b_im": gb.imag, "X_re": gx.real, "X_im": gx.imag}


def check_bat(seed=0):
    rng = _rng(seed)
    params = _bat_params(rng)
    r = _cplx(rng, 4, 3, 5)

    def op(p):
        weights, x = _unpack_bat(p)
        y = bf.apply_bat(weights, x)
        loss = float(np.sum(r.real * y.real + r.imag * y.imag))
        return loss, _bat_grads(weights, x, r)

    return op, params


def check_bat_logpower(seed=0):
    rng = _rng(seed)
    params = _bat_params(rng)
    r = rng.standard_normal((4, 3, 5))

    def op(p):
        weights, x = _unpack_bat(p)
        y = bf.apply_bat(weights, x)
        power = y.real**2 + y.imag**2 + 1e-10
        loss = float(np.sum(r * np.log(power)))
        return loss, _bat_grads(weights, x, r * 2.0 * y / power)

    return op, params


def check_flstm_view(seed=0):
    rng = _rng(seed)
    params = {}
    nc.init_flstm_view(rng, params, "v", window=4, layers=2, cells=3)
    params = {k: v * 2.0 for k, v in params.items()}
    params["frames"] = rng.standard_normal((2, 12))
    r = rng.standard_normal((2, 5, 6))

    def op(p):
        out, cache = nc.run_flstm_view(p, p["frames"], 4, 2, prefix="v")
        dframes, grads = nc.flstm_view_backward(p, cache, r)
        grads["frames"] = dframes
        return float(np.sum(r * out)), grads

    return op, params


def check_mv_flstm(seed=0):
    rng = _rng(seed)
    cfg = nc.MvFlstmConfig([4, 8], [2, 4], layers=2, cells=3, input_len=16)
    params = {}
    nc.init_mv_flstm(rng, params, "fe", cfg)
    params = {k: v * 2.0 for k, v in params.items()}
    params["frames"] = rng.standard_normal((3, 16))
    r = rng.standard_normal((3, cfg.output_len))

    def op(p):
        out, caches = nc.mv_flstm_forward(cfg, p, p["frames"], prefix="fe")
        dframes, grads = nc.mv_flstm_backward(cfg, p, caches, r)
        grads["frames"] = dframes
        return float(np.sum(r * out)), grads

    return op, params


def _backend_check(seed, layers):
    rng = _rng(seed)
    cfg = nc.BackendConfig(projection_out=5, tlstm_layers=layers, tlstm_cells=4, num_classes=3)
    params = {}
    nc.init_backend(rng, params, "be", cfg, input_dim=6)
    params = {k: v * 2.0 for k, v in params.items()}
    params["feats"] = rng.standard_normal((2, 4, 6))
    r = rng.standard_normal((2, 4, 3))

    def op(p):
        logits, cache = nc.backend_forward(cfg, p, p["feats"], prefix="be")
        dfeats, grads = nc.backend_backward(cfg, p, cache, r)
        grads["feats"] = dfeats
        return float(np.sum(r * logits)), grads

    return op, params


def check_projection_classifier(seed=0):
    return _backend_check(seed, layers=0)


def check_tlstm(seed=0):
    return _backend_check(seed, layers=2)


def check_softmax_ce(seed=0):
    rng = _rng(seed)
    labels = rng.integers(0, 4, size=6)
    params = {"logits": rng.standard_normal((6, 4))}

    def op(p):
        loss, grad = nc.softmax_ce(p["logits"], labels)
        return loss, {"logits": grad}

    return op, params


def tiny_model_config(mode="unified"):
    feats = fx.FeatureConfig(num_bins=4)
    sc = nc.MvFlstmConfig([4, 8], [2, 2], layers=1, cells=3, input_len=12)
    be = nc.BackendConfig(projection_out=6, tlstm_layers=1, tlstm_cells=4, num_classes=3)
    return ModelConfig(features=feats, sc_flstm=sc, backend=be, num_directions=3, mode=mode,
                       geometry=default_geometry())


def _path_check(seed, path):
    from .model import PreparedItem

    rng = _rng(seed)
    model = UnifiedModel.create(tiny_model_config(), seed=seed)
    store = model.params
    n_frames, k = 3, 4
    labels = rng.integers(0, 3, size=n_frames)
    if path == "sc":
        item_args = {"sc_feats": rng.standard_normal((n_frames, 12))}
    else:
        item_args = {
            "aux_spec": _cplx(rng, n_frames, 3, 2, k),
            "primary_lp": rng.standard_normal((n_frames, 3, k)),
        }
    item = PreparedItem(f"gradcheck-{path}", path, labels, **item_args)
    r = rng.standard_normal((1, n_frames, 3))
    names = store.names("sc_fe" if path == "sc" else "mc_fe") + store.names("backend")

    def op(p):
        store.tensors = p
        return model.probe_loss_and_grads([item], r)

    return op, dict(store.tensors), names


def check_sc_path(seed=0):
    return _path_check(seed, "sc")


def check_mc_path(seed=0):
    return _path_check(seed, "mc")


CHECKS = {
    "bat": check_bat,
    "bat_logpower": check_bat_logpower,
    "flstm_view": check_flstm_view,
    "mv_flstm": check_mv_flstm,
    "projection_classifier": check_projection_classifier,
    "tlstm": check_tlstm,
    "softmax_ce": check_softmax_ce,
    "sc_path": check_sc_path,
    "mc_path": check_mc_path,
}


def run_gradcheck(ops=None, num_coords=200, step=1e-5, seed=0):
    """Run the named checks (default: all) and return a list of OpResult."""
    results = []
    for name in ops or CHECKS:
        t0 = time.perf_counter()
        built = CHECKS[name](seed)
        op, params = built[0], built[1]
        names = built[2] if len(built) > 2 else None
        err = nc.finite_diff_gradcheck(op, params, step=step, num_coords=num_coords, seed=seed, names=names)
        total = sum(np.size(params[n]) for n in (names or params))
        results.append(OpResult(name, float(err), min(total, num_coords), time.perf_counter() - t0))
    return results


def format_report(results):
    lines = [f"{'op':<24}{'max_rel_error':>16}{'coords':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<24}{r.max_rel_error:>16.3e}{r.num_coords:>8}  {'ok' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in results)
    lines.append(f"gradcheck {'PASSED' if ok else 'FAILED'} (tolerance {TOLERANCE:g})")
    return "\n".join(lines)
