import numpy as np
import pytest

from saoosc import numkit as nk


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / denom)


def fd_grads(loss_of, arrays, eps=1e-6):
    """Central finite differences of a scalar function of several numpy arrays."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + eps
            up = loss_of()
            arr[i] = orig - eps
            down = loss_of()
            arr[i] = orig
            g[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def check_op(fn, arrays, seed=0, eps=1e-6):
    """Max relative error between backprop and finite differences for ``sum(fn(*x) * R)``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn(*[nk.Tensor(a) for a in arrays])
    R = np.random.default_rng(seed).normal(size=probe.shape)

    ts = [nk.Tensor(a, requires_grad=True) for a in arrays]
    (fn(*ts) * R).sum().backward()

    def loss_of():
        return float(np.sum(fn(*[nk.Tensor(a) for a in arrays]).data * R))

    fds = fd_grads(loss_of, arrays, eps)
    return max(rel_err(np.zeros_like(g) if t.grad is None else t.grad, g) for t, g in zip(ts, fds))


def directional_check(loss_fn, named, seed=0, eps=1e-6):
    """Relative error of <grad, d> against a central difference along random ``d``."""
    rng = np.random.default_rng(seed)
    for p in named.values():
        p.grad = None
    loss_fn().backward()
    dirs = {n: rng.normal(size=p.shape) for n, p in named.items()}
    analytic = sum(float(np.sum(named[n].grad * d)) for n, d in dirs.items() if named[n].grad is not None)
    base = {n: p.data.copy() for n, p in named.items()}
    vals = []
    for sgn in (1, -1):
        for n, p in named.items():
            p.data = base[n] + sgn * eps * dirs[n]
        vals.append(float(loss_fn().data))
    for n, p in named.items():
        p.data = base[n]
    numeric = (vals[0] - vals[1]) / (2 * eps)
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# default toy regimen, trained once and cached under pytest's cache directory
# ---------------------------------------------------------------------------

REGIMEN_OVERRIDES = ["channel.snr_list=0,5,10,15,20"]


def _source_digest() -> str:
    import hashlib
    import pathlib
    import saoosc
    h = hashlib.sha256()
    for p in sorted(pathlib.Path(saoosc.__file__).parent.rglob("*.py")):
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


class Regimen:
    def __init__(self, cfg, ckpt_dir, test):
        self.cfg, self.ckpt_dir, self.test = cfg, ckpt_dir, test
        self._systems = None

    @property
    def systems(self):
        from saoosc import pipeline as P
        if self._systems is None:
            self._systems = P.load_systems(self.cfg, self.ckpt_dir)
        return self._systems


@pytest.fixture(scope="session")
def regimen(request):
    """Checkpoints for every method after the default regimen (about 20 min on first use)."""
    import time
    from saoosc import pipeline as P
    from saoosc.config import load_config
    from saoosc.metrics import fingerprint

    cfg = load_config(None, REGIMEN_OVERRIDES)
    key = f"{fingerprint(cfg.to_dict())}-{_source_digest()}"
    ckpt_dir = request.config.cache.mkdir(f"regimen-{key}")
    todo = [m for m in cfg.experiment.methods if not P.system_checkpoint_path(ckpt_dir, m).is_file()]
    if todo:
        t0 = time.time()
        train = P.load_dataset(cfg, "train")
        for m in todo:
            P.train_method(cfg, m, train, ckpt_dir)
        (ckpt_dir / "train_seconds.txt").write_text(f"{time.time() - t0:.1f}\n")
    return Regimen(cfg, ckpt_dir, P.load_dataset(cfg, "test"))


# ---------------------------------------------------------------------------
# acceptance summary
# ---------------------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
