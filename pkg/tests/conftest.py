import numpy as np
import pytest

from tracksorter import toygen
from tracksorter.model import ModelConfig, init_model
from tracksorter.sequences import make_example, pair_tracks
from tracksorter.vocab import build_vocabulary


def micro_config(vocab_size=11, **kw):
    base = dict(vocab_size=vocab_size, d_model=8, n_heads=1, d_ff=16, n_encoder_layers=1,
                n_decoder_layers=1, max_len=64)
    base.update(kw)
    return ModelConfig(**base)


def randomized_model(cfg, seed, dtype=np.float64, scale=0.5):
    """Model with every parameter (biases and norms included) drawn at random."""
    model = init_model(cfg, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    for name, p in model.params.items():
        noise = rng.normal(0.0, scale, size=p.shape)
        if name.endswith(".gain"):
            noise += 1.0
        p.data[...] = noise.astype(dtype)
    return model


def toy_examples(n_tracks, seed, sectors=16, n_layers=8):
    det = toygen.ToyDetector(tuple(50.0 * (i + 1) for i in range(n_layers)), sectors)
    vocab = build_vocabulary(det.modules())
    event = toygen.generate_event(det, n_tracks, seed)
    pairs = pair_tracks(list(event.tracks), seed)
    return vocab, pairs, [make_example(p, vocab) for p in pairs]


@pytest.fixture
def toy_small():
    return toy_examples(20, 3)


def model_grad_error(model, batch, h=1e-6):
    """Relative error of backprop against central differences over every parameter."""
    from tracksorter.model import batch_loss
    from tracksorter.tensor import backward, finite_difference_grad, no_grad, relative_error

    model.zero_grad()
    backward(batch_loss(model, batch))
    analytic, numeric = [], []

    def f():
        with no_grad():
            return float(batch_loss(model, batch).data)

    for p in model.params.values():
        analytic.append(p.grad.ravel())
        numeric.append(finite_difference_grad(f, p.data, h).ravel())
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


PIPELINE = ("toy-gen", "ingest", "build-vocab", "train-embed", "train", "decode", "eval", "plot")


def run_pipeline(out, settings=(), stages=PIPELINE, workers=1):
    """Run CLI stages in order; stop at the first nonzero exit code."""
    from tracksorter.cli import main

    args = [a for kv in settings for a in ("--set", kv)]
    for stage in stages:
        code = main([stage, "--out", str(out), "--workers", str(workers), *args])
        if code:
            return code
    return 0


TINY = ("toy.n_train=40", "toy.n_val=10", "toy.n_test=10", "toy.sectors=16", "cbow.epochs=1",
        "model.d_model=8", "model.d_ff=16", "model.n_encoder_layers=1", "model.n_decoder_layers=1",
        "train.epochs=2", "decode.chunk_size=4")


ACCEPTANCE_LINES: list[str] = []


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
