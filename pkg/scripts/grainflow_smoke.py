"""Smoke test: synthesize, train, save, reload and gradient-check end to end.

Runs in a temporary directory and needs nothing but the Python dependencies.
It is the quickest way to see that a fresh checkout works before a long run.

Run:
  python scripts/grainflow_smoke.py

Optional env vars:
  GRAINFLOW_SMOKE_STEPS  (default: 60)
  GRAINFLOW_SMOKE_SIZE   (default: 24)
"""

from __future__ import annotations

import os
import sys
import tempfile
from pathlib import Path

from dotenv import load_dotenv

# Allow running as: `python scripts/grainflow_smoke.py`
_REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if _REPO_ROOT not in sys.path:
    sys.path.insert(0, _REPO_ROOT)

load_dotenv(override=False)


def _fail(msg: str) -> int:
    print(f"ERROR: {msg}", file=sys.stderr)
    return 1


def main() -> int:
    try:
        from src.grainflow.config.settings import get_gradcheck_config, get_training_config
        from src.grainflow.core import network as nn
        from src.grainflow.core.errors import GrainflowError
        from src.grainflow.data.dataset import load_dataset_dir, write_dataset
        from src.grainflow.data.synth import synth_dataset
        from src.grainflow.storage import model_io
        from src.grainflow.training.gradcheck import run_gradcheck
        from src.grainflow.training.trainer import Split, make_train_config, train
    except Exception as e:
        return _fail(f"grainflow import failed: {e}. Run: pip install -r requirements.txt")

    steps = int(os.environ.get("GRAINFLOW_SMOKE_STEPS", "60"))
    size = int(os.environ.get("GRAINFLOW_SMOKE_SIZE", "24"))
    defaults = get_training_config()

    try:
        with tempfile.TemporaryDirectory(prefix="grainflow-smoke-") as tmp:
            root = Path(tmp) / "data"
            write_dataset(synth_dataset(8, size, size, seed=defaults["seed"]), root)
            data = load_dataset_dir(root, size, size)

            config = nn.builtin_config("paper2conv", (1, size, size), data.class_names)
            cfg = make_train_config(
                steps=steps,
                learning_rate=defaults["learning_rate"],
                seed=defaults["seed"],
                eval_every=max(1, steps // 3),
                val_fraction=defaults["val_fraction"],
            )
            result = train(nn.init(config, defaults["seed"]), data, cfg)

            model_path = Path(tmp) / "smoke.gfm"
            model_io.save(result.network, model_path)
            if not model_io.load(model_path).parameters_equal(result.network):
                return _fail("reloaded model differs from the trained one")

            check = get_gradcheck_config()
            report = run_gradcheck(
                nn.builtin_config("paper2conv", (1, 12, 12), data.class_names),
                defaults["seed"],
                tolerance=check["tolerance"],
                step=check["step"],
                max_coords=min(check["max_coords"], 200),
            )
            if not report.passed:
                return _fail(f"gradient check failed (worst relative error {report.worst_error:.3e})")
    except GrainflowError as e:
        return _fail(str(e))

    final = result.final(Split.TRAIN)
    print("✅ grainflow smoke OK")
    print(f"- steps: {result.steps} (train={result.train_size}, val={result.val_size})")
    print(f"- final train loss/accuracy: {final.loss:.4f} / {final.accuracy:.4f}")
    print(f"- gradcheck worst relative error: {report.worst_error:.3e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
