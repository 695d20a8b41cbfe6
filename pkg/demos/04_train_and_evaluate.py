"""End to end at desk scale: generate, train fused and image-only models, evaluate, stress.

Takes a few minutes on one CPU core. Everything lands in ./demo_run/.

    python demos/04_train_and_evaluate.py
"""
from pathlib import Path

from shorefuse.config import ModelConfig, TrainConfig
from shorefuse.data import load_dataset
from shorefuse.evaluation import evaluate
from shorefuse.harness import robustness_table, run_robustness, train
from shorefuse.plots import plot_any
from shorefuse.synthgen import generate_benchmark

out = Path("demo_run")
data = out / "data"
if not (data / "dataset.json").is_file():
    generate_benchmark(0, data, n_sequences=6, n_frames=30, resolution=(112, 112), ratios=(4, 0, 2))
seqs = load_dataset(data)
train_seqs = [s for s in seqs if s.split == "train"]
test_seqs = [s for s in seqs if s.split == "test"]
print("train:", [s.id for s in train_seqs])
print("test: ", [s.id for s in test_seqs])

fused = ModelConfig.tiny(input_size=(112, 112), feature_grid=(7, 7))
recipe = TrainConfig(iterations=200, learning_rate=0.05, lr_schedule="cosine")

for name, cfg in (("fused", fused), ("image_only", fused.replace(image_only=True))):
    result = train(train_seqs, cfg, recipe, out=out / f"{name}.ckpt", log_path=out / f"{name}.log.jsonl")
    report = evaluate(result.model, test_seqs, cfg)
    report.write(out / f"{name}_report.json")
    agg = report.aggregate
    print(f"{name:>10}: loss {result.log[0]['total']:.3f} -> {result.log[-1]['total']:.3f}, "
          f"MIoU full {agg['miou_full']:.4f}, selected {agg['miou_selected']:.4f}")
    plot_any(out / f"{name}.log.jsonl", out / name)
    if name == "fused":
        model = result.model

# Drop every seventh frame and play the clip backwards.
reports = run_robustness(model, test_seqs)
for cond, rep in reports.items():
    print(f"{cond:>14}: selected MIoU {rep.aggregate['miou_selected']:.4f}")
print(len(robustness_table(reports)), "robustness rows; plots under", out)
