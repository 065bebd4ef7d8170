"""
Training and evaluating a small network
=======================================

Generate the bundled tone-versus-noise corpus, train the reduced-width
network on a stratified 90/10 split, then score every clip and draw the ROC.
Takes a minute or two on a laptop CPU.

    python3 demos/03_train_and_evaluate.py
"""

import tempfile
from pathlib import Path

from coughscreen import resnet, trainer
from coughscreen.dataset import make_folds, parse_manifest
from coughscreen.features import FeatureConfig
from coughscreen.synthetic import make_corpus

work = Path(tempfile.mkdtemp(prefix="coughscreen-demo-"))
records = parse_manifest(make_corpus(work / "corpus", n_per_class=20, seed=7))
print(f"{len(records)} clips in {work / 'corpus'}")

fc = FeatureConfig()
tc = trainer.TrainConfig.tiny(seed=7)
store = trainer.FeatureStore(fc, tc.clip_seconds, tc.vad_threshold)

result = trainer.train(records, fc, tc, store)
print(result.log_csv())
# with only four validation clips the AUC saturates early, so the "best"
# checkpoint is an under-trained one; score the final model instead
print(f"best epoch: {result.best_epoch}")

resnet.save(result.final, work / "final.cghn")
model = resnet.load(work / "final.cghn")
ev = trainer.evaluate(model, records, fc, store)
print("confusion (tp, tn, fp, fn):", ev.confusion.counts())
for k, v in ev.summary.items():
    print(f"  {k:<12} {v:.3f}")
print(f"AUC {ev.auc:.3f}")
print("ROC points:", len(ev.roc.points))

# 5-fold cross-validation, averaged confusion matrix
plan = make_folds(records, k=5, seed=7)
cv = trainer.crossvalidate(records, plan, fc, trainer.TrainConfig.tiny(epochs=10, seed=7),
                           store=store)
print("fold-mean confusion:", cv.mean_confusion.counts())
print("fold-mean summary:", {k: round(v, 3) for k, v in cv.summary.items()})
print(f"mean fold AUC {cv.mean_auc:.3f}")
