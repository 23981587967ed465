"""Per-class precision, recall and weighted F1 for a six-activity confusion matrix.

    python3 demos/activity_matrix.py
"""
from harlstm import metrics

classes = ["WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING", "STANDING", "LAYING"]
counts = [
    [476, 1, 20, 0, 0, 0],
    [20, 429, 21, 0, 0, 0],
    [14, 8, 398, 0, 0, 0],
    [0, 5, 0, 426, 33, 4],
    [0, 0, 0, 62, 473, 0],
    [0, 0, 0, 0, 0, 537],
]
cm = metrics.ConfusionMatrix(counts, classes)
scores = metrics.class_scores(cm)
for name, p, r, f in zip(classes, scores.precision, scores.recall, scores.f1):
    print(f"{name:<20} precision {100 * p:6.2f}%  recall {100 * r:6.2f}%  F1 {100 * f:6.2f}%")
print(f"accuracy {100 * scores.accuracy:.3f}%  weighted F1 {100 * scores.weighted_f1:.3f}%")
print()
print(metrics.to_delimited(cm, percent=True))
