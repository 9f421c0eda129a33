"""Classification report for the wildfire confusion counts (149, 10, 10, 241)."""

import numpy as np

from vitforge.metrics import ConfusionMatrix, classification_report, render_confusion, render_report


def main():
    cm = ConfusionMatrix(np.array([[149, 10], [10, 241]]), ["fire", "nofire"])
    rep = classification_report(cm)
    print(render_report(rep, digits=4))
    print(render_confusion(cm))
    print(f"accuracy {rep.accuracy:.6f}, fire recall {rep.classes[0].recall:.6f}, "
          f"nofire recall {rep.classes[1].recall:.6f}")


if __name__ == "__main__":
    main()
