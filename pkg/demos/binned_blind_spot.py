"""Why fixed bins can certify a miscalibrated model as perfect.

Builds the exact two-group dataset: half the predictions put 0.45 on the top
class but are right only 5% of the time, the other half put 0.55 and are
right 95% of the time.  Inside one bin the two biases cancel, so the binned
top-class error is exactly zero while the worst-interval error is 0.2.
"""

import numpy as np

from utilcal import (
    BinScheme,
    UtilitySpec,
    gen_two_point,
    population_uc,
    tce_binned,
    two_point_distribution,
    uc_hat,
)


def run() -> None:
    data = gen_two_point(20)
    print(f"dataset: {data.n} rows, {data.C} classes")

    group_a = np.isclose(data.probs[:, 0], 0.45)
    print(f"  group A: confidence 0.45, accuracy {np.mean(data.labels[group_a] == 0):.2f}")
    print(f"  group B: confidence 0.55, accuracy {np.mean(data.labels[~group_a] == 0):.2f}")

    scheme = BinScheme("equal-width", 3)
    print(f"\nbinned top-class error, 3 equal-width bins: {tce_binned(data, scheme)}")
    print("  -> the 0.45 and 0.55 groups share the middle bin and cancel")

    est = uc_hat(data, UtilitySpec.top_class())
    print(f"\nworst-interval top-class error: {est.value}")
    print(f"  witness interval [{est.interval[0]}, {est.interval[1]}], sign {est.sign:+d}")
    print("  -> a degenerate interval isolates one group; nothing cancels")

    pop = population_uc(two_point_distribution(), UtilitySpec.top_class())
    print(f"\nexact population value of the same quantity: {pop}")


if __name__ == "__main__":
    run()
