import copy

from flsim.config import from_dict

BASE = {
    "rounds": 3,
    "model": {"kind": "logistic-regression"},
    "dataset": {"kind": "synthetic-classification", "n_samples": 200, "input_dim": 4,
                "class_count": 3},
    "partition": {"n_clients": 3, "label_alpha": 1.0, "size_alpha": 5.0},
    "optimizer": {"eta": 0.1, "E": 5, "E_max": 5},
    "network": {"latency": 1.0},
    "compute": {"t_train": 1.0},
}


def make_config(strategy="overlap", **sections):
    """A small valid config; keyword sections are merged over ``BASE``."""
    data = copy.deepcopy(BASE)
    data["strategy"] = strategy
    for key, value in sections.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    return from_dict(data)
