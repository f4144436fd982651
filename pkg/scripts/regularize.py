"""Sensor regularization on the 3x3 swing mesh: which sensors go and what it costs."""

import json

from slskit import experiments as ex
from slskit import plant as P

if __name__ == "__main__":
    mesh = P.swing_mesh(3, 0)
    rep = ex.run_regularization(mesh, 2 * ex.STATE_HOPS_PER_BUS_HOP, 10, h=2)
    print(json.dumps(rep.to_json(), indent=2))
    print(f"removed {list(rep.removed_sensors)}, degradation {100 * rep.degradation:.2f}%")
