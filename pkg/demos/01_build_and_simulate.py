"""Build the two-pipe heating field and simulate a fixed-control week-end.

Walks the model structure (state counts, coupling symmetry, pressure
law), then rolls the plant forward for 48 h with stepwise controls:
pipe 1 held at 2 kg/s, pipe 2 stepping 2 -> 5 kg/s after 10 h, heater
lift dropping 1 -> 0.5 K after 24 h.
"""

from pathlib import Path

import numpy as np

import cvheat
from cvheat import heatfield, plant

params = cvheat.HeatfieldParams(n_pi=2, n_x=3)
net = cvheat.build(params)

print(f"system: {params.n_pi} pipes x {params.n_x} CVs -> {net.n_theta} states")
print(f"per-step decision variables: {params.per_step_variable_count}")
print(f"conduction antisymmetry defect: {net.capacity_antisymmetry_defect():.2e}")
print(f"pressure law: dp = {params.pressure_coeff:.2f} * mdot^2 [Pa]")

dt = 7200.0
model = cvheat.DiscreteModel(net, dt, order=2)
n = 24  # 48 h

theta0 = np.empty(net.n_theta)
for i in range(net.n_theta):
    gi = heatfield.grid_of_state(params, i)
    theta0[i] = 323.15 if gi.kind == "pipe" else (288.15 if gi.layer == "bottom" else 286.15)

u2 = np.full(n, 2.0)
u2[5:] = 5.0  # pipe 2 steps up after 10 h
dtheta = np.full((n, 1), 1.0)
dtheta[12:] = 0.5  # heater lift halves after 24 h
traj = plant.rollout(
    model,
    (theta0, None),
    np.column_stack([np.full(n, 2.0), u2]),
    dtheta,
    np.tile([281.15, 277.15], (n, 1)),
    prices=np.full(n, 0.25),
)

exit1 = heatfield.pipe_exit_index(params, 1)
exit2 = heatfield.pipe_exit_index(params, 2)
print("\n  hour  exit1[K]  exit2[K]  theta_out[K]  pump[W]  heater[W]")
for k in range(0, n, 4):
    print(
        f"  {2 * (k + 1):4d}  {traj.theta[k][exit1]:8.2f}  {traj.theta[k][exit2]:8.2f}"
        f"  {traj.z_t[k][1]:12.2f}  {traj.pump_power_w[k]:7.1f}  {traj.heater_power_w[k]:9.1f}"
    )
print(f"\ntotal electricity cost: {traj.cost_h_eur.sum() + traj.cost_t_eur.sum():.2f} EUR")

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
np.savetxt(
    out / "open_loop_temperatures.csv",
    np.column_stack([dt * (np.arange(n) + 1), traj.theta]),
    delimiter=",",
    header="time_s," + ",".join(f"theta_cv{i + 1:02d}_K" for i in range(net.n_theta)),
    comments="",
)
print(f"wrote {out / 'open_loop_temperatures.csv'}")
