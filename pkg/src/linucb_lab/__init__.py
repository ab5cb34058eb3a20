"""LinUCB simulation and inference laboratory for the unit-ball action set."""
