"""Train the six-node movement cascade on simulated data and print its report."""
from printleak.pipeline import featurize, train_on_simulation
from printleak.simulate import SimConfig, label_trace, simulate_emissions, training_toolpath
from printleak.taxonomy import evaluate_cascade

sim = SimConfig(seed=3)
cascade = train_on_simulation(sim, frames_per_class=400)
for node, acc in cascade.accuracies.items():
    print(f"held-out {node:<7} {100 * acc:6.2f}%")

# a fresh walk the cascade has never seen
fresh = SimConfig(seed=4)
walk = training_toolpath(fresh.seed, 200, 100.0)
X, _ = featurize(simulate_emissions(walk, fresh))
labels = label_trace(walk, fresh, 100.0)
n = min(len(X), len(labels))
print()
print(evaluate_cascade(cascade, X[:n], labels[:n]).to_text())
