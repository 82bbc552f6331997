"""Compare class-weighting strategies on one train/validation split:
no weights, uniform class weights (inverse-frequency balancing), the best
grid point and the Bayesian-optimization result.

    python demos/class_weights.py
"""
from tenderrisk.domain import SegmentKey
from tenderrisk.features import Featurizer, add_temporal_features, default_schema
from tenderrisk.gbdt import Hyperparams, predict_proba
from tenderrisk.imbalance import ClassWeights, Split, bayes_opt_fn, grid_search_fn, make_objective, train_weighted
from tenderrisk.labeling import derive_labels, quarter_index
from tenderrisk.metrics import full_report
from tenderrisk.synthgen import GeneratorConfig, SegmentSpec, generate_portfolio

HP = Hyperparams(num_iterations=30, num_leaves=15)

config = GeneratorConfig(seed=3, segments=(SegmentSpec(SegmentKey("BU2", "GEO4"), 700, (0.68, 0.21, 0.08, 0.03)),))
labeled = derive_labels(generate_portfolio(config)).labeled
frame = add_temporal_features(labeled)

# the last quarter before the hold-out acts as validation for the search
q = quarter_index(frame["record_date"])
train, valid = frame[q < q.min() + 9], frame[q == q.min() + 9]
featurizer = Featurizer(default_schema(labeled), seed=0)
tr = Split.from_matrix(featurizer.fit_transform(train))
va = Split.from_matrix(featurizer.transform(valid))
objective = make_objective(tr, va, hp=HP)  # weighted F1 on the validation quarter

unweighted = full_report(va.y, predict_proba(train_weighted(tr.X, tr.y, None, HP), va.X)).f1
print(f"no class weights      F1 {unweighted:.4f}")
print(f"uniform class weights F1 {objective(ClassWeights.uniform()):.4f}")

grid = grid_search_fn(objective, r=8)
print(f"grid search (35 pts)  F1 {grid.best_objective:.4f}  weights {grid.best_weights.normalized.round(3)}")

bayes = bayes_opt_fn(objective, budget=20, seed=0)
print(f"Bayesian opt (20)     F1 {bayes.best_objective:.4f}  weights {bayes.best_weights.normalized.round(3)}")
