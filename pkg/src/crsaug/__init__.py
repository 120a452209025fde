"""Label augmentation and two-stage training for conversational recommenders.

Modules:
  corpus    dialogue/catalog loading and context-sample preprocessing
  semindex  embedding providers and exact inner-product retrieval
  judge     relevance scoring backends, distillation, threshold filtering
  augment   synthetic dataset assembly and coverage statistics
  recmodel  two-tower softmax recommender with analytic gradients
  pipeline  two-stage training, one-stage mixing baseline, run manifests
  evalkit   recall / tail-recall / collaborative / semantic metrics
  toydata   planted-topic synthetic corpus generator
  cli       staged command-line driver
"""

__version__ = "0.1.0"
