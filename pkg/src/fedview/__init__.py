"""In-browser-style federated learning for ad viewability prediction:
from-scratch model, deterministic preprocessing, event-log replay clients,
FedAvg coordination server, differential privacy, and experiment tooling.
"""

__version__ = "0.1.0"
