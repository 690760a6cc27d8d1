# Computational modules: geometry, heatmaps, losses, the network, the synthetic world, evaluation and training
