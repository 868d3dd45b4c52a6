"""
Configuration template for deepfrc.

Load with:
    deepfrc train --config=deepfrc_config.py --data=data/ --out=runs/desk
"""

c = get_config()  # noqa

# ============================================================================
# Synthetic data (deepfrc gen)
# ============================================================================
# Start from a preset with --preset=full|desk|micro|scarce100|scarce50; values
# set here win over the preset.
# c.SynthConfig.n_samples = 1800
# c.SynthConfig.n_points = 200
# c.SynthConfig.n_train = 600
# c.SynthConfig.n_val = 200
# c.SynthConfig.n_test = 1000
# c.SynthConfig.noise_sigma = 0.0
# c.SynthConfig.warp_range = 1.5
c.SynthConfig.seed = 0

# ============================================================================
# Training (deepfrc train / tune)
# ============================================================================
c.TrainConfig.n_basis = 100
c.TrainConfig.alpha = 100.0
c.TrainConfig.beta = 10.0
c.TrainConfig.lr_reg = 1e-3
c.TrainConfig.lr_class = 1e-3
c.TrainConfig.epochs = 30
c.TrainConfig.batch_size = 64
c.TrainConfig.seed = 0

# Inverse-time learning-rate decay lr / (1 + t / c0); 0 disables it
# c.TrainConfig.decay_c0 = 0.0

# Ablations
# c.TrainConfig.freeze_warp = True            # identity warps, warp network untouched
# c.TrainConfig.beta = 0.0                    # drop the classification term
# c.TrainConfig.separation_gradient = "detach"

# ============================================================================
# Architecture
# ============================================================================
# c.WarpNet.channels = [16, 32, 64]
# c.WarpNet.kernel_size = 3
# c.WarpNet.composition = "interpolate"       # or "compose"
# c.Classifier.hidden = [8, 4]
# c.Classifier.prob_floor = 1e-4

# Basis families beyond Fourier are discovered from the "deepfrc_basis"
# entry-point group and selected by name with c.TrainConfig.basis.
# c.BasisRegistry.default_family = "fourier"

# Optional: debug logging
# c.Application.log_level = "DEBUG"
