
# coding: utf-8

# # Inference gaps and multi-sample estimators
#
# Two toy studies and one on a trained model: the bias and variance of the
# m-sample likelihood estimator, its delta-method correction, and how the
# multi-sample bound tightens as m and k grow.

# In[1]:

import numpy as np

from cdvi import inference, simulator
from cdvi import model as mdl
from cdvi.data import split, standardize


# ## Conjugate toy
#
# Prior N(0, 1), decoder N(z, 1), so log p(y = 0) = -log(4 pi) / 2 exactly.
# The importance estimate should sit within a few standard errors of it.

# In[2]:

toy = inference.conjugate_toy_model()
batch = mdl.Batch(np.zeros((1, 1)), np.zeros(1), np.ones(1, int))
est = inference.estimate_loglik(toy, batch, M=10_000)
print(est.value[0], "+/-", est.se[0], "exact", inference.ToyConfig().log_f)


# With the exact posterior as encoder, every importance weight equals p(y),
# so the gap vanishes.

# In[3]:

exact = inference.conjugate_toy_model(exact_posterior=True)
print(inference.gap_report(exact, batch, M=1000, elbo_replications=2000).to_dict())


# ## Bias and variance against m
#
# Both the IS bias and variance shrink like 1/m; the delta-method correction
# removes the leading bias term.

# In[4]:

study = inference.bias_variance_study(m_grid=(4, 16, 64, 256), replications=5000)
for m, b, d, v in zip(study.m_grid, study.is_bias, study.dvi_bias, study.is_var):
    print(f"m={m:4d}  IS bias {b: .2e}  delta bias {d: .2e}  IS var {v:.2e}")
print("slopes", study.is_bias_slope, study.is_var_slope, study.dvi_bias_slope)


# ## The bound over an (m, k) grid
#
# A briefly trained SD4 model, a fixed batch of test rows, and common random
# numbers across cells.

# In[5]:

ds = simulator.gibbs_simulate(simulator.preset("sd4", n=2000, burn_in=1000, seed=1))
idx = split(ds, 1)
scaled = standardize(ds, idx.train)
res = mdl.train(mdl.CdCvaeModel.create(1), scaled.subset(idx.train), scaled.subset(idx.validation),
                mdl.EstimatorConfig("elbo_c"), mdl.TrainConfig(max_epochs=5, patience=5))
table = inference.monotonicity_study(res.model, scaled.subset(idx.test[:10]), (1, 4, 16), (1, 4, 16),
                                     replications=5000, loglik_M=5000)
print(np.round(table.mean, 4))
print("nondecreasing:", table.nondecreasing, " log-likelihood estimate:", round(table.loglik, 4))
