from .diagnostics import ess, rhat, summarize_diagnostics
from .gibbs import FitConfig, PosteriorDraws, fit, latent_full_conditional, run_chain
from .polya_gamma import pg_mean, sample_polya_gamma
from .summaries import Summary, cell_prevalence, conditional_coverage, profile_weights, summarize
