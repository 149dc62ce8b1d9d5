"""Dual random fields: spatially varying linear classifiers as random fields.

A dual random field assigns to each location a linear functional
``z -> <S(u), z> + B(u)``, stored as a unit orientation ``S(u)`` on the
hypersphere and a real offset ``B(u)``. The package covers the sphere
geometry, the special functions behind the orientation covariance,
Gaussian and orientation field simulation with conditioning, distribution
mapping onto the uniform sphere law, local linear SVM calibration, and a
prospectivity-mapping workflow with a command line front end.
"""
from .anamorphosis import (PPMTState, SphereTransform, fit_sphere_transform, legendre_index,
                           ppmt_backward, ppmt_forward)
from .gaussian import (CovarianceModel, GridDomain, LagTable, MonotoneMap, SampleSet,
                       conditional_simulate_real, empirical_covariance, empirical_variogram,
                       gridded_covariance, normal_score_transform, simple_kriging_weights,
                       simulate_gaussian_grid)
from .pipeline import (FeatureStack, Realization, SuccessCurve, binarize_response,
                       calibrate_latent, etype_and_variance, evaluate_svm_rf,
                       feature_importance_maps, fit_models, ingest_grids, run_variography,
                       simulate_ensemble, success_rate_curve)
from .special import (QuadratureError, SphericalNormalParams, gamma_fn, hyp2f1,
                      sample_spherical_normal, sn_radial_cdf, uniform_radial_cdf,
                      uniform_radial_ppf, uniform_sphere_cdf)
from .sphere import (ConvergenceError, CutLocusError, exp_map, frechet_mean, geodesic_distance,
                     log_map, parallel_transport, tangent_basis)
from .spherefield import (SphereField, SphereObservations, conditional_simulate_sphere_field,
                          covariance_transform, empirical_sphere_covariance,
                          inverse_covariance_transform, simulate_uniform_sphere_field)
from .svm import (HyperplaneModel, NeighborhoodSpec, SVMConvergenceError, TrainingPoint,
                  TrainingSet, feature_importance, fit_all_locations, fit_linear_svm,
                  select_neighborhood)

__version__ = "0.1.0"
