"""Update functions and drivers built on the engine.

``bp``      residual belief propagation, parameter learning, denoising
``gibbs``   greedy colouring and the chromatic Gibbs sampler
``coem``    Co-EM label propagation on bipartite graphs
``lasso``   shooting (coordinate descent) Lasso
``gabp``    Gaussian BP linear solver
``newton``  interior-point outer loop that calls GaBP for each Newton step
"""
