# Violation states and points for quality bounds 2**-5 to 2**-9.
config.qMaxValues = [2.0**-5, 2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9]
config.nSeeds = 10
config.pair.server.problem.surrogateLevel = 5
config.pair.server.problem.referenceLevel = 6
config.pair.server.problem.alpha = 0.01
config.pair.server.problem.dt = 1e-4
config.pair.server.problem.nSteps = 100
