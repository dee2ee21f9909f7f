# Surrogate resolution against a level 7 reference; the step keeps the
# explicit surrogate stable at level 6.
config.name = "surrogateLevel"
config.pair.server.problem.referenceLevel = 7
config.pair.server.problem.dt = 5e-5
config.sweepVariable = "surrogateLevel"
config.sweepValues = [3.0, 4.0, 5.0, 6.0]
config.strategies = ["simpleStream", "advancedStream", "fullUpdate", "partialUpdate", "combined"]
config.repetitions = 10
