# Baseline scenario: level 5 explicit surrogate, level 6 implicit reference,
# 100 states at diffusivity 0.01, quality bound 2**-7, 1 Mbit/s with 50 ms
# latency.
config.name = "default"
config.pair.server.problem.surrogateLevel = 5
config.pair.server.problem.referenceLevel = 6
config.pair.server.problem.alpha = 0.01
config.pair.server.problem.dt = 1e-4
config.pair.server.problem.nSteps = 100
config.pair.server.quality.qMax = 2.0**-7
config.pair.server.ensemble.nMembers = 50
config.pair.channel.rate = 1e6
config.pair.channel.latency = 0.05
config.sweepVariable = "rate"
config.sweepValues = [5e4, 1e6]
config.strategies = ["simpleStream", "advancedStream", "fullUpdate", "partialUpdate", "combined"]
config.repetitions = 10
